"""Barrier, broadcast, and reduction over the active-message layer.

Algorithms are the classic O(log n) patterns: a dissemination barrier and
binomial trees for broadcast and reduce. The reduction tree is fixed, with
children combined in ascending round order, so floating-point results are
bitwise reproducible for a given rank count. Every message carries the
caller's (root, op, type, count) so conflicting arguments are detected on
the first tree round.

Collectives are tagged with a per-rank epoch counter; because every rank
issues the same sequence of collectives (one in flight per rank), epochs
agree globally and a fast rank's messages for the next collective park in
the state tables without disturbing the current one.
"""

from __future__ import annotations

import struct
from enum import Enum

import numpy as np

from .engine import H_BARRIER_ROUND, H_BCAST_NODE, H_REDUCE_NODE
from .errors import AgreementMismatch, ConfigInvalid, InvalidRank, RootMismatch

_BARRIER = struct.Struct("<QI")        # epoch, round
_BCAST = struct.Struct("<QIQ")         # epoch, root, nbytes
_REDUCE = struct.Struct("<QIIBBQ")     # epoch, round, root, op, et, count


class ReduceOp(Enum):
    SUM = 0
    MIN = 1
    MAX = 2
    PROD = 3


class ElementType(Enum):
    INT64 = 0
    FLOAT64 = 1
    BYTES = 2  # broadcast only: raw byte regions

    @property
    def dtype(self):
        if self is ElementType.INT64:
            return np.dtype("<i8")
        if self is ElementType.FLOAT64:
            return np.dtype("<f8")
        raise ConfigInvalid("BYTES has no element dtype; use broadcast")


_OP_FUNCS = {
    ReduceOp.SUM: np.add,
    ReduceOp.MIN: np.minimum,
    ReduceOp.MAX: np.maximum,
    ReduceOp.PROD: np.multiply,
}


def _rounds(n: int) -> int:
    r = 0
    while (1 << r) < n:
        r += 1
    return r


class Collectives:
    def __init__(self, engine):
        self.engine = engine
        self.my_rank = engine.my_rank
        self.nranks = engine.nranks
        self._epoch = 0
        self._barrier_flags: set[tuple[int, int]] = set()
        self._bcast_msgs: dict[int, tuple[int, int, bytes]] = {}
        self._reduce_msgs: dict[tuple[int, int], tuple] = {}
        engine.register(H_BARRIER_ROUND, self._on_barrier, internal=True)
        engine.register(H_BCAST_NODE, self._on_bcast, internal=True)
        engine.register(H_REDUCE_NODE, self._on_reduce, internal=True)

    def _next_epoch(self) -> int:
        self._epoch += 1
        return self._epoch

    # -- handlers -----------------------------------------------------------

    def _on_barrier(self, msg):
        epoch, k = _BARRIER.unpack(msg.payload)
        self._barrier_flags.add((epoch, k))

    def _on_bcast(self, msg):
        epoch, root, nbytes = _BCAST.unpack_from(msg.payload)
        self._bcast_msgs[epoch] = (root, nbytes, msg.payload[_BCAST.size:])

    def _on_reduce(self, msg):
        epoch, k, root, op, et, count = _REDUCE.unpack_from(msg.payload)
        self._reduce_msgs[(epoch, k)] = (
            root, op, et, count, msg.payload[_REDUCE.size:])

    # -- operations -----------------------------------------------------------

    def barrier(self):
        """No rank returns before every rank has entered."""
        epoch = self._next_epoch()
        n = self.nranks
        if n == 1:
            return
        me = self.my_rank
        for k in range(_rounds(n)):
            self.engine.request((me + (1 << k)) % n, H_BARRIER_ROUND,
                                _BARRIER.pack(epoch, k))
            key = (epoch, k)
            self.engine.wait_until(lambda: key in self._barrier_flags,
                                   what=f"barrier {epoch} round {k}")
            self._barrier_flags.discard(key)

    def broadcast(self, root: int, buf, nbytes: int):
        """After return, buf[:nbytes] on every rank equals root's input."""
        if not 0 <= root < self.nranks:
            raise InvalidRank(f"broadcast root {root} outside [0, {self.nranks})")
        view = memoryview(buf).cast("B")
        if len(view) < nbytes:
            raise AgreementMismatch(
                f"broadcast buffer holds {len(view)} < {nbytes} bytes")
        epoch = self._next_epoch()
        n = self.nranks
        if n == 1:
            return
        me = self.my_rank
        v = (me - root) % n
        if v == 0:
            data = bytes(view[:nbytes])
        else:
            self.engine.wait_until(lambda: epoch in self._bcast_msgs,
                                   what=f"broadcast {epoch}")
            sent_root, sent_n, data = self._bcast_msgs.pop(epoch)
            if sent_root != root:
                raise RootMismatch(
                    f"rank {me} called broadcast(root={root}) but received a "
                    f"tree message for root {sent_root}")
            if sent_n != nbytes:
                raise AgreementMismatch(
                    f"ranks disagree on broadcast size ({sent_n} vs {nbytes})")
            if nbytes:
                view[:nbytes] = data
        header = _BCAST.pack(epoch, root, nbytes)
        for k in range(_rounds(n)):
            span = 1 << k
            if v < span and v + span < n:
                self.engine.request((v + span + root) % n, H_BCAST_NODE,
                                    header + data)

    def reduce(self, root: int, op: ReduceOp, et: ElementType, contribution,
               count: int):
        """Elementwise combine at root; returns the array at root, None elsewhere."""
        if not 0 <= root < self.nranks:
            raise InvalidRank(f"reduce root {root} outside [0, {self.nranks})")
        if et is ElementType.BYTES:
            raise ConfigInvalid("reduce needs INT64 or FLOAT64 elements")
        acc = np.array(contribution, dtype=et.dtype).reshape(-1)
        if len(acc) != count:
            raise AgreementMismatch(
                f"contribution has {len(acc)} elements, count says {count}")
        epoch = self._next_epoch()
        n = self.nranks
        me = self.my_rank
        v = (me - root) % n
        func = _OP_FUNCS[op]
        for k in range(_rounds(n)):
            span = 1 << k
            if v % (span << 1) == 0:
                child = v + span
                if child >= n:
                    continue
                key = (epoch, k)
                self.engine.wait_until(lambda: key in self._reduce_msgs,
                                       what=f"reduce {epoch} round {k}")
                c_root, c_op, c_et, c_count, data = self._reduce_msgs.pop(key)
                if c_root != root:
                    raise RootMismatch(
                        f"ranks disagree on reduce root ({c_root} vs {root})")
                if c_op != op.value or c_et != et.value or c_count != count:
                    raise AgreementMismatch(
                        "ranks disagree on reduce op/type/count")
                child_arr = np.frombuffer(data, dtype=et.dtype)
                acc = func(acc, child_arr)  # acc left, child right: fixed order
            else:
                parent = (v - span + root) % n
                hdr = _REDUCE.pack(epoch, k, root, op.value, et.value, count)
                self.engine.request(parent, H_REDUCE_NODE, hdr + acc.tobytes())
                break
        return acc if v == 0 else None

    def allreduce(self, op: ReduceOp, et: ElementType, contribution, count: int):
        """reduce to rank 0, then broadcast; valid on every rank."""
        result = self.reduce(0, op, et, contribution, count)
        nbytes = count * et.dtype.itemsize
        buf = bytearray(result.tobytes() if self.my_rank == 0 else nbytes)
        self.broadcast(0, buf, nbytes)
        return np.frombuffer(bytes(buf), dtype=et.dtype).copy()

    def allreduce_minmax(self, value: int) -> tuple[int, int]:
        """Cheap agreement probe: (min, max) of one int64 across ranks."""
        lo = self.allreduce(ReduceOp.MIN, ElementType.INT64, [value], 1)
        hi = self.allreduce(ReduceOp.MAX, ElementType.INT64, [value], 1)
        return int(lo[0]), int(hi[0])
