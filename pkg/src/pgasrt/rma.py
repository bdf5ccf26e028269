"""One-sided put/get over active messages.

A put is split into chunks (config.chunk_size) sent as PUT_CHUNK requests;
the target writes each chunk into its segment and answers the final chunk
with a PUT_ACK reply. Completion of a put therefore means *remote*
completion: the bytes are in the target's segment and acknowledged. A get
sends one GET_REQ; the target streams GET_RESP chunks back.

Errors discovered at the target (out-of-bounds ranges) travel back on the
ack and surface when the initiator waits on the handle, never
asynchronously. Transfers to the caller's own rank are plain memory copies
and produce no network traffic.
"""

from __future__ import annotations

import struct
import threading

from .engine import H_GET_REQ, H_GET_RESP, H_PUT_ACK, H_PUT_CHUNK
from .errors import InvalidRank, NotAligned, OutOfBounds
from .memory import GlobalAddress, SegmentKind

PENDING = "PENDING"
COMPLETE = "COMPLETE"

_CHUNK_HDR = struct.Struct("<BQQQII")   # kind, dest_offset, len, op_id, index, count
_PUT_ACK = struct.Struct("<QB")         # op_id, status
_GET_REQ = struct.Struct("<BQQQ")       # kind, src_offset, nbytes, op_id
_GET_HDR = struct.Struct("<QQIIB")      # op_id, dest_pos, index, count, status

_STATUS_OK = 0
_STATUS_OOB = 1


class RmaHandle:
    """Completion state of one outstanding one-sided operation."""

    __slots__ = ("id", "direction", "state", "error", "nbytes", "_event",
                 "_error_observed")

    def __init__(self, op_id: int, direction: str, nbytes: int):
        self.id = op_id
        self.direction = direction
        self.nbytes = nbytes
        self.state = PENDING
        self.error = None
        self._error_observed = False
        self._event = threading.Event()

    @property
    def done(self) -> bool:
        return self.state == COMPLETE

    def _complete(self, error=None):
        # PENDING -> COMPLETE exactly once; never reverts.
        if self.state == COMPLETE:
            return
        self.error = error
        self.state = COMPLETE
        self._event.set()


class RmaEngine:
    def __init__(self, engine, memory, config):
        self.engine = engine
        self.memory = memory
        self.chunk_size = config.chunk_size
        self.my_rank = config.my_rank
        self.nranks = config.nranks
        self._lock = threading.Lock()
        self._op_counter = 0
        self._pending: dict[int, RmaHandle] = {}
        self._get_bufs: dict[int, memoryview] = {}
        self._failed_incoming: set[tuple[int, int]] = set()
        self._unraised: list[RmaHandle] = []
        self.bytes_put = 0
        self.bytes_got = 0
        self.ops_put = 0
        self.ops_got = 0
        engine.register(H_PUT_CHUNK, self._on_put_chunk, internal=True)
        engine.register(H_PUT_ACK, self._on_put_ack, internal=True)
        engine.register(H_GET_REQ, self._on_get_req, internal=True)
        engine.register(H_GET_RESP, self._on_get_resp, internal=True)

    # -- initiator side ---------------------------------------------------------

    def _new_handle(self, direction: str, nbytes: int, track: bool) -> RmaHandle:
        with self._lock:
            self._op_counter += 1
            h = RmaHandle(self._op_counter, direction, nbytes)
            if track:
                self._pending[h.id] = h
        return h

    def _resolve(self, addr: GlobalAddress, target: int) -> GlobalAddress:
        if not 0 <= target < self.nranks:
            raise InvalidRank(f"rank {target} outside [0, {self.nranks})")
        if addr.rank == self.my_rank and target != self.my_rank:
            if addr.kind != SegmentKind.ALIGNED:
                raise NotAligned(
                    "cannot auto-translate an unaligned address to a peer; "
                    "construct the remote GlobalAddress explicitly")
            addr = GlobalAddress(target, SegmentKind.ALIGNED, addr.offset)
        if addr.rank != target:
            raise InvalidRank(
                f"destination address names rank {addr.rank}, target is {target}")
        return addr

    def put(self, target: int, dst: GlobalAddress, src, nbytes: int) -> RmaHandle:
        if nbytes < 0:
            raise OutOfBounds("negative put length")
        dst = self._resolve(dst, target)
        src = memoryview(src).cast("B")
        if len(src) < nbytes:
            raise OutOfBounds(f"source region holds {len(src)} < {nbytes} bytes")
        if nbytes == 0:
            h = self._new_handle("put", 0, track=False)
            h._complete()
            return h
        if target == self.my_rank:
            h = self._new_handle("put", nbytes, track=False)
            if not self.memory.check_range(dst.offset, nbytes):
                h._complete(OutOfBounds(
                    f"put of {nbytes} bytes at offset {dst.offset} exceeds "
                    f"the {self.memory.capacity}-byte segment"))
                self._note_error(h)
            else:
                self.memory.write_raw(dst.offset, src[:nbytes])
                self._count_put(nbytes)
                h._complete()
            return h
        h = self._new_handle("put", nbytes, track=True)
        count = (nbytes + self.chunk_size - 1) // self.chunk_size
        for i in range(count):
            lo = i * self.chunk_size
            hi = min(lo + self.chunk_size, nbytes)
            hdr = _CHUNK_HDR.pack(int(dst.kind), dst.offset + lo, hi - lo,
                                  h.id, i, count)
            self.engine.request(target, H_PUT_CHUNK, hdr + bytes(src[lo:hi]))
        return h

    def get(self, dst, target: int, src: GlobalAddress, nbytes: int) -> RmaHandle:
        if nbytes < 0:
            raise OutOfBounds("negative get length")
        src = self._resolve(src, target)
        dstview = memoryview(dst).cast("B")
        if dstview.readonly:
            raise OutOfBounds("get destination buffer is read-only")
        if len(dstview) < nbytes:
            raise OutOfBounds(f"destination holds {len(dstview)} < {nbytes} bytes")
        if nbytes == 0:
            h = self._new_handle("get", 0, track=False)
            h._complete()
            return h
        if target == self.my_rank:
            h = self._new_handle("get", nbytes, track=False)
            if not self.memory.check_range(src.offset, nbytes):
                h._complete(OutOfBounds(
                    f"get of {nbytes} bytes at offset {src.offset} exceeds "
                    f"the {self.memory.capacity}-byte segment"))
                self._note_error(h)
            else:
                dstview[:nbytes] = self.memory.read_raw(src.offset, nbytes)
                self._count_get(nbytes)
                h._complete()
            return h
        h = self._new_handle("get", nbytes, track=True)
        with self._lock:
            self._get_bufs[h.id] = dstview
        self.engine.request(
            target, H_GET_REQ,
            _GET_REQ.pack(int(src.kind), src.offset, nbytes, h.id))
        return h

    def wait(self, handle: RmaHandle):
        """Block until the handle completes, driving progress. Idempotent."""
        self.engine.wait_until(lambda: handle.done, what=f"rma op {handle.id}")
        if handle.error is not None:
            handle._error_observed = True
            raise handle.error

    def quiesce(self):
        """Wait for every operation this rank initiated; raise a stored error."""
        self.engine.wait_until(lambda: not self._pending, what="rma quiescence")
        with self._lock:
            unraised, self._unraised = self._unraised, []
        for h in unraised:
            if not h._error_observed:
                h._error_observed = True
                raise h.error

    def outstanding(self) -> int:
        return len(self._pending)

    def _note_error(self, h: RmaHandle):
        with self._lock:
            self._unraised.append(h)

    def _count_put(self, nbytes: int):
        with self._lock:
            self.ops_put += 1
            self.bytes_put += nbytes

    def _count_get(self, nbytes: int):
        with self._lock:
            self.ops_got += 1
            self.bytes_got += nbytes

    def stats(self) -> dict:
        return {
            "ops_put": self.ops_put,
            "ops_got": self.ops_got,
            "bytes_put": self.bytes_put,
            "bytes_got": self.bytes_got,
        }

    # -- target side (handlers run on the progress context) ----------------------

    def _on_put_chunk(self, msg):
        kind, dest_offset, length, op_id, index, count = _CHUNK_HDR.unpack_from(
            msg.payload)
        data = msg.payload[_CHUNK_HDR.size:]
        key = (msg.source, op_id)
        last = index == count - 1
        if key in self._failed_incoming:
            if last:
                self._failed_incoming.discard(key)
            return
        if length != len(data) or not self.memory.check_range(dest_offset, length):
            if not last:
                self._failed_incoming.add(key)
            msg.reply(H_PUT_ACK, _PUT_ACK.pack(op_id, _STATUS_OOB))
            return
        self.memory.write_raw(dest_offset, data)
        if last:
            msg.reply(H_PUT_ACK, _PUT_ACK.pack(op_id, _STATUS_OK))

    def _on_put_ack(self, msg):
        op_id, status = _PUT_ACK.unpack(msg.payload)
        with self._lock:
            h = self._pending.pop(op_id, None)
        if h is None:
            return
        if status == _STATUS_OK:
            self._count_put(h.nbytes)
            h._complete()
        else:
            h._complete(OutOfBounds(
                f"put {op_id} rejected by the target: range outside its segment"))
            self._note_error(h)

    def _on_get_req(self, msg):
        kind, src_offset, nbytes, op_id = _GET_REQ.unpack(msg.payload)
        if not self.memory.check_range(src_offset, nbytes):
            hdr = _GET_HDR.pack(op_id, 0, 0, 1, _STATUS_OOB)
            self.engine.request(msg.source, H_GET_RESP, hdr)
            return
        count = (nbytes + self.chunk_size - 1) // self.chunk_size
        for i in range(count):
            lo = i * self.chunk_size
            hi = min(lo + self.chunk_size, nbytes)
            hdr = _GET_HDR.pack(op_id, lo, i, count, _STATUS_OK)
            self.engine.request(
                msg.source, H_GET_RESP,
                hdr + self.memory.read_raw(src_offset + lo, hi - lo))

    def _on_get_resp(self, msg):
        op_id, dest_pos, index, count, status = _GET_HDR.unpack_from(msg.payload)
        data = msg.payload[_GET_HDR.size:]
        with self._lock:
            h = self._pending.get(op_id)
            buf = self._get_bufs.get(op_id)
        if h is None or buf is None:
            return
        if status != _STATUS_OK:
            with self._lock:
                self._pending.pop(op_id, None)
                self._get_bufs.pop(op_id, None)
            h._complete(OutOfBounds(
                f"get {op_id} rejected by the target: range outside its segment"))
            self._note_error(h)
            return
        buf[dest_pos:dest_pos + len(data)] = data
        if index == count - 1:  # chunks arrive in order (FIFO transport)
            with self._lock:
                self._pending.pop(op_id, None)
                self._get_bufs.pop(op_id, None)
            self._count_get(h.nbytes)
            h._complete()
