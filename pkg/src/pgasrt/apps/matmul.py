"""Ring-exchange distributed matrix multiplication with comm/compute overlap.

C = A x B for square seeded matrices of global dimension block_dim * nranks.
Each rank keeps its A row stripe resident in private memory; B row stripes
circulate around the ring for nranks steps. A double buffer holds the
circulating stripe: while the local multiply reads the compute stripe, the
outgoing put deposits that same stripe into the successor's receive stripe,
so communication hides behind computation. The collective RMA fence then
publishes the incoming stripe and the buffers swap parity.

Matrix entries are pure functions of (seed, global row, global col), so a
fixed global dimension yields the same C no matter how many ranks computed
it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..collectives import ElementType, ReduceOp
from ..errors import DimensionMismatch
from . import seeding


@dataclass
class MatSpec:
    block_dim: int          # per-rank stripe height; global dim = block_dim * nranks
    seed: int = 1234


class DoubleBuffer:
    """Two stripe buffers: one computed on, one receiving the next stripe."""

    def __init__(self, arrays, addrs):
        self._arrays = arrays
        self._addrs = addrs
        self._parity = 0

    @property
    def compute(self):
        return self._arrays[self._parity]

    @property
    def receive_addr(self):
        return self._addrs[1 - self._parity]

    def swap(self):
        self._parity = 1 - self._parity


@dataclass
class MatResult:
    checksum: int           # bit-pattern hash of the local C stripe sum
    value_sum: float        # float checksum: sum of all C entries
    c_stripe: np.ndarray
    comm_bytes: int
    wall_time: float
    step_stripe_sums: list  # bit hash of the compute stripe at each step


def ring_matmul(rt, spec: MatSpec) -> MatResult:
    """Multiply the seeded matrices; rank r returns C rows [r*b, (r+1)*b)."""
    b = spec.block_dim
    n = rt.nranks
    if b < 1:
        raise DimensionMismatch(f"block_dim must be >= 1, got {b}")
    N = b * n
    r = rt.rank
    stripe_bytes = b * N * 8

    a_stripe = seeding.matrix_rows(spec.seed, seeding.SALT_A, r * b, b, N)
    addrs = [rt.typed_alloc(b * N, 8) for _ in range(2)]
    arrays = [
        np.frombuffer(rt.local_view(a, stripe_bytes), dtype=np.float64
                      ).reshape(b, N)
        for a in addrs
    ]
    buf = DoubleBuffer(arrays, addrs)
    buf.compute[:] = seeding.matrix_rows(spec.seed, seeding.SALT_B, r * b, b, N)
    c_stripe = np.zeros((b, N))

    comm_before = rt.rma.bytes_put
    successor = (r + 1) % n
    stripe_sums = []
    t_start = time.perf_counter()
    for step in range(n):
        k = (r - step) % n  # which B row block this rank multiplies now
        stripe_sums.append(seeding.checksum_bits(buf.compute))
        if step < n - 1:
            # Overlap: launch the put, then multiply while it drains.
            rt.put(successor, buf.receive_addr, buf.compute, stripe_bytes)
        c_stripe += a_stripe[:, k * b:(k + 1) * b] @ buf.compute
        if step < n - 1:
            rt.wait_all_rma()
            buf.swap()
    rt.barrier()
    wall = time.perf_counter() - t_start

    local_bits = seeding.checksum_bits(c_stripe)
    bits = rt.allreduce(ReduceOp.SUM, ElementType.INT64,
                        [seeding.to_i64(local_bits)], 1)
    vals = rt.allreduce(ReduceOp.SUM, ElementType.FLOAT64,
                        [float(c_stripe.sum())], 1)
    return MatResult(
        checksum=int(bits[0]) & ((1 << 64) - 1),
        value_sum=float(vals[0]),
        c_stripe=c_stripe,
        comm_bytes=rt.rma.bytes_put - comm_before,
        wall_time=wall,
        step_stripe_sums=stripe_sums,
    )
