"""Halo-exchange finite-difference stencil over 1-D slab decomposition.

Acoustic wave update, 2nd order in time and 8th order in space, constant
unit velocity, zero-Dirichlet boundaries, one point source at the domain
center at t=0. The grid is sliced into x-slabs; each timestep the slab
boundary planes are put one-sidedly into both neighbors' aligned halo
regions, a single collective fence orders the exchange, and only then does
the local update run. The final field is independent of the rank count.

Per-rank field arrays live in aligned global memory, shape
(lx + 2*halo, ny, nz): x carries the exchanged halo planes, while the y/z
physical boundary is handled by padding into a local scratch array at
update time. Exchanged blocks are therefore contiguous and carry exactly
halo * ny * nz * 8 bytes each.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..collectives import ElementType, ReduceOp
from ..errors import DecompositionInvalid
from ..memory import GlobalAddress, SegmentKind
from . import kernels
from .seeding import checksum_bits, to_i64

# 8th-order central second-difference coefficients (unit spacing).
COEFFS = np.array([-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0,
                   -1.0 / 560.0])
# (velocity * dt / dx)^2 with v=1, dt=0.25, dx=1; comfortably inside CFL.
SCALE = 0.0625


@dataclass
class StencilSpec:
    grid: tuple[int, int, int]
    timesteps: int
    halo_width: int = 4

    def validate(self, nranks: int):
        nx, ny, nz = self.grid
        if min(nx, ny, nz) < 1 or self.timesteps < 0 or self.halo_width < 1:
            raise DecompositionInvalid(
                f"bad stencil spec: grid {self.grid}, steps {self.timesteps}")
        if self.halo_width != len(COEFFS) - 1:
            raise DecompositionInvalid(
                f"operator is fixed at halo width {len(COEFFS) - 1}")
        if nx // nranks < self.halo_width:
            raise DecompositionInvalid(
                f"slab of {nx // nranks} cells is thinner than the "
                f"{self.halo_width}-cell halo")


def slab_bounds(nx: int, nranks: int, rank: int) -> tuple[int, int]:
    """(first global x index, slab thickness) of one rank's slab."""
    base, rem = divmod(nx, nranks)
    lx = base + (1 if rank < rem else 0)
    x0 = rank * base + min(rank, rem)
    return x0, lx


@dataclass
class StencilResult:
    checksum: int
    interior: np.ndarray
    x0: int
    comm_bytes: int
    wall_time: float
    spec: StencilSpec = field(repr=False, default=None)


def run_stencil(rt, spec: StencilSpec) -> StencilResult:
    """Run the distributed propagation; returns this rank's slab and checksum."""
    spec.validate(rt.nranks)
    nx, ny, nz = spec.grid
    h = spec.halo_width
    rank, nranks = rt.rank, rt.nranks
    x0, lx = slab_bounds(nx, nranks, rank)
    max_lx = slab_bounds(nx, nranks, 0)[1]
    plane = ny * nz
    count = (max_lx + 2 * h) * plane

    addrs = [rt.typed_alloc(count, 8) for _ in range(2)]
    fields = []
    for addr in addrs:
        arr = np.frombuffer(rt.local_view(addr, count * 8), dtype=np.float64)
        arr[:] = 0.0
        fields.append(arr.reshape(max_lx + 2 * h, ny, nz)[:lx + 2 * h])
    scratch = np.zeros((lx + 2 * h, ny + 2 * h, nz + 2 * h))

    # Point source at the global domain center, t=0.
    cx, cy, cz = nx // 2, ny // 2, nz // 2
    if x0 <= cx < x0 + lx:
        fields[0][h + cx - x0, cy, cz] = 1.0

    plane_bytes = plane * 8
    halo_bytes = h * plane_bytes
    # Destination zones in the *neighbor's* array, expressed as this rank's
    # aligned addresses (put translates the offset onto the target rank).
    left_lx = slab_bounds(nx, nranks, rank - 1)[1] if rank > 0 else 0
    dst_left = [GlobalAddress(rank, SegmentKind.ALIGNED,
                              a.offset + (h + left_lx) * plane_bytes)
                for a in addrs]
    dst_right = [GlobalAddress(rank, SegmentKind.ALIGNED, a.offset)
                 for a in addrs]

    comm_before = rt.rma.bytes_put
    t_start = time.perf_counter()
    cur_idx = 0
    for _ in range(spec.timesteps):
        cur = fields[cur_idx]
        # --- halo exchange: one-sided puts, then the collective fence ---
        if rank != 0:
            rt.put(rank - 1, dst_left[cur_idx], cur[h:2 * h], halo_bytes)
        if rank != nranks - 1:
            rt.put(rank + 1, dst_right[cur_idx], cur[lx:lx + h], halo_bytes)
        rt.wait_all_rma()
        # --- end halo exchange ---
        scratch[:, h:h + ny, h:h + nz] = cur
        # prev doubles as out: every cell is read before it is rewritten.
        prev = fields[1 - cur_idx]
        kernels.stencil_step(scratch, prev, prev, COEFFS, SCALE)
        cur_idx = 1 - cur_idx
    rt.barrier()
    wall = time.perf_counter() - t_start

    interior = fields[cur_idx][h:h + lx].copy()
    local_sum = checksum_bits(interior)
    total = rt.allreduce(ReduceOp.SUM, ElementType.INT64, [to_i64(local_sum)], 1)
    checksum = int(total[0]) & ((1 << 64) - 1)
    return StencilResult(checksum=checksum, interior=interior, x0=x0,
                         comm_bytes=rt.rma.bytes_put - comm_before,
                         wall_time=wall, spec=spec)


def reference_stencil(spec: StencilSpec, backend: str | None = None) -> np.ndarray:
    """Serial oracle: the same propagation computed without any runtime."""
    nx, ny, nz = spec.grid
    h = spec.halo_width
    shape = (nx + 2 * h, ny, nz)
    cur = np.zeros(shape)
    prev = np.zeros(shape)
    scratch = np.zeros((nx + 2 * h, ny + 2 * h, nz + 2 * h))
    cur[h + nx // 2, ny // 2, nz // 2] = 1.0
    for _ in range(spec.timesteps):
        scratch[:, h:h + ny, h:h + nz] = cur
        kernels.stencil_step(scratch, prev, prev, COEFFS, SCALE, backend=backend)
        cur, prev = prev, cur
    return cur[h:h + nx]


def expected_comm_bytes(spec: StencilSpec, nranks: int) -> int:
    """Closed-form total put volume: 2*(n-1) halo blocks per timestep."""
    _, ny, nz = spec.grid
    return spec.timesteps * 2 * (nranks - 1) * spec.halo_width * ny * nz * 8
