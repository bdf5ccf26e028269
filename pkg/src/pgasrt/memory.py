"""Per-rank segment management: the aligned/unaligned global-memory split.

Each rank owns one registered segment. Aligned allocations are collective:
every rank contributes the same size, offsets advance in lockstep from the
front of the segment, and the resulting offset is valid on every rank. That
offset-preservation is the whole virtual-address-alignment mechanism, so
`translate` is just a rank substitution. Unaligned allocations are local
and carve downward from the segment end; they never enter the mapping.

Allocation is bump-only: nothing is freed before runtime shutdown, which
keeps cross-rank offset agreement trivial.
"""

from __future__ import annotations

import bisect
import json
import threading
from dataclasses import dataclass
from enum import IntEnum

from .errors import (
    AlreadyAttached,
    AllocationMismatch,
    ConfigInvalid,
    InvalidAllocation,
    InvalidRank,
    NotAligned,
    OutOfBounds,
    OutOfMemory,
    SegmentExhausted,
)

GRANULE = 64  # allocation granularity, bytes


class SegmentKind(IntEnum):
    ALIGNED = 0
    UNALIGNED = 1


@dataclass(frozen=True)
class GlobalAddress:
    """A byte location in the partitioned global space."""

    rank: int
    kind: SegmentKind
    offset: int

    def __add__(self, nbytes: int) -> "GlobalAddress":
        return GlobalAddress(self.rank, self.kind, self.offset + nbytes)


@dataclass(frozen=True)
class AllocationRecord:
    address: GlobalAddress
    size: int
    collective: bool


def _round_up(n: int, granule: int = GRANULE) -> int:
    return (n + granule - 1) // granule * granule


class SegmentManager:
    """One rank's segment plus both bump watermarks.

    The collective callbacks (allreduce over int64) are injected by the
    runtime after the collectives layer exists; a 1-rank manager works
    without them.
    """

    def __init__(self, my_rank: int, nranks: int, allreduce_minmax=None):
        self.my_rank = my_rank
        self.nranks = nranks
        self._allreduce_minmax = allreduce_minmax
        self._backing: bytearray | None = None
        self.capacity = 0
        self.aligned_watermark = 0
        self.unaligned_watermark = 0
        self._records: list[AllocationRecord] = []
        self._starts: list[int] = []  # sorted allocation start offsets
        self._lock = threading.Lock()

    @property
    def attached(self) -> bool:
        return self._backing is not None

    def attach(self, size: int):
        """Register this rank's segment. Collective at the runtime level."""
        if self._backing is not None:
            raise AlreadyAttached(f"rank {self.my_rank} already owns a segment")
        if size <= 0:
            raise ConfigInvalid(f"segment size must be positive, got {size}")
        try:
            self._backing = bytearray(size)
        except (MemoryError, OverflowError) as exc:
            raise OutOfMemory(f"cannot back a {size}-byte segment") from exc
        self.capacity = size
        self.aligned_watermark = 0
        self.unaligned_watermark = size

    def _check_attached(self):
        if self._backing is None:
            raise ConfigInvalid("no segment attached")

    def _agree(self, nbytes: int):
        if self.nranks == 1 or self._allreduce_minmax is None:
            return
        lo, hi = self._allreduce_minmax(nbytes)
        if lo != hi:
            raise AllocationMismatch(
                f"ranks disagree on aligned allocation size "
                f"(min {lo}, max {hi}, rank {self.my_rank} asked {nbytes})")

    def alloc_aligned(self, nbytes: int) -> GlobalAddress:
        """Collective allocation; identical offset on every rank."""
        self._check_attached()
        if nbytes <= 0:
            raise InvalidAllocation(f"aligned allocation of {nbytes} bytes rejected")
        self._agree(nbytes)
        rounded = _round_up(nbytes)
        with self._lock:
            offset = self.aligned_watermark
            if offset + rounded > self.unaligned_watermark:
                raise self._exhausted(rounded, "aligned")
            self.aligned_watermark = offset + rounded
            addr = GlobalAddress(self.my_rank, SegmentKind.ALIGNED, offset)
            self._record(addr, nbytes, collective=True)
        return addr

    def alloc_unaligned(self, nbytes: int) -> GlobalAddress:
        """Local allocation from the segment end; invisible to other ranks."""
        self._check_attached()
        if nbytes <= 0:
            raise InvalidAllocation(f"unaligned allocation of {nbytes} bytes rejected")
        rounded = _round_up(nbytes)
        with self._lock:
            offset = self.unaligned_watermark - rounded
            if offset < self.aligned_watermark:
                raise self._exhausted(rounded, "unaligned")
            self.unaligned_watermark = offset
            addr = GlobalAddress(self.my_rank, SegmentKind.UNALIGNED, offset)
            self._record(addr, nbytes, collective=False)
        return addr

    def typed_alloc(self, count: int, element_size: int) -> GlobalAddress:
        """Aligned allocation of count x element_size bytes."""
        if count <= 0 or element_size <= 0:
            raise InvalidAllocation(
                f"typed allocation of {count} x {element_size} rejected")
        nbytes = count * element_size
        if nbytes >= 1 << 64:
            raise InvalidAllocation(
                f"{count} x {element_size} overflows a 64-bit byte count")
        return self.alloc_aligned(nbytes)

    def _record(self, addr: GlobalAddress, size: int, collective: bool):
        rec = AllocationRecord(addr, size, collective)
        i = bisect.bisect_left(self._starts, addr.offset)
        self._starts.insert(i, addr.offset)
        self._records.insert(i, rec)

    def translate(self, addr: GlobalAddress, target: int) -> GlobalAddress:
        """Map an aligned address of this rank onto a peer: offset preserved."""
        if addr.kind != SegmentKind.ALIGNED:
            raise NotAligned(
                "unaligned global memory has no cross-rank address mapping")
        if addr.rank != self.my_rank:
            raise InvalidRank(
                f"translate starts from this rank's address, not rank {addr.rank}")
        if not 0 <= target < self.nranks:
            raise InvalidRank(f"rank {target} outside [0, {self.nranks})")
        return GlobalAddress(target, SegmentKind.ALIGNED, addr.offset)

    # -- local access ---------------------------------------------------------

    def view(self, addr: GlobalAddress, nbytes: int) -> memoryview:
        """Writable view of this rank's own bytes; must sit inside an allocation."""
        self._check_attached()
        if addr.rank != self.my_rank:
            raise InvalidRank(
                f"local_view of rank {addr.rank} memory from rank {self.my_rank}")
        if nbytes < 0:
            raise OutOfBounds("negative view length")
        if nbytes == 0:
            return memoryview(self._backing)[addr.offset:addr.offset]
        end = addr.offset + nbytes
        if not self._contained(addr.offset, end):
            raise OutOfBounds(
                f"[{addr.offset}, {end}) is not inside a live allocation")
        return memoryview(self._backing)[addr.offset:end]

    def _contained(self, start: int, end: int) -> bool:
        if start < 0 or end > self.capacity:
            return False
        i = bisect.bisect_right(self._starts, start) - 1
        if i < 0:
            return False
        rec = self._records[i]
        return end <= rec.address.offset + rec.size

    # -- raw segment access for incoming RMA -----------------------------------

    def check_range(self, offset: int, nbytes: int) -> bool:
        return 0 <= offset and nbytes >= 0 and offset + nbytes <= self.capacity

    def write_raw(self, offset: int, data):
        self._backing[offset:offset + len(data)] = data

    def read_raw(self, offset: int, nbytes: int) -> bytes:
        return bytes(self._backing[offset:offset + nbytes])

    # -- introspection ----------------------------------------------------------

    def stats_json(self) -> str:
        """One JSON object with capacity, both watermarks, and counts."""
        with self._lock:
            return json.dumps({
                "rank": self.my_rank,
                "capacity": self.capacity,
                "aligned_watermark": self.aligned_watermark,
                "unaligned_watermark": self.unaligned_watermark,
                "allocations": len(self._records),
                "aligned_allocations": sum(1 for r in self._records if r.collective),
            })

    def allocations(self) -> list[AllocationRecord]:
        with self._lock:
            return list(self._records)

    def _exhausted(self, rounded: int, which: str) -> SegmentExhausted:
        gap = self.unaligned_watermark - self.aligned_watermark
        return SegmentExhausted(
            f"rank {self.my_rank}: {which} allocation of {rounded} rounded bytes "
            f"does not fit the {gap}-byte gap between watermarks")
