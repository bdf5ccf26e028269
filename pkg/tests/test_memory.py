"""Segment management: watermarks, alignment agreement, translation."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgasrt import GlobalAddress, SegmentKind, run_local
from pgasrt.errors import (
    AllocationMismatch,
    AlreadyAttached,
    ConfigInvalid,
    InvalidAllocation,
    InvalidRank,
    NotAligned,
    OutOfBounds,
    OutOfMemory,
    SegmentExhausted,
)
from pgasrt.memory import GRANULE, SegmentManager

MiB = 1024 * 1024


def solo_segment(size=MiB):
    seg = SegmentManager(0, 1)
    seg.attach(size)
    return seg


class TestAttach:
    def test_double_attach(self):
        seg = solo_segment()
        with pytest.raises(AlreadyAttached):
            seg.attach(MiB)

    def test_zero_size_rejected(self):
        seg = SegmentManager(0, 1)
        with pytest.raises(ConfigInvalid):
            seg.attach(0)

    def test_absurd_size_is_out_of_memory(self):
        seg = SegmentManager(0, 1)
        with pytest.raises(OutOfMemory):
            seg.attach(1 << 62)

    def test_ranks_own_independent_regions(self):
        def fn(rt):
            addr = rt.alloc_aligned(64)
            rt.local_view(addr, 64)[:] = bytes([rt.rank]) * 64
            rt.barrier()
            return bytes(rt.local_view(addr, 64))

        out = run_local(4, fn, segment_size=MiB)
        assert [v[0] for v in out] == [0, 1, 2, 3]


class TestAlignedAllocation:
    def test_first_allocation_at_offset_zero(self):
        seg = solo_segment()
        assert seg.alloc_aligned(1024).offset == 0

    def test_bump_rounds_to_granule(self):
        # Bump oracle: offsets advance by the request rounded up to 64, so
        # sub-granule requests land one granule apart and a 100-byte request
        # consumes two granules (allocations may never overlap).
        seg = solo_segment()
        a = seg.alloc_aligned(50)
        b = seg.alloc_aligned(100)
        c = seg.alloc_aligned(1)
        assert (a.offset, b.offset, c.offset) == (0, 64, 192)
        assert seg.aligned_watermark == 256

    def test_zero_size_rejected(self):
        seg = solo_segment()
        with pytest.raises(InvalidAllocation):
            seg.alloc_aligned(0)

    def test_exhaustion(self):
        seg = solo_segment(4096)
        seg.alloc_aligned(4096)
        with pytest.raises(SegmentExhausted):
            seg.alloc_aligned(1)

    def test_mismatched_sizes_across_ranks(self):
        def fn(rt):
            rt.alloc_aligned(1024 if rt.rank == 0 else 2048)

        with pytest.raises(AllocationMismatch):
            run_local(2, fn, segment_size=MiB)

    def test_offsets_agree_across_ranks(self):
        import random

        def fn(rt):
            rng = random.Random(42)  # same stream on every rank
            offsets = []
            for _ in range(30):
                offsets.append(rt.alloc_aligned(rng.randint(1, 8192)).offset)
            return offsets

        out = run_local(4, fn)
        assert out[0] == out[1] == out[2] == out[3]


class TestUnalignedAllocation:
    def test_carved_from_segment_end(self):
        seg = solo_segment(64 * MiB)
        addr = seg.alloc_unaligned(MiB)
        assert addr.kind == SegmentKind.UNALIGNED
        assert addr.offset == 64 * MiB - MiB
        assert seg.unaligned_watermark == addr.offset

    def test_other_ranks_unchanged(self):
        def fn(rt):
            if rt.rank == 2:
                rt.alloc_unaligned(4096)
            rt.barrier()
            return json.loads(rt.segment_stats())["unaligned_watermark"]

        out = run_local(4, fn, segment_size=MiB)
        assert out[2] == MiB - 4096
        assert out[0] == out[1] == out[3] == MiB

    def test_exhaustion_against_aligned_watermark(self):
        seg = solo_segment(4096)
        seg.alloc_aligned(2048)
        with pytest.raises(SegmentExhausted):
            seg.alloc_unaligned(4096 - 2048 + 64)


class TestTypedAlloc:
    def test_matches_aligned_alloc(self):
        a = solo_segment().typed_alloc(1000, 8)
        b = solo_segment().alloc_aligned(8000)
        assert a == b

    def test_overflow(self):
        seg = solo_segment()
        with pytest.raises(InvalidAllocation):
            seg.typed_alloc(1 << 40, 1 << 40)

    def test_zero_count(self):
        seg = solo_segment()
        with pytest.raises(InvalidAllocation):
            seg.typed_alloc(0, 8)


class TestTranslate:
    def test_offset_preserved(self):
        seg = SegmentManager(0, 4)
        seg.attach(MiB)
        addr = GlobalAddress(0, SegmentKind.ALIGNED, 4096)
        assert seg.translate(addr, 3) == GlobalAddress(3, SegmentKind.ALIGNED, 4096)

    def test_identity_to_self(self):
        seg = SegmentManager(1, 4)
        seg.attach(MiB)
        addr = GlobalAddress(1, SegmentKind.ALIGNED, 128)
        assert seg.translate(addr, 1) == addr

    def test_unaligned_refused(self):
        seg = solo_segment()
        a = seg.alloc_unaligned(64)
        with pytest.raises(NotAligned):
            seg.translate(a, 0)

    def test_bad_rank(self):
        seg = SegmentManager(0, 2)
        seg.attach(MiB)
        addr = GlobalAddress(0, SegmentKind.ALIGNED, 0)
        with pytest.raises(InvalidRank):
            seg.translate(addr, 5)
        with pytest.raises(InvalidRank):
            seg.translate(GlobalAddress(1, SegmentKind.ALIGNED, 0), 0)


class TestLocalView:
    def test_view_is_writable_and_shared(self):
        seg = solo_segment()
        addr = seg.alloc_aligned(128)
        seg.view(addr, 8)[:] = b"ABCDEFGH"
        assert seg.read_raw(addr.offset, 8) == b"ABCDEFGH"

    def test_overrun_rejected(self):
        seg = solo_segment(4096)
        addr = seg.alloc_aligned(256)
        with pytest.raises(OutOfBounds):
            seg.view(addr, 8192)

    def test_outside_any_allocation_rejected(self):
        seg = solo_segment()
        seg.alloc_aligned(64)
        with pytest.raises(OutOfBounds):
            seg.view(GlobalAddress(0, SegmentKind.ALIGNED, 4096), 8)

    def test_zero_length_is_valid_empty(self):
        seg = solo_segment()
        addr = seg.alloc_aligned(64)
        assert len(seg.view(addr, 0)) == 0

    def test_wrong_rank(self):
        seg = solo_segment()
        with pytest.raises(InvalidRank):
            seg.view(GlobalAddress(1, SegmentKind.ALIGNED, 0), 8)


class TestStats:
    def test_stats_json_fields(self):
        seg = solo_segment()
        seg.alloc_aligned(100)
        seg.alloc_unaligned(200)
        stats = json.loads(seg.stats_json())
        assert stats["capacity"] == MiB
        assert stats["aligned_watermark"] == 64 * 2  # 100 rounds to 128
        assert stats["unaligned_watermark"] == MiB - 256
        assert stats["allocations"] == 2
        assert stats["aligned_allocations"] == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(st.sampled_from(["aligned", "unaligned"]),
              st.integers(min_value=1, max_value=64 * 1024)),
    max_size=40))
def test_watermarks_and_disjointness_under_fuzz(ops):
    seg = solo_segment(2 * MiB)
    for kind, size in ops:
        try:
            if kind == "aligned":
                seg.alloc_aligned(size)
            else:
                seg.alloc_unaligned(size)
        except SegmentExhausted:
            pass
        assert 0 <= seg.aligned_watermark <= seg.unaligned_watermark <= seg.capacity
    # No two live allocations overlap.
    spans = sorted((r.address.offset, r.address.offset + r.size)
                   for r in seg.allocations())
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        assert e1 <= s2
