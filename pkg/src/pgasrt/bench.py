"""Micro-benchmarks: put/get bandwidth and latency between two ranks.

Bandwidth sweeps large messages with a window of outstanding operations;
latency measures one operation at a time over small messages, where a
put's completion is its remote acknowledgment (a full round trip). Results
are BenchRecord rows; emit_csv writes the fixed schema

    benchmark,msg_size_bytes,iterations,metric,value

`pgas-bench kernels` is a standalone extra: it times the compiled stencil
core against the numpy fallback on one process, no launcher needed.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .config import parse_size
from .errors import ConfigInvalid, IoFailure, PgasError, WrongRankCount
from .runtime import runtime_init

BW_PUT = "bw-put"
BW_GET = "bw-get"
LAT_PUT = "lat-put"
LAT_GET = "lat-get"

DEFAULT_LAT_SIZES = [8 << i for i in range(0, 11)]          # 8 B .. 8 KiB
DEFAULT_BW_SIZES = [8192 << i for i in range(0, 12)]        # 8 KiB .. 16 MiB

CSV_HEADER = "benchmark,msg_size_bytes,iterations,metric,value"


@dataclass
class BenchSpec:
    kind: str
    sizes: list[int] = field(default_factory=list)
    iterations: int = 100
    warmup: int = 10
    window: int = 64

    def validate(self):
        if self.kind not in (BW_PUT, BW_GET, LAT_PUT, LAT_GET):
            raise ConfigInvalid(f"unknown benchmark kind {self.kind!r}")
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ConfigInvalid("sizes must be positive")
        if sorted(self.sizes) != list(self.sizes):
            raise ConfigInvalid("sizes must be ascending")
        if self.iterations < 1:
            raise ConfigInvalid("iterations must be >= 1")
        if self.warmup < 0 or self.window < 1:
            raise ConfigInvalid("bad warmup/window")
        return self


@dataclass
class BenchRecord:
    benchmark: str
    msg_size_bytes: int
    iterations: int
    metric: str  # "MB_per_s" or "usec_per_op"
    value: float


def _setup_buffers(rt, max_size: int):
    addr = rt.alloc_aligned(max_size)
    view = rt.local_view(addr, max_size)
    view[:] = bytes(max_size)  # touch once so pages exist
    src = np.frombuffer(np.random.default_rng(7).bytes(max_size), dtype=np.uint8)
    dst = bytearray(max_size)
    return addr, src, dst


def run_bandwidth(rt, spec: BenchSpec) -> list[BenchRecord]:
    """Windowed streaming transfer; MB/s per message size. Rank 0 measures."""
    spec.validate()
    if rt.nranks != 2:
        raise WrongRankCount(f"bandwidth benchmark needs 2 ranks, got {rt.nranks}")
    if spec.kind not in (BW_PUT, BW_GET):
        raise ConfigInvalid(f"{spec.kind} is not a bandwidth benchmark")
    addr, src, dst = _setup_buffers(rt, max(spec.sizes))
    records = []
    for size in spec.sizes:
        rt.barrier()
        if rt.rank == 0:
            elapsed = _windowed_loop(rt, spec, addr, src, dst, size)
            mb_per_s = size * spec.iterations / elapsed / 1e6
            records.append(BenchRecord(spec.kind, size, spec.iterations,
                                       "MB_per_s", mb_per_s))
        rt.barrier()
    return records


def _windowed_loop(rt, spec, addr, src, dst, size: int) -> float:
    def issue():
        if spec.kind == BW_PUT:
            return rt.put(1, addr, src[:size], size)
        return rt.get(memoryview(dst)[:size], 1, addr, size)

    for _ in range(spec.warmup):
        rt.wait_rma(issue())
    inflight = []
    t0 = time.perf_counter()
    for _ in range(spec.iterations):
        if len(inflight) >= spec.window:
            rt.wait_rma(inflight.pop(0))
        inflight.append(issue())
    for h in inflight:
        rt.wait_rma(h)
    return time.perf_counter() - t0


def run_latency(rt, spec: BenchSpec) -> list[BenchRecord]:
    """One outstanding op at a time; microseconds per completed operation."""
    spec.validate()
    if rt.nranks != 2:
        raise WrongRankCount(f"latency benchmark needs 2 ranks, got {rt.nranks}")
    if spec.kind not in (LAT_PUT, LAT_GET):
        raise ConfigInvalid(f"{spec.kind} is not a latency benchmark")
    addr, src, dst = _setup_buffers(rt, max(spec.sizes))
    records = []
    for size in spec.sizes:
        rt.barrier()
        if rt.rank == 0:
            def issue():
                if spec.kind == LAT_PUT:
                    return rt.put(1, addr, src[:size], size)
                return rt.get(memoryview(dst)[:size], 1, addr, size)

            for _ in range(spec.warmup):
                rt.wait_rma(issue())
            t0 = time.perf_counter()
            for _ in range(spec.iterations):
                rt.wait_rma(issue())
            elapsed = time.perf_counter() - t0
            records.append(BenchRecord(spec.kind, size, spec.iterations,
                                       "usec_per_op",
                                       elapsed / spec.iterations * 1e6))
        rt.barrier()
    return records


def emit_csv(records: list[BenchRecord], path: str):
    """Deterministic CSV: header plus one row per record, sorted."""
    rows = sorted(records, key=lambda r: (r.benchmark, r.msg_size_bytes))
    try:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in rows:
                fh.write(f"{r.benchmark},{r.msg_size_bytes},{r.iterations},"
                         f"{r.metric},{r.value!r}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write CSV {path!r}: {exc}") from exc


def parse_csv(path: str) -> list[BenchRecord]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise IoFailure(f"unexpected CSV header {header!r}")
        out = []
        for line in fh:
            b, s, i, m, v = line.strip().split(",")
            out.append(BenchRecord(b, int(s), int(i), m, float(v)))
    return out


# -- kernel backend comparison (no runtime involved) ---------------------------

def run_kernel_bench(grid: tuple[int, int, int], steps: int) -> list[BenchRecord]:
    from .apps import kernels
    from .apps.stencil import COEFFS, SCALE

    nx, ny, nz = grid
    h = len(COEFFS) - 1
    rng = np.random.default_rng(3)
    records = []
    for backend in kernels.available_backends():
        cur_p = np.zeros((nx + 2 * h, ny + 2 * h, nz + 2 * h))
        cur_p[h:h + nx, h:h + ny, h:h + nz] = rng.random((nx, ny, nz))
        prev = np.zeros((nx + 2 * h, ny, nz))
        kernels.stencil_step(cur_p, prev, prev, COEFFS, SCALE, backend=backend)
        t0 = time.perf_counter()
        for _ in range(steps):
            kernels.stencil_step(cur_p, prev, prev, COEFFS, SCALE, backend=backend)
        elapsed = time.perf_counter() - t0
        cells_per_s = nx * ny * nz * steps / elapsed
        records.append(BenchRecord(f"kernel-stencil-{backend}", nx * ny * nz * 8,
                                   steps, "cells_per_s", cells_per_s))
    return records


# -- CLI -----------------------------------------------------------------------

def _sizes_arg(text: str) -> list[int]:
    return [parse_size(tok) for tok in text.split(",") if tok]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pgas-bench",
        description="Point-to-point micro-benchmarks (run under pgas-run -n 2) "
                    "and a standalone stencil-kernel comparison.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in (BW_PUT, BW_GET, LAT_PUT, LAT_GET):
        p = sub.add_parser(kind)
        p.add_argument("--sizes", type=_sizes_arg, default=None,
                       help="comma-separated byte sizes, K/M/G suffixes ok")
        p.add_argument("--iters", type=int, default=None)
        p.add_argument("--warmup", type=int, default=None)
        p.add_argument("--window", type=int, default=64)
        p.add_argument("--csv", default=None, metavar="PATH")
        p.set_defaults(kind=kind)
    pk = sub.add_parser("kernels", help="compare compiled vs numpy stencil core")
    pk.add_argument("--grid", default="96,64,64")
    pk.add_argument("--steps", type=int, default=10)
    pk.add_argument("--csv", default=None, metavar="PATH")

    args = parser.parse_args(argv)
    if args.command == "kernels":
        grid = tuple(int(x) for x in args.grid.split(","))
        records = run_kernel_bench(grid, args.steps)
        for r in records:
            print(f"{r.benchmark}: {r.value:.3e} {r.metric}")
        if args.csv:
            emit_csv(records, args.csv)
        return 0

    bandwidth = args.kind in (BW_PUT, BW_GET)
    spec = BenchSpec(
        kind=args.kind,
        sizes=args.sizes or (DEFAULT_BW_SIZES if bandwidth else DEFAULT_LAT_SIZES),
        iterations=args.iters or (40 if bandwidth else 2000),
        warmup=args.warmup if args.warmup is not None else (8 if bandwidth else 100),
        window=args.window,
    )
    try:
        rt = runtime_init()
    except PgasError as exc:
        print(f"pgas-bench: {exc} (run under pgas-run -n 2)", file=sys.stderr)
        return 2
    try:
        runner = run_bandwidth if bandwidth else run_latency
        records = runner(rt, spec)
        if rt.rank == 0:
            for r in records:
                print(f"{r.benchmark} size={r.msg_size_bytes}: "
                      f"{r.value:.3f} {r.metric}")
            if args.csv:
                emit_csv(records, args.csv)
    finally:
        rt.finalize()
    return 0


if __name__ == "__main__":
    sys.exit(main())
