"""SPMD job launcher: spawn N rank processes on this host and reap them.

Rank 0's process doubles as the bootstrap coordinator, so the launcher only
has to pick a coordinator port, export the rank environment, and prefix
each rank's output lines with its id. Exit policy: the job succeeds iff
every rank exits zero; the CLI exit code is the max of the rank codes.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import threading
from dataclasses import dataclass, field

from .config import parse_size
from .errors import NonzeroExit, SpawnFailure
from .runtime import free_port


@dataclass
class JobResult:
    exit_codes: list[int] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return bool(self.exit_codes) and all(c == 0 for c in self.exit_codes)

    @property
    def max_exit_code(self) -> int:
        return max(self.exit_codes, default=1)

    def failure_report(self) -> str:
        bad = {r: c for r, c in enumerate(self.exit_codes) if c != 0}
        return "all ranks exited 0" if not bad else f"nonzero rank exits: {bad}"


def _pump(stream, sink, prefix: str):
    for line in iter(stream.readline, b""):
        sink.write(prefix + line.decode(errors="replace"))
        sink.flush()
    stream.close()


def spawn_job(nranks: int, argv: list[str], *, env_overrides: dict | None = None,
              segment_size: int | None = None, chunk_size: int | None = None,
              verbose: bool = False, timeout: float | None = None,
              check: bool = False) -> JobResult:
    """Launch `argv` as `nranks` rank processes and wait for them."""
    if nranks < 1:
        raise SpawnFailure(f"nranks must be >= 1, got {nranks}")
    if not argv:
        raise SpawnFailure("no program given")
    coord = f"127.0.0.1:{free_port()}"
    procs = []
    pumps = []
    for rank in range(nranks):
        env = dict(os.environ)
        env.update(env_overrides or {})
        env["PGAS_RANK"] = str(rank)
        env["PGAS_NRANKS"] = str(nranks)
        env["PGAS_COORD"] = coord
        if segment_size is not None:
            env["PGAS_SEGMENT_SIZE"] = str(segment_size)
        if chunk_size is not None:
            env["PGAS_CHUNK_SIZE"] = str(chunk_size)
        if verbose:
            env["PGAS_VERBOSE"] = "1"
        try:
            proc = subprocess.Popen(argv, env=env, stdout=subprocess.PIPE,
                                    stderr=subprocess.PIPE)
        except OSError as exc:
            for p in procs:
                p.kill()
            raise SpawnFailure(f"cannot start {argv[0]!r}: {exc}") from exc
        procs.append(proc)
        for stream, sink in ((proc.stdout, sys.stdout), (proc.stderr, sys.stderr)):
            t = threading.Thread(target=_pump, args=(stream, sink, f"[rank {rank}] "),
                                 daemon=True)
            t.start()
            pumps.append(t)
    codes = []
    try:
        for proc in procs:
            codes.append(proc.wait(timeout=timeout))
    except subprocess.TimeoutExpired:
        for proc in procs:
            if proc.poll() is None:
                proc.kill()
        codes = [p.wait() for p in procs]
    for t in pumps:
        t.join(timeout=5.0)
    result = JobResult(exit_codes=codes)
    if check and not result.success:
        raise NonzeroExit(codes)
    return result


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pgas-run",
        description="Launch an SPMD job of N rank processes on this host.")
    parser.add_argument("-n", "--nranks", type=int, required=True,
                        help="number of rank processes")
    parser.add_argument("--segment-size", type=parse_size, default=None,
                        metavar="SZ", help="per-rank segment size (K/M/G suffixes)")
    parser.add_argument("--chunk-size", type=parse_size, default=None,
                        metavar="SZ", help="RMA chunk size")
    parser.add_argument("--timeout", type=float, default=None,
                        help="kill the job after this many seconds")
    parser.add_argument("--verbose", action="store_true",
                        help="ranks emit statistics at finalize")
    parser.add_argument("program", nargs=argparse.REMAINDER,
                        help="-- program and its arguments")
    args = parser.parse_args(argv)
    program = args.program
    if program and program[0] == "--":
        program = program[1:]
    if not program:
        parser.error("no program given (use: pgas-run -n 2 -- prog args)")
    try:
        result = spawn_job(args.nranks, program, segment_size=args.segment_size,
                           chunk_size=args.chunk_size, verbose=args.verbose,
                           timeout=args.timeout)
    except SpawnFailure as exc:
        print(f"pgas-run: {exc}", file=sys.stderr)
        return 127
    if not result.success:
        print(f"pgas-run: {result.failure_report()}", file=sys.stderr)
    return result.max_exit_code


if __name__ == "__main__":
    sys.exit(main())
