"""Runtime facade: lifecycle plus the user-facing PGAS operations.

runtime_init wires the stack bottom-up: transport, active-message engine,
collectives, segment manager, RMA, and the distributed lock, then performs
the collective wireup and segment attach. Application handlers must be
supplied to runtime_init because registration is only legal before wireup
completes.

run_local launches an SPMD world of rank *threads* inside this process,
over either the deterministic in-process transport or real loopback
sockets. It is the harness tests and single-host experiments use; the
process-per-rank path lives in pgasrt.launch.
"""

from __future__ import annotations

import json
import socket as _socket
import sys
import threading
import warnings

from .collectives import Collectives, ElementType, ReduceOp
from .config import RuntimeConfig
from .dlock import LockManager
from .engine import AmEngine, AmToken
from .errors import ConfigInvalid, OutstandingOperations, PgasError
from .memory import GlobalAddress, SegmentManager
from .rma import RmaEngine, RmaHandle
from .transport import InprocFabric, make_transport


class Runtime:
    """One rank's view of the job. Obtain via runtime_init()."""

    def __init__(self, config: RuntimeConfig, engine: AmEngine,
                 memory: SegmentManager, rma: RmaEngine,
                 collectives: Collectives, locks: LockManager):
        self.config = config
        self.engine = engine
        self.memory = memory
        self.rma = rma
        self.collectives = collectives
        self.locks = locks
        self._finalized = False

    @property
    def rank(self) -> int:
        return self.config.my_rank

    @property
    def nranks(self) -> int:
        return self.config.nranks

    # -- active messages -------------------------------------------------------

    def register_handler(self, handler_id: int, fn):
        self.engine.register(handler_id, fn)

    def am_request(self, target: int, handler_id: int, payload: bytes = b"") -> AmToken:
        return self.engine.request(target, handler_id, payload, enforce_limit=True)

    def am_reply(self, token: AmToken, handler_id: int, payload: bytes = b""):
        self.engine.reply(token, handler_id, payload)

    def progress(self) -> int:
        return self.engine.progress()

    def service_one(self, source: int, timeout: float = 5.0) -> bool:
        """Deterministically deliver one envelope from `source` (in-process)."""
        return self.engine.service_one_from(source, timeout)

    # -- memory ------------------------------------------------------------------

    def alloc_aligned(self, nbytes: int) -> GlobalAddress:
        return self.memory.alloc_aligned(nbytes)

    def alloc_unaligned(self, nbytes: int) -> GlobalAddress:
        return self.memory.alloc_unaligned(nbytes)

    def typed_alloc(self, count: int, element_size: int) -> GlobalAddress:
        return self.memory.typed_alloc(count, element_size)

    def translate(self, addr: GlobalAddress, target: int) -> GlobalAddress:
        return self.memory.translate(addr, target)

    def local_view(self, addr: GlobalAddress, nbytes: int) -> memoryview:
        return self.memory.view(addr, nbytes)

    def segment_stats(self) -> str:
        return self.memory.stats_json()

    # -- one-sided RMA --------------------------------------------------------------

    def put(self, target: int, dst: GlobalAddress, src, nbytes: int) -> RmaHandle:
        return self.rma.put(target, dst, src, nbytes)

    def get(self, dst, target: int, src: GlobalAddress, nbytes: int) -> RmaHandle:
        return self.rma.get(dst, target, src, nbytes)

    def wait_rma(self, handle: RmaHandle):
        self.rma.wait(handle)

    def wait_all_rma(self):
        """Local RMA quiescence, then a barrier: the collective fence."""
        self.rma.quiesce()
        self.collectives.barrier()

    # -- collectives -------------------------------------------------------------------

    def barrier(self):
        self.collectives.barrier()

    def broadcast(self, root: int, buf, nbytes: int):
        self.collectives.broadcast(root, buf, nbytes)

    def reduce(self, root: int, op: ReduceOp, et: ElementType, contribution,
               count: int):
        return self.collectives.reduce(root, op, et, contribution, count)

    def allreduce(self, op: ReduceOp, et: ElementType, contribution, count: int):
        return self.collectives.allreduce(op, et, contribution, count)

    # -- distributed lock ---------------------------------------------------------------

    def lock(self, target: int):
        self.locks.lock(target)

    def unlock(self, target: int):
        self.locks.unlock(target)

    def lockt(self, target: int):
        self.locks.lockt(target)

    def unlockt(self, target: int):
        self.locks.unlockt(target)

    # -- lifecycle -----------------------------------------------------------------------

    def stats(self) -> dict:
        return {
            "rank": self.rank,
            "transport": self.engine.stats(),
            "rma": self.rma.stats(),
            "lock": self.locks.stats(),
        }

    def finalize(self, strict: bool | None = None):
        """Collective teardown: implicit barrier, then close the transport."""
        if self._finalized:
            raise ConfigInvalid(f"rank {self.rank}: runtime already finalized")
        strict = self.config.strict_finalize if strict is None else strict
        pending = self.rma.outstanding()
        held = self.locks.held_locks()
        if pending or held:
            note = (f"rank {self.rank} finalizing with {pending} outstanding "
                    f"RMA handle(s) and held locks {sorted(held)}")
            if strict:
                raise OutstandingOperations(note)
            warnings.warn(note, RuntimeWarning, stacklevel=2)
        self.collectives.barrier()
        self._finalized = True
        if self.config.verbose:
            print(f"[pgas {self.rank}] stats: {json.dumps(self.stats())}",
                  file=sys.stderr)
        self.engine.stop()
        self.engine.transport.close()

    def abort(self):
        """Tear down without collectives; wakes peers blocked on this rank."""
        self._finalized = True
        self.engine.stop()
        self.engine.transport.abort()

    @property
    def finalized(self) -> bool:
        return self._finalized


def runtime_init(config: RuntimeConfig | None = None, app_handlers=None,
                 fabric: InprocFabric | None = None) -> Runtime:
    """Bring up one rank: wireup, reserved handlers, collective segment attach.

    app_handlers maps handler ids (>= 16) to callables `fn(msg)`; it may also
    be a callable `rank -> dict` for per-rank handler closures. Registration
    happens here because it must precede wireup.
    """
    if config is None:
        config = RuntimeConfig.from_env()
    config.validate()
    transport = make_transport(config, fabric)
    engine = AmEngine(config, transport)
    try:
        collectives = Collectives(engine)
        memory = SegmentManager(config.my_rank, config.nranks,
                                allreduce_minmax=collectives.allreduce_minmax)
        rma = RmaEngine(engine, memory, config)
        locks = LockManager(engine)
        if callable(app_handlers):
            app_handlers = app_handlers(config.my_rank)
        for handler_id, fn in (app_handlers or {}).items():
            engine.register(handler_id, fn)
        transport.wireup()
        engine.mark_wired()
        engine.start()
        if config.nranks > 1:
            lo, hi = collectives.allreduce_minmax(config.segment_size)
            if lo != hi:
                raise ConfigInvalid(
                    f"ranks disagree on segment size (min {lo}, max {hi})")
        memory.attach(config.segment_size)
        collectives.barrier()  # attach is collective: nobody proceeds early
    except BaseException:
        engine.stop()
        transport.close()
        raise
    return Runtime(config, engine, memory, rma, collectives, locks)


def free_port(host: str = "127.0.0.1") -> int:
    """Reserve-and-release a TCP port for a coordinator address."""
    s = _socket.socket()
    s.bind((host, 0))
    port = s.getsockname()[1]
    s.close()
    return port


def run_local(nranks: int, fn, *, transport: str = "inproc",
              auto_progress: bool = True, app_handlers=None,
              join_timeout: float = 180.0, finalize: bool = True,
              **config_kwargs) -> list:
    """Run `fn(rt)` on `nranks` rank threads in this process; returns results.

    The first rank exception is re-raised after all threads are reaped.
    Crashed ranks abort their transport so peers blocked in collectives fail
    fast instead of hanging.
    """
    fabric = InprocFabric(nranks) if transport == "inproc" else None
    coordinator = None
    if transport == "socket" and nranks > 1:
        coordinator = ("127.0.0.1", free_port())
    results = [None] * nranks
    errors: list[tuple[int, BaseException]] = []

    def worker(rank: int):
        rt = None
        try:
            cfg = RuntimeConfig(nranks=nranks, my_rank=rank,
                                coordinator=coordinator, transport=transport,
                                auto_progress=auto_progress, **config_kwargs)
            rt = runtime_init(cfg, app_handlers=app_handlers, fabric=fabric)
            results[rank] = fn(rt)
            if finalize and not rt.finalized:
                rt.finalize()
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors.append((rank, exc))
            if rt is not None and not rt.finalized:
                rt.abort()
            elif fabric is not None:
                fabric.abort(rank)

    threads = [threading.Thread(target=worker, args=(r,), daemon=True,
                                name=f"pgas-rank-{r}")
               for r in range(nranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(join_timeout)
    hung = [t.name for t in threads if t.is_alive()]
    if hung:
        if fabric is not None:
            for r in range(nranks):
                fabric.abort(r)
        raise PgasError(f"rank threads did not finish: {hung}; "
                        f"first error: {errors[0] if errors else None}")
    if errors:
        errors.sort(key=lambda e: e[0])
        raise errors[0][1]
    return results
