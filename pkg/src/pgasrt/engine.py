"""Active-message engine: handler registry, tokens, and the progress loop.

Every higher layer (RMA, collectives, distributed lock) is built on two
primitives: `request`, which stamps a fresh token (source rank, sequence)
onto an envelope, and `reply`, which answers a live token. Tokens received
with a REQUEST stay live while the handler runs; a handler that wants to
answer later (the lock queue does) calls msg.retain() and the token stays
live until it is replied to.

Handlers for one rank never run concurrently: the dispatch lock serializes
poll + handler execution, whether driven by the dedicated progress thread
or by an explicit progress() call. Handlers must not block and must not
issue collectives; they may send requests and replies freely.
"""

from __future__ import annotations

import threading
import time
import traceback
from typing import Callable, NamedTuple

from . import wire
from .errors import (
    DuplicateHandler,
    PayloadTooLarge,
    RegisteredAfterWireup,
    ReservedHandler,
    TransportClosed,
    UnknownToken,
)

# Reserved handler ids (0-15 belong to the runtime).
H_PUT_CHUNK = 3
H_PUT_ACK = 4
H_GET_REQ = 5
H_GET_RESP = 6
H_BARRIER_ROUND = 7
H_BCAST_NODE = 8
H_REDUCE_NODE = 9
H_LOCK_REQ = 10
H_LOCK_GRANT = 11
H_UNLOCK = 12
H_LOCK_ERR = 13
RESERVED_MAX = 15
MAX_HANDLER_ID = 0xFFFF


class AmToken(NamedTuple):
    source_rank: int
    sequence: int


class AmMsg:
    """One delivered envelope, as seen by a handler."""

    __slots__ = ("engine", "kind", "handler_id", "token", "payload", "_retained")

    def __init__(self, engine, kind, handler_id, token, payload):
        self.engine = engine
        self.kind = kind
        self.handler_id = handler_id
        self.token = token
        self.payload = payload
        self._retained = False

    @property
    def source(self) -> int:
        return self.token.source_rank

    @property
    def rank(self) -> int:
        """Rank this message was delivered on."""
        return self.engine.my_rank

    def is_request(self) -> bool:
        return self.kind == wire.KIND_REQUEST

    def retain(self):
        """Keep the token live after the handler returns (deferred reply)."""
        self._retained = True

    def reply(self, handler_id: int, payload: bytes = b""):
        self.engine.reply(self.token, handler_id, payload)


class AmEngine:
    def __init__(self, config, transport):
        self.config = config
        self.transport = transport
        self.my_rank = config.my_rank
        self.nranks = config.nranks
        self._handlers: dict[int, Callable[[AmMsg], None]] = {}
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._live_tokens: set[AmToken] = set()
        self._token_lock = threading.Lock()
        self._dispatch = threading.RLock()
        self.activity = threading.Condition()
        self._wired = False
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.last_handler_error: BaseException | None = None

    # -- registry -------------------------------------------------------------

    def register(self, handler_id: int, fn, internal: bool = False):
        if self._wired:
            raise RegisteredAfterWireup(
                f"handler {handler_id} registered after wireup completed")
        if not 0 <= handler_id <= MAX_HANDLER_ID:
            raise ReservedHandler(f"handler id {handler_id} out of range")
        if handler_id <= RESERVED_MAX and not internal:
            raise ReservedHandler(
                f"handler id {handler_id} is reserved for the runtime (0-15)")
        if handler_id in self._handlers:
            raise DuplicateHandler(f"handler id {handler_id} already registered")
        self._handlers[handler_id] = fn

    def mark_wired(self):
        self._wired = True

    @property
    def wired(self) -> bool:
        return self._wired

    # -- sending ----------------------------------------------------------------

    def next_token(self) -> AmToken:
        with self._seq_lock:
            self._seq += 1
            return AmToken(self.my_rank, self._seq)

    def request(self, target: int, handler_id: int, payload: bytes = b"",
                enforce_limit: bool = False, token: AmToken | None = None) -> AmToken:
        """Send a REQUEST envelope; returns its token.

        Callers that must observe the token before the reply can possibly
        arrive (deferred-grant bookkeeping) pass a pre-allocated token.
        """
        if enforce_limit and len(payload) > self.config.am_payload_max:
            raise PayloadTooLarge(
                f"payload of {len(payload)} bytes exceeds the "
                f"{self.config.am_payload_max}-byte active-message limit")
        if token is None:
            token = self.next_token()
        header = wire.encode_header(
            wire.KIND_REQUEST, handler_id, token.source_rank, token.sequence,
            len(payload))
        self.transport.send(target, header, bytes(payload))
        return token

    def reply(self, token: AmToken, handler_id: int, payload: bytes = b""):
        token = AmToken(*token)
        with self._token_lock:
            if token not in self._live_tokens:
                raise UnknownToken(
                    f"token {token} is not live on rank {self.my_rank}")
            self._live_tokens.discard(token)
        header = wire.encode_header(
            wire.KIND_REPLY, handler_id, token.source_rank, token.sequence,
            len(payload))
        self.transport.send(token.source_rank, header, bytes(payload))

    # -- progress ---------------------------------------------------------------

    def progress(self, block: bool = False, timeout: float = 0.05) -> int:
        """Drain pending envelopes, invoking handlers serially. Returns count."""
        with self._dispatch:
            msgs = self.transport.poll(timeout if block else 0.0)
            for fields in msgs:
                self._dispatch_one(fields)
        if msgs:
            with self.activity:
                self.activity.notify_all()
        return len(msgs)

    def service_one_from(self, source: int, timeout: float = 5.0) -> bool:
        """Deliver exactly one pending envelope from `source` (in-process only)."""
        fields = self.transport.recv_one_from(source, timeout)
        if fields is None:
            return False
        with self._dispatch:
            self._dispatch_one(fields)
        with self.activity:
            self.activity.notify_all()
        return True

    def _dispatch_one(self, fields):
        kind, handler_id, src, seq, payload = fields
        token = AmToken(src, seq)
        msg = AmMsg(self, kind, handler_id, token, payload)
        handler = self._handlers.get(handler_id)
        if kind == wire.KIND_REQUEST:
            with self._token_lock:
                self._live_tokens.add(token)
        try:
            if handler is None:
                raise UnknownToken(f"no handler registered for id {handler_id}")
            handler(msg)
        except Exception as exc:  # handlers must not take the engine down
            self.last_handler_error = exc
            traceback.print_exc()
        finally:
            if kind == wire.KIND_REQUEST and not msg._retained:
                with self._token_lock:
                    self._live_tokens.discard(token)

    def wait_until(self, pred, timeout: float | None = None, what: str = "condition"):
        """Block until pred() is true, driving progress while waiting."""
        end = None if timeout is None else time.monotonic() + timeout
        while True:
            if pred():
                return
            dead = self.transport.aborted()
            if dead:
                raise TransportClosed(
                    f"rank {self.my_rank}: peer rank(s) {sorted(dead)} went away "
                    f"while waiting for {what}")
            if end is not None and time.monotonic() >= end:
                raise TimeoutError(f"rank {self.my_rank}: timed out waiting for {what}")
            if self._thread is not None:
                with self.activity:
                    if pred():
                        return
                    self.activity.wait(0.05)
            else:
                self.progress(block=True, timeout=0.05)

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        """Start the dedicated progress thread (skipped when auto_progress=False)."""
        if not self.config.auto_progress or self._thread is not None:
            return
        self._thread = threading.Thread(
            target=self._progress_loop, name=f"pgas-progress-{self.my_rank}",
            daemon=True)
        self._thread.start()

    def _progress_loop(self):
        while not self._stop.is_set():
            try:
                self.progress(block=True, timeout=0.05)
            except TransportClosed:
                break
            except Exception:
                if self._stop.is_set():
                    break
                traceback.print_exc()

    def stop(self):
        self._stop.set()
        thread, self._thread = self._thread, None
        if thread is not None:
            thread.join(timeout=5.0)
        with self.activity:
            self.activity.notify_all()

    def stats(self) -> dict:
        return self.transport.stats.as_dict()
