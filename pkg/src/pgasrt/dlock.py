"""Distributed lock built on active-message request/reply tokens.

Every rank owns one advisory lock guarding its segment. A requester sends
LOCK_REQ and blocks until the grant reply arrives. The target's handler
either grants immediately (lock free, queue empty) or retains the request
token on a FIFO wait queue; the deferred grant is sent later, from inside
the unlock handler, as a reply to that stored token. Because lock state is
only touched on the target's serial handler context, grant handoff is
atomic without extra locking.

lockt/unlockt add a per-target thread gate acquired *before* the network
lock, so one rank keeps at most one lock request in flight no matter how
many of its threads contend, and the target's wait queue stays bounded by
the rank count.
"""

from __future__ import annotations

import collections
import threading

from .engine import H_LOCK_ERR, H_LOCK_GRANT, H_LOCK_REQ, H_UNLOCK, AmToken
from .errors import InvalidRank, NotHolder, SelfDeadlock


class LockState:
    """Target-side state: current holder plus FIFO queue of retained tokens."""

    __slots__ = ("holder", "wait_queue", "grant_log")

    def __init__(self):
        self.holder: AmToken | None = None
        self.wait_queue: collections.deque[AmToken] = collections.deque()
        self.grant_log: list[int] = []  # source ranks in grant order


class LockManager:
    def __init__(self, engine):
        self.engine = engine
        self.my_rank = engine.my_rank
        self.nranks = engine.nranks
        self.state = LockState()
        self._mu = threading.Lock()
        self._pending_locks: dict[AmToken, threading.Event] = {}
        self._pending_unlocks: dict[AmToken, list] = {}
        self._holding: set[int] = set()
        self._gates: dict[int, threading.Lock] = {}
        self._gate_owner: dict[int, int] = {}
        self.requests_sent = 0
        self.inflight_requests = 0
        self.max_inflight_requests = 0
        engine.register(H_LOCK_REQ, self._on_lock_req, internal=True)
        engine.register(H_LOCK_GRANT, self._on_grant, internal=True)
        engine.register(H_UNLOCK, self._on_unlock, internal=True)
        engine.register(H_LOCK_ERR, self._on_lock_err, internal=True)

    # -- target-side handlers --------------------------------------------------

    def _on_lock_req(self, msg):
        st = self.state
        if st.holder is None and not st.wait_queue:
            st.holder = msg.token
            st.grant_log.append(msg.token.source_rank)
            msg.reply(H_LOCK_GRANT)
        else:
            msg.retain()  # token stays live for the deferred grant
            st.wait_queue.append(msg.token)

    def _on_unlock(self, msg):
        if not msg.is_request():
            self._on_unlock_ack(msg, ok=True)
            return
        st = self.state
        if st.holder is None or st.holder.source_rank != msg.token.source_rank:
            msg.reply(H_LOCK_ERR)
            return
        if st.wait_queue:
            nxt = st.wait_queue.popleft()
            st.holder = nxt
            st.grant_log.append(nxt.source_rank)
            self.engine.reply(nxt, H_LOCK_GRANT)  # deferred grant, FIFO head
        else:
            st.holder = None
        msg.reply(H_UNLOCK)

    # -- requester-side handlers -------------------------------------------------

    def _on_grant(self, msg):
        with self._mu:
            event = self._pending_locks.pop(msg.token, None)
            if event is not None:
                self.inflight_requests -= 1
        if event is not None:
            event.set()

    def _on_lock_err(self, msg):
        self._on_unlock_ack(msg, ok=False)

    def _on_unlock_ack(self, msg, ok: bool):
        with self._mu:
            entry = self._pending_unlocks.pop(msg.token, None)
        if entry is not None:
            entry[1] = "ok" if ok else "not-holder"
            entry[0].set()

    # -- public operations --------------------------------------------------------

    def _check_rank(self, target: int):
        if not 0 <= target < self.nranks:
            raise InvalidRank(f"rank {target} outside [0, {self.nranks})")

    def lock(self, target: int):
        """Acquire rank `target`'s lock; blocks until the grant reply arrives."""
        self._check_rank(target)
        if target in self._holding:
            raise SelfDeadlock(
                f"rank {self.my_rank} already holds the lock of rank {target}")
        event = threading.Event()
        token = self.engine.next_token()
        with self._mu:
            self.requests_sent += 1
            self.inflight_requests += 1
            self.max_inflight_requests = max(self.max_inflight_requests,
                                             self.inflight_requests)
            self._pending_locks[token] = event
        try:
            self.engine.request(target, H_LOCK_REQ, token=token)
        except BaseException:
            with self._mu:
                if self._pending_locks.pop(token, None) is not None:
                    self.inflight_requests -= 1
            raise
        self.engine.wait_until(event.is_set, what=f"lock grant from rank {target}")
        self._holding.add(target)

    def unlock(self, target: int):
        """Release rank `target`'s lock; the target grants the FIFO head next."""
        self._check_rank(target)
        event = threading.Event()
        entry = [event, "ok"]
        token = self.engine.next_token()
        with self._mu:
            self._pending_unlocks[token] = entry
        try:
            self.engine.request(target, H_UNLOCK, token=token)
        except BaseException:
            with self._mu:
                self._pending_unlocks.pop(token, None)
            raise
        self.engine.wait_until(event.is_set, what=f"unlock ack from rank {target}")
        if entry[1] != "ok":
            raise NotHolder(
                f"rank {self.my_rank} does not hold the lock of rank {target}")
        self._holding.discard(target)

    def lockt(self, target: int):
        """Thread-level lock: local gate first, then the process-level lock."""
        gate = self._gate(target)
        gate.acquire()
        try:
            self.lock(target)
        except BaseException:
            gate.release()
            raise
        self._gate_owner[target] = threading.get_ident()

    def unlockt(self, target: int):
        if self._gate_owner.get(target) != threading.get_ident():
            raise NotHolder(
                f"calling thread does not hold the thread gate for rank {target}")
        try:
            self.unlock(target)
        finally:
            self._gate_owner.pop(target, None)
            self._gate(target).release()

    def _gate(self, target: int) -> threading.Lock:
        with self._mu:
            gate = self._gates.get(target)
            if gate is None:
                gate = self._gates[target] = threading.Lock()
            return gate

    def held_locks(self) -> set[int]:
        return set(self._holding)

    def stats(self) -> dict:
        return {
            "lock_requests_sent": self.requests_sent,
            "max_inflight_lock_requests": self.max_inflight_requests,
        }
