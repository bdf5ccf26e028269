"""Active-message layer: registry rules, delivery semantics, wireup."""

import threading
import time
import zlib

import pytest

from pgasrt import AmToken, RuntimeConfig, run_local, runtime_init
from pgasrt.errors import (
    BootstrapTimeout,
    DuplicateHandler,
    PayloadTooLarge,
    RankCountMismatch,
    RegisteredAfterWireup,
    ReservedHandler,
    TransportClosed,
    UnknownToken,
)
from pgasrt.runtime import free_port
from pgasrt.transport import InprocFabric


def _noop(msg):
    pass


class TestRegistry:
    def test_duplicate_handler(self, fresh_engine):
        fresh_engine.register(16, _noop)
        with pytest.raises(DuplicateHandler):
            fresh_engine.register(16, _noop)

    def test_reserved_range_refused_for_applications(self, fresh_engine):
        with pytest.raises(ReservedHandler):
            fresh_engine.register(3, _noop)
        fresh_engine.register(3, _noop, internal=True)  # runtime may

    def test_out_of_range_id(self, fresh_engine):
        with pytest.raises(ReservedHandler):
            fresh_engine.register(1 << 16, _noop)

    def test_registration_after_wireup_fails(self):
        def fn(rt):
            with pytest.raises(RegisteredAfterWireup):
                rt.register_handler(17, _noop)
        run_local(1, fn)


class TestDelivery:
    def test_loopback_echo_payload_identical(self):
        seen = []
        payload = bytes(range(256)) * 3

        def fn(rt):
            rt.am_request(0, 16, payload)
            rt.engine.wait_until(lambda: seen, timeout=10)
            assert seen[0] == payload

        run_local(1, fn, app_handlers={16: lambda m: seen.append(m.payload)},
                  auto_progress=False)

    def test_fifo_order_same_stream(self):
        log = []

        def handlers(rank):
            return {16: lambda m: log.append(int.from_bytes(m.payload, "little"))}

        def fn(rt):
            if rt.rank == 0:
                for i in range(20):
                    rt.am_request(1, 16, i.to_bytes(4, "little"))
            rt.barrier()
            if rt.rank == 1:
                rt.engine.wait_until(lambda: len(log) == 20, timeout=10)
                assert log == list(range(20))
            rt.barrier()

        run_local(2, fn, app_handlers=handlers, auto_progress=False)

    def test_payload_limit_boundary(self):
        def fn(rt):
            rt.am_request(0, 16, b"x" * rt.config.am_payload_max)
            with pytest.raises(PayloadTooLarge):
                rt.am_request(0, 16, b"x" * (rt.config.am_payload_max + 1))
        run_local(1, fn, app_handlers={16: _noop})

    def test_request_reply_roundtrip_byte_equality(self):
        payload = zlib.compress(bytes(1000))
        replies = []

        def handlers(rank):
            def on_req(m):
                if m.is_request():
                    m.reply(16, bytes(m.payload))
                else:
                    replies.append(m.payload)
            return {16: on_req}

        def fn(rt):
            if rt.rank == 0:
                rt.am_request(1, 16, payload)
                rt.engine.wait_until(lambda: replies, timeout=10)
                assert replies[0] == payload
            rt.barrier()

        run_local(2, fn, app_handlers=handlers)

    def test_forged_token_rejected(self):
        def fn(rt):
            with pytest.raises(UnknownToken):
                rt.am_reply(AmToken(0, 10**9), 16, b"")
        run_local(1, fn, app_handlers={16: _noop})

    def test_deferred_reply_to_retained_token(self):
        stash = []
        granted = []

        def handlers(rank):
            def on_msg(m):
                if m.is_request():
                    m.retain()     # answer later, outside the handler
                    stash.append(m.token)
                else:
                    granted.append(m.payload)
            return {16: on_msg}

        def fn(rt):
            if rt.rank == 0:
                rt.am_request(1, 16, b"want")
                rt.engine.wait_until(lambda: granted, timeout=10)
                assert granted[0] == b"granted"
            else:
                rt.engine.wait_until(lambda: stash, timeout=10)
                time.sleep(0.05)   # deliberately delayed grant
                rt.am_reply(stash[0], 16, b"granted")
            rt.barrier()

        run_local(2, fn, app_handlers=handlers)

    def test_unretained_token_dies_after_handler(self):
        tokens = []

        def fn(rt):
            rt.am_request(0, 16, b"")
            rt.engine.wait_until(lambda: tokens, timeout=10)
            with pytest.raises(UnknownToken):
                rt.am_reply(tokens[0], 16, b"late")

        run_local(1, fn, app_handlers={16: lambda m: tokens.append(m.token)})

    def test_send_after_close_fails(self):
        def fn(rt):
            rt.finalize()
            with pytest.raises(TransportClosed):
                rt.am_request(0, 16, b"")
        run_local(1, fn, app_handlers={16: _noop}, finalize=False)


class TestProgress:
    def test_progress_idle_returns_zero(self):
        def fn(rt):
            assert rt.progress() == 0
        run_local(1, fn, auto_progress=False)

    def test_progress_counts_serviced(self):
        hits = []

        def fn(rt):
            rt.am_request(0, 16, b"a")
            total = 0
            deadline = time.monotonic() + 5
            while total < 1 and time.monotonic() < deadline:
                total += rt.progress()
            assert total == 1 and len(hits) == 1

        run_local(1, fn, app_handlers={16: lambda m: hits.append(1)},
                  auto_progress=False)

    def test_handler_reply_is_not_reentrant(self):
        depth = [0]
        max_depth = [0]
        done = []

        def handlers(rank):
            def on_msg(m):
                depth[0] += 1
                max_depth[0] = max(max_depth[0], depth[0])
                if m.is_request():
                    m.reply(16, b"")
                else:
                    done.append(1)
                depth[0] -= 1
            return {16: on_msg}

        def fn(rt):
            rt.am_request(0, 16, b"")
            rt.engine.wait_until(lambda: done, timeout=10)
            assert max_depth[0] == 1

        run_local(1, fn, app_handlers=handlers, auto_progress=False)

    def test_token_uniqueness(self):
        def fn(rt):
            tokens = {rt.am_request(0, 16, b"") for _ in range(1000)}
            assert len(tokens) == 1000
            seqs = sorted(t.sequence for t in tokens)
            assert seqs == sorted(set(seqs))  # strictly increasing

        run_local(1, fn, app_handlers={16: _noop})

    def test_handlers_never_concurrent(self):
        active = [0]
        overlap = [0]
        count = [0]

        def handlers(rank):
            def on_msg(m):
                active[0] += 1
                if active[0] > 1:
                    overlap[0] += 1
                time.sleep(0.0005)
                count[0] += 1
                active[0] -= 1
            return {16: on_msg}

        def fn(rt):
            for _ in range(25):
                rt.am_request(1, 16, b"")
            rt.barrier()
            if rt.rank == 1:
                rt.engine.wait_until(lambda: count[0] >= 75, timeout=30)
            rt.barrier()
            assert overlap[0] == 0

        run_local(4, fn, app_handlers=handlers)

    def test_payload_integrity_checksums(self):
        import hashlib
        results = {}

        def handlers(rank):
            def on_msg(m):
                if m.is_request():
                    m.reply(16, hashlib.sha256(m.payload).digest())
                else:
                    results[m.token.sequence] = m.payload
            return {16: on_msg}

        def fn(rt):
            import os as _os
            if rt.rank == 0:
                sent = {}
                for size in (1, 17, 4096, 65536, 1 << 20, 4 << 20):
                    blob = _os.urandom(size)
                    tok = rt.am_request(1, 16, blob)
                    sent[tok.sequence] = hashlib.sha256(blob).digest()
                rt.engine.wait_until(lambda: len(results) == len(sent), timeout=60)
                assert results == sent
            rt.barrier()

        run_local(2, fn, app_handlers=handlers, am_payload_max=8 << 20)


class TestWireup:
    @pytest.mark.parametrize("transport", ["inproc", "socket"])
    def test_four_rank_wireup_all_peers_reachable(self, transport):
        def fn(rt):
            if transport == "socket" and rt.nranks > 1:
                assert len(rt.engine.transport._conns) == rt.nranks - 1
            rt.barrier()

        run_local(4, fn, transport=transport)

    def test_single_rank_socket_needs_no_coordinator(self):
        cfg = RuntimeConfig(nranks=1, my_rank=0, transport="socket")
        rt = runtime_init(cfg)
        rt.barrier()
        rt.finalize()

    def test_bootstrap_timeout_inproc(self):
        fabric = InprocFabric(2)
        cfg = RuntimeConfig(nranks=2, my_rank=0, transport="inproc",
                            bootstrap_timeout=0.3)
        with pytest.raises(BootstrapTimeout):
            runtime_init(cfg, fabric=fabric)

    def test_bootstrap_timeout_socket_missing_peer(self):
        coord = ("127.0.0.1", free_port())
        cfg = RuntimeConfig(nranks=2, my_rank=0, transport="socket",
                            coordinator=coord, bootstrap_timeout=0.5)
        with pytest.raises(BootstrapTimeout):
            runtime_init(cfg)

    def test_rank_count_mismatch_detected_by_coordinator(self):
        coord = ("127.0.0.1", free_port())
        errors = {}

        def start(rank, nranks):
            def go():
                cfg = RuntimeConfig(nranks=nranks, my_rank=rank, transport="socket",
                                    coordinator=coord, bootstrap_timeout=5.0)
                try:
                    rt = runtime_init(cfg)
                    rt.finalize()
                except Exception as exc:
                    errors[rank] = exc
            t = threading.Thread(target=go, daemon=True)
            t.start()
            return t

        threads = [start(0, 2), start(1, 3)]
        for t in threads:
            t.join(timeout=20)
        assert isinstance(errors.get(0), RankCountMismatch)
        assert 1 in errors  # peer fails too (closed by coordinator)

    def test_directed_messages_between_all_pairs(self):
        hits = {}

        def handlers(rank):
            def on_msg(m):
                hits.setdefault(rank, set()).add(m.source)
            return {16: on_msg}

        def fn(rt):
            for peer in range(rt.nranks):
                if peer != rt.rank:
                    rt.am_request(peer, 16, b"")
            rt.engine.wait_until(
                lambda: len(hits.get(rt.rank, ())) == rt.nranks - 1, timeout=20)
            rt.barrier()

        run_local(4, fn, app_handlers=handlers, transport="socket")
        assert all(len(v) == 3 for v in hits.values())
