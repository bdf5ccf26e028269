"""Byte transports beneath the active-message engine.

Two transports implement the same duck-typed interface:

* InprocTransport -- ranks are threads inside one process, delivery is via
  per-(target, source) FIFO deques. Deterministic: tests can disable the
  progress thread and service messages one at a time from a chosen source.
* SocketTransport -- ranks are OS processes (or threads) connected by a full
  TCP mesh over loopback. Rank 0 doubles as the bootstrap coordinator:
  peers register (rank, listen address), the coordinator broadcasts the
  endpoint table, all ranks ack, then the mesh is dialed lower<-higher.

Interface:
    send(target, header, payload)      enqueue one frame for delivery
    poll(timeout) -> [(kind, hid, src, seq, payload), ...]
    recv_one_from(source, timeout)     in-process only, for deterministic tests
    pending_from(source) -> int        in-process only
    close() / closed
    dead_peers / aborted()             fail-fast detection for blocked waiters

Both preserve per-(source, target) FIFO order and deliver exactly once.
"""

from __future__ import annotations

import collections
import json
import selectors
import socket
import struct
import threading
import time

from . import wire
from .errors import BootstrapTimeout, RankCountMismatch, TransportClosed


class TransportStats:
    __slots__ = ("msgs_sent", "msgs_received", "bytes_sent", "bytes_received")

    def __init__(self):
        self.msgs_sent = 0
        self.msgs_received = 0
        self.bytes_sent = 0
        self.bytes_received = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}


# ---------------------------------------------------------------------------
# In-process transport
# ---------------------------------------------------------------------------

class InprocFabric:
    """Shared mailbox array for one in-process world of rank threads."""

    def __init__(self, nranks: int):
        self.nranks = nranks
        self._conds = [threading.Condition() for _ in range(nranks)]
        self._queues = [
            [collections.deque() for _ in range(nranks)] for _ in range(nranks)
        ]
        self._rendezvous = threading.Barrier(nranks)
        self.aborted: set[int] = set()

    def wireup(self, rank: int, timeout: float):
        try:
            self._rendezvous.wait(timeout)
        except threading.BrokenBarrierError:
            raise BootstrapTimeout(
                f"rank {rank}: not all {self.nranks} ranks reached wireup "
                f"within {timeout}s") from None

    def send(self, source: int, target: int, item):
        cond = self._conds[target]
        with cond:
            self._queues[target][source].append(item)
            cond.notify_all()

    def collect(self, rank: int, timeout: float):
        """All pending frames for `rank`, round-robin across sources."""
        cond = self._conds[rank]
        with cond:
            items = self._sweep(rank)
            if not items and timeout > 0:
                cond.wait(timeout)
                items = self._sweep(rank)
            return items

    def _sweep(self, rank: int):
        queues = self._queues[rank]
        items = []
        while True:
            got = False
            for q in queues:
                if q:
                    items.append(q.popleft())
                    got = True
            if not got:
                return items

    def take_one(self, rank: int, source: int, timeout: float):
        cond = self._conds[rank]
        deadline = time.monotonic() + timeout
        with cond:
            q = self._queues[rank][source]
            while not q:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                cond.wait(remaining)
            return q.popleft()

    def pending(self, rank: int, source: int) -> int:
        with self._conds[rank]:
            return len(self._queues[rank][source])

    def abort(self, rank: int):
        """Mark a rank as abnormally terminated and wake every waiter."""
        self.aborted.add(rank)
        for cond in self._conds:
            with cond:
                cond.notify_all()


class InprocTransport:
    def __init__(self, fabric: InprocFabric, rank: int, bootstrap_timeout: float):
        self.fabric = fabric
        self.my_rank = rank
        self.nranks = fabric.nranks
        self._bootstrap_timeout = bootstrap_timeout
        self.closed = False
        self.stats = TransportStats()

    def wireup(self):
        self.fabric.wireup(self.my_rank, self._bootstrap_timeout)

    def send(self, target: int, header: bytes, payload: bytes):
        if self.closed:
            raise TransportClosed(f"rank {self.my_rank}: transport closed")
        self.fabric.send(self.my_rank, target, (header, payload))
        self.stats.msgs_sent += 1
        self.stats.bytes_sent += len(header) + len(payload)

    def poll(self, timeout: float = 0.0):
        items = self.fabric.collect(self.my_rank, timeout)
        return [self._decode(h, p) for h, p in items]

    def recv_one_from(self, source: int, timeout: float = 5.0):
        item = self.fabric.take_one(self.my_rank, source, timeout)
        if item is None:
            return None
        return self._decode(*item)

    def pending_from(self, source: int) -> int:
        return self.fabric.pending(self.my_rank, source)

    def _decode(self, header, payload):
        kind, hid, src, seq, plen = wire.decode_header(header)
        assert plen == len(payload)
        self.stats.msgs_received += 1
        self.stats.bytes_received += len(header) + len(payload)
        return kind, hid, src, seq, payload

    def aborted(self) -> set[int]:
        return self.fabric.aborted

    @property
    def dead_peers(self) -> set[int]:
        return self.fabric.aborted

    def abort(self):
        self.fabric.abort(self.my_rank)
        self.closed = True

    def close(self):
        self.closed = True


# ---------------------------------------------------------------------------
# Socket transport
# ---------------------------------------------------------------------------

def _read_exact(sock, n: int, deadline: float) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        sock.settimeout(max(0.01, deadline - time.monotonic()))
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            raise BootstrapTimeout("peer handshake timed out") from None
        if not chunk:
            raise TransportClosed("peer closed during handshake")
        buf.extend(chunk)
    return bytes(buf)


def _read_line(sock, deadline: float) -> bytes:
    buf = bytearray()
    while not buf.endswith(b"\n"):
        sock.settimeout(max(0.01, deadline - time.monotonic()))
        try:
            chunk = sock.recv(1024)
        except socket.timeout:
            raise BootstrapTimeout("bootstrap exchange timed out") from None
        if not chunk:
            raise TransportClosed("peer closed during bootstrap")
        buf.extend(chunk)
    return bytes(buf)


class SocketTransport:
    # Payloads below this ride in the same sendall as the header.
    _INLINE_LIMIT = 64 * 1024

    def __init__(self, config):
        self.my_rank = config.my_rank
        self.nranks = config.nranks
        self._coord = config.coordinator
        self._timeout = config.bootstrap_timeout
        self.closed = False
        self.stats = TransportStats()
        self._conns: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._rbufs: dict[int, bytearray] = {}
        self._loopback = collections.deque()
        self._loop_lock = threading.Lock()
        self._dead: set[int] = set()
        self._selector = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._selector.register(self._wake_r, selectors.EVENT_READ, ("wake", None))
        self._listener = None
        if self.nranks > 1:
            host = self._coord[0] if self._coord else "127.0.0.1"
            self._listener = socket.socket()
            self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._listener.bind((host, 0))
            self._listener.listen(self.nranks)
            self._listen_addr = self._listener.getsockname()

    # -- bootstrap ----------------------------------------------------------

    def wireup(self):
        if self.nranks == 1:
            return
        deadline = time.monotonic() + self._timeout
        table = self._rendezvous(deadline)
        self._dial_mesh(table, deadline)
        for rank, conn in self._conns.items():
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.setblocking(False)
            self._rbufs[rank] = bytearray()
            self._send_locks[rank] = threading.Lock()
            self._selector.register(conn, selectors.EVENT_READ, ("peer", rank))

    def _rendezvous(self, deadline: float) -> list[tuple[str, int]]:
        host, port = self._listen_addr
        if self.my_rank == 0:
            coord = socket.socket()
            coord.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                coord.bind(self._coord)
                coord.listen(self.nranks)
                table: list = [None] * self.nranks
                table[0] = [host, port]
                regs = []
                while len(regs) < self.nranks - 1:
                    coord.settimeout(max(0.01, deadline - time.monotonic()))
                    try:
                        conn, _ = coord.accept()
                    except socket.timeout:
                        raise BootstrapTimeout(
                            f"coordinator: {len(regs)} of {self.nranks - 1} "
                            "peers registered before the deadline") from None
                    msg = json.loads(_read_line(conn, deadline))
                    r = msg["rank"]
                    if msg["nranks"] != self.nranks:
                        raise RankCountMismatch(
                            f"rank {r} launched with nranks={msg['nranks']}, "
                            f"coordinator expects {self.nranks}")
                    if not 0 < r < self.nranks or table[r] is not None:
                        raise RankCountMismatch(f"bad or duplicate rank id {r}")
                    table[r] = [msg["host"], msg["port"]]
                    regs.append((r, conn))
                blob = (json.dumps({"table": table}) + "\n").encode()
                for _, conn in regs:
                    conn.sendall(blob)
                for _, conn in regs:
                    if _read_line(conn, deadline).strip() != b"ok":
                        raise RankCountMismatch("peer failed to ack the table")
                for _, conn in regs:
                    conn.close()
            finally:
                coord.close()
            return [tuple(e) for e in table]
        # Non-coordinator: register, receive table, ack.
        conn = self._connect_retry(tuple(self._coord), deadline)
        try:
            reg = {"rank": self.my_rank, "nranks": self.nranks,
                   "host": host, "port": port}
            conn.sendall((json.dumps(reg) + "\n").encode())
            table = json.loads(_read_line(conn, deadline))["table"]
            conn.sendall(b"ok\n")
        finally:
            conn.close()
        return [tuple(e) for e in table]

    @staticmethod
    def _connect_retry(addr, deadline: float) -> socket.socket:
        while True:
            try:
                return socket.create_connection(
                    addr, timeout=max(0.01, deadline - time.monotonic()))
            except (ConnectionRefusedError, socket.timeout, OSError):
                if time.monotonic() >= deadline:
                    raise BootstrapTimeout(f"could not reach {addr}") from None
                time.sleep(0.02)

    def _dial_mesh(self, table, deadline: float):
        # Lower ranks accept, higher ranks dial: one connection per pair.
        for peer in range(self.my_rank):
            conn = self._connect_retry(table[peer], deadline)
            conn.sendall(struct.pack("<I", self.my_rank))
            self._conns[peer] = conn
        expected = self.nranks - 1 - self.my_rank
        while len(self._conns) < self.nranks - 1:
            self._listener.settimeout(max(0.01, deadline - time.monotonic()))
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                have = len(self._conns) - self.my_rank
                raise BootstrapTimeout(
                    f"rank {self.my_rank}: {have} of {expected} higher ranks "
                    "connected before the deadline") from None
            (peer,) = struct.unpack("<I", _read_exact(conn, 4, deadline))
            self._conns[peer] = conn

    # -- data path ----------------------------------------------------------

    def send(self, target: int, header: bytes, payload: bytes):
        if self.closed:
            raise TransportClosed(f"rank {self.my_rank}: transport closed")
        self.stats.msgs_sent += 1
        self.stats.bytes_sent += len(header) + len(payload)
        if target == self.my_rank:
            with self._loop_lock:
                self._loopback.append((header, payload))
            try:
                self._wake_w.send(b"\x01")
            except OSError:
                pass
            return
        sock = self._conns[target]
        with self._send_locks[target]:
            if len(payload) < self._INLINE_LIMIT:
                sock.sendall(header + payload)
            else:
                sock.sendall(header)
                sock.sendall(payload)

    def poll(self, timeout: float = 0.0):
        msgs = []
        with self._loop_lock:
            while self._loopback:
                h, p = self._loopback.popleft()
                msgs.append(self._account(wire.decode_header(h) , p))
        if msgs:
            timeout = 0.0
        if self.closed:
            return msgs
        try:
            events = self._selector.select(timeout if not msgs else 0)
        except OSError:
            return msgs
        for key, _ in events:
            tag, peer = key.data
            if tag == "wake":
                try:
                    while self._wake_r.recv(4096):
                        pass
                except (BlockingIOError, OSError):
                    pass
                with self._loop_lock:
                    while self._loopback:
                        h, p = self._loopback.popleft()
                        msgs.append(self._account(wire.decode_header(h), p))
                continue
            self._drain_peer(key.fileobj, peer, msgs)
        return msgs

    def _account(self, hdr_fields, payload):
        kind, hid, src, seq, plen = hdr_fields
        self.stats.msgs_received += 1
        self.stats.bytes_received += wire.HEADER_SIZE + len(payload)
        return kind, hid, src, seq, bytes(payload)

    def _drain_peer(self, sock, peer: int, msgs: list):
        buf = self._rbufs[peer]
        eof = False
        while True:
            try:
                chunk = sock.recv(1 << 18)
            except (BlockingIOError, InterruptedError):
                break
            except OSError:
                eof = True
                break
            if not chunk:
                eof = True
                break
            buf.extend(chunk)
            if len(chunk) < (1 << 18):
                break
        # Parse every complete frame already buffered.
        view = memoryview(buf)
        offset = 0
        while len(buf) - offset >= wire.HEADER_SIZE:
            fields = wire.decode_header(view[offset:offset + wire.HEADER_SIZE])
            plen = fields[4]
            end = offset + wire.HEADER_SIZE + plen
            if len(buf) < end:
                break
            msgs.append(self._account(fields, view[offset + wire.HEADER_SIZE:end]))
            offset = end
        view.release()
        if offset:
            del buf[:offset]
        if eof:
            self._dead.add(peer)
            try:
                self._selector.unregister(sock)
            except (KeyError, ValueError):
                pass
            sock.close()

    def pending_from(self, source: int) -> int:
        raise NotImplementedError("deterministic servicing needs the in-process transport")

    def recv_one_from(self, source: int, timeout: float = 5.0):
        raise NotImplementedError("deterministic servicing needs the in-process transport")

    def aborted(self) -> set[int]:
        return self._dead

    @property
    def dead_peers(self) -> set[int]:
        return self._dead

    def abort(self):
        self.close()

    def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            self._wake_w.send(b"\x01")
        except OSError:
            pass
        for sock in self._conns.values():
            try:
                sock.close()
            except OSError:
                pass
        for sock in (self._listener, self._wake_r, self._wake_w):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass
        try:
            self._selector.close()
        except OSError:
            pass


def make_transport(config, fabric: InprocFabric | None = None):
    if config.transport == "inproc":
        if fabric is None:
            if config.nranks == 1:
                fabric = InprocFabric(1)
            else:
                raise ValueError("in-process transport needs a shared fabric")
        return InprocTransport(fabric, config.my_rank, config.bootstrap_timeout)
    return SocketTransport(config)
