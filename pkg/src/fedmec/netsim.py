"""Virtual-clock network of named endpoints joined by latency/bandwidth links.

Endpoints are objects with a ``name`` and an ``on_frame(net, src, dst, frame)``
method.  Addresses may carry a ``#channel`` suffix (a UE-associated logical
connection on a shared link) and endpoints may be reachable under extra
aliases, e.g. the IPv4 address a UE was assigned at attach.  Links and
handler dispatch always use the base endpoint name.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

from fedmec.errors import LivelockGuard, NoRoute
from fedmec.wire import frame_type

log = logging.getLogger(__name__)

DEFAULT_EVENT_CAP = 10**6


class Endpoint(Protocol):
    name: str

    def on_frame(self, net: "Network", src: str, dst: str, frame: bytes) -> None: ...


@dataclass
class Link:
    a: str
    b: str
    latency_ms: float
    bandwidth_mbps: float
    connection_established: bool = False

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError(f"negative latency on {self.a}<->{self.b}")
        if self.bandwidth_mbps <= 0:
            raise ValueError(f"bandwidth must be positive on {self.a}<->{self.b}")


def transfer_time(link: Link, payload_bytes: int, first_use: bool) -> float:
    """One-way delivery time in ms: propagation + serialization (+ one RTT to open)."""
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    t = link.latency_ms + (payload_bytes * 8) / (link.bandwidth_mbps * 1000)
    if first_use:
        t += 2 * link.latency_ms
    return t


@dataclass(order=True)
class Event:
    deliver_at_ms: float
    seq: int
    destination: str = field(compare=False)
    frame: bytes = field(compare=False, repr=False)
    source: str = field(compare=False, default="")
    sent_at_ms: float = field(compare=False, default=0.0)


@dataclass(frozen=True)
class TraceRecord:
    sent_ms: float
    deliver_ms: float
    src: str
    dst: str
    msg: str
    size: int

    def line(self) -> str:
        return f"{self.sent_ms!r},{self.deliver_ms!r},{self.src},{self.dst},{self.msg},{self.size}"


def base_name(address: str) -> str:
    return address.split("#", 1)[0]


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class _Topology:
    """Endpoint, alias and link bookkeeping shared by both transports."""

    def __init__(self):
        self.endpoints: dict[str, Endpoint] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.aliases: dict[str, str] = {}
        self.trace: list[TraceRecord] = []
        self.no_route: list[tuple[str, str, int]] = []
        self.marks: dict[str, float] = {}

    def add_endpoint(self, endpoint: Endpoint) -> Endpoint:
        if endpoint.name in self.endpoints:
            raise ValueError(f"duplicate endpoint {endpoint.name}")
        self.endpoints[endpoint.name] = endpoint
        return endpoint

    def add_link(self, a: str, b: str, latency_ms: float, bandwidth_mbps: float,
                 established: bool = False) -> Link:
        link = Link(a, b, latency_ms, bandwidth_mbps, established)
        self.links[_pair(a, b)] = link
        return link

    def remove_link(self, a: str, b: str) -> None:
        self.links.pop(_pair(a, b), None)

    def link(self, a: str, b: str) -> Optional[Link]:
        return self.links.get(_pair(self.resolve(a), self.resolve(b)))

    def alias(self, address: str, endpoint_name: str) -> None:
        self.aliases[address] = endpoint_name

    def unalias(self, address: str) -> None:
        self.aliases.pop(address, None)

    def resolve(self, address: str) -> str:
        base = base_name(address)
        return self.aliases.get(base, base)

    def mark(self, label: str, at: Optional[float] = None) -> None:
        """Record an instrumentation instant (first write wins)."""
        self.marks.setdefault(label, self.now_ms if at is None else at)

    def _route(self, src: str, dst: str, frame: bytes) -> Link:
        link = self.link(src, dst)
        if link is None:
            self.no_route.append((src, dst, len(frame)))
            raise NoRoute(f"no link {self.resolve(src)} <-> {self.resolve(dst)}")
        return link

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for rec in self.trace:
            h.update(rec.line().encode())
            h.update(b"\n")
        return h.hexdigest()


class Network(_Topology):
    """Single-threaded discrete-event scheduler driving endpoint handlers."""

    def __init__(self, event_cap: int = DEFAULT_EVENT_CAP):
        super().__init__()
        self.now_ms = 0.0
        self.event_cap = event_cap
        self.delivered = 0
        self._queue: list[Event] = []
        self._seq = 0

    def send(self, src: str, dst: str, frame: bytes) -> Event:
        link = self._route(src, dst, frame)
        first = not link.connection_established
        link.connection_established = True
        ev = Event(
            deliver_at_ms=self.now_ms + transfer_time(link, len(frame), first),
            seq=self._seq,
            destination=dst,
            frame=frame,
            source=src,
            sent_at_ms=self.now_ms,
        )
        self._seq += 1
        heapq.heappush(self._queue, ev)
        self.trace.append(
            TraceRecord(self.now_ms, ev.deliver_at_ms, src, dst, frame_type(frame).__name__, len(frame))
        )
        return ev

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> Event:
        ev = heapq.heappop(self._queue)
        self.now_ms = ev.deliver_at_ms
        self.delivered += 1
        if self.delivered > self.event_cap:
            raise LivelockGuard(f"more than {self.event_cap} events delivered")
        target = self.endpoints.get(self.resolve(ev.destination))
        if target is None:
            log.warning("frame for unknown endpoint %s dropped", ev.destination)
        else:
            target.on_frame(self, ev.source, ev.destination, ev.frame)
        return ev

    def run_until_idle(self) -> float:
        while self._queue:
            self.step()
        return self.now_ms

    def advance(self, ms: float) -> float:
        """Move an idle clock forward (e.g. to age watches or tokens)."""
        if self._queue:
            raise RuntimeError("advance() needs an idle queue")
        if ms < 0:
            raise ValueError("clock never runs backwards")
        self.now_ms += ms
        return self.now_ms


# ---------------------------------------------------------------------------
# loopback transport

_ENVELOPE = struct.Struct("!HHI")


class LoopbackNetwork(_Topology):
    """Same surface as Network, but frames cross real localhost TCP sockets.

    Each endpoint gets a listening socket and one serving thread per
    accepted connection.  Handlers run under a per-endpoint lock.  Timings
    come from the wall clock and are reported, never asserted.
    """

    def __init__(self, ports: Optional[dict[str, int]] = None):
        super().__init__()
        self._ports_wanted = dict(ports or {})
        self._ports: dict[str, int] = {}
        self._servers: dict[str, socket.socket] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._clients: dict[tuple[str, str], socket.socket] = {}
        self._client_lock = threading.Lock()
        self._state = threading.Condition()
        self._in_flight = 0
        self._closed = False
        self._threads: list[threading.Thread] = []
        self._t0 = time.monotonic()
        self.errors: list[BaseException] = []

    @property
    def now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def add_endpoint(self, endpoint: Endpoint) -> Endpoint:
        super().add_endpoint(endpoint)
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(("127.0.0.1", self._ports_wanted.get(endpoint.name, 0)))
        srv.listen()
        self._servers[endpoint.name] = srv
        self._ports[endpoint.name] = srv.getsockname()[1]
        self._locks[endpoint.name] = threading.Lock()
        t = threading.Thread(target=self._accept_loop, args=(endpoint.name, srv), daemon=True)
        t.start()
        self._threads.append(t)
        return endpoint

    def port(self, name: str) -> int:
        return self._ports[name]

    def send(self, src: str, dst: str, frame: bytes) -> None:
        link = self._route(src, dst, frame)
        link.connection_established = True
        target = self.resolve(dst)
        s, d = src.encode(), dst.encode()
        payload = _ENVELOPE.pack(len(s), len(d), len(frame)) + s + d + frame
        with self._state:
            self._in_flight += 1
        now = self.now_ms
        self.trace.append(TraceRecord(now, now, src, dst, frame_type(frame).__name__, len(frame)))
        key = (base_name(src), target)
        with self._client_lock:
            sock = self._clients.get(key)
            if sock is None:
                sock = socket.create_connection(("127.0.0.1", self._ports[target]))
                self._clients[key] = sock
            sock.sendall(payload)

    def _accept_loop(self, name: str, srv: socket.socket) -> None:
        while not self._closed:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(name, conn), daemon=True)
            t.start()
            self._threads.append(t)

    @staticmethod
    def _read_exact(conn: socket.socket, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("closed")
            buf.extend(chunk)
        return bytes(buf)

    def _serve(self, name: str, conn: socket.socket) -> None:
        endpoint = self.endpoints[name]
        with conn:
            while True:
                try:
                    ls, ld, lf = _ENVELOPE.unpack(self._read_exact(conn, _ENVELOPE.size))
                    src = self._read_exact(conn, ls).decode()
                    dst = self._read_exact(conn, ld).decode()
                    frame = self._read_exact(conn, lf)
                except (ConnectionError, OSError):
                    return
                try:
                    with self._locks[name]:
                        endpoint.on_frame(self, src, dst, frame)
                except BaseException as exc:  # surfaced by run_until_idle
                    log.exception("handler %s failed", name)
                    self.errors.append(exc)
                finally:
                    with self._state:
                        self._in_flight -= 1
                        self._state.notify_all()

    def run_until_idle(self, timeout_s: float = 30.0) -> float:
        deadline = time.monotonic() + timeout_s
        with self._state:
            while self._in_flight:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"{self._in_flight} frames still in flight")
                self._state.wait(left)
        if self.errors:
            raise self.errors[0]
        return self.now_ms

    def close(self) -> None:
        self._closed = True
        for sock in list(self._clients.values()) + list(self._servers.values()):
            try:
                sock.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

