"""Controller-to-controller message transports.

Both transports carry :class:`WireMessage` values; the TCP one frames them as
``u32 length ‖ canonical bytes`` on a stream socket. Delivery into nodes
always happens from :meth:`Transport.pump`, called by the node's run loop, so
hosted controllers are only ever touched from one thread.
"""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

from cop.encoding import EncodingError, decode, encode, frame, read_frame

logger = logging.getLogger(__name__)


class TransportFailure(Exception):
    pass


@dataclass(frozen=True)
class WireMessage:
    source: str
    target: str
    payload: bytes
    law: str

    def to_bytes(self) -> bytes:
        return encode({"type": "msg", "source": self.source, "target": self.target,
                       "payload": self.payload, "law": self.law})

    @classmethod
    def from_bytes(cls, data: bytes) -> WireMessage:
        d = decode(data)
        if d.get("type") != "msg":
            raise EncodingError(f"not a wire message: {d.get('type')!r}")
        return cls(d["source"], d["target"], d["payload"], d["law"])


def node_of(address: str) -> str:
    return address.partition("/")[0]


class Endpoint:
    """What a transport needs from a node."""

    node_id: str

    def accepts(self, target: str) -> bool:  # pragma: no cover - interface
        raise NotImplementedError

    def receive_wire(self, msg: WireMessage) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class Transport:
    def __init__(self):
        self.transmitted: list[WireMessage] = []
        self.observers: list[Callable[[WireMessage], None]] = []

    def attach(self, endpoint: Endpoint) -> None:
        raise NotImplementedError

    def send(self, msg: WireMessage) -> None:
        raise NotImplementedError

    def pump(self) -> int:
        raise NotImplementedError

    def pending(self) -> int:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _observe(self, msg: WireMessage) -> None:
        self.transmitted.append(msg)
        for fn in self.observers:
            fn(msg)


class InProcBus(Transport):
    """FIFO in-process bus; deterministic delivery order."""

    def __init__(self):
        super().__init__()
        self._endpoints: dict[str, Endpoint] = {}
        self._queue: deque[WireMessage] = deque()

    def attach(self, endpoint: Endpoint) -> None:
        self._endpoints[endpoint.node_id] = endpoint

    def send(self, msg: WireMessage) -> None:
        ep = self._endpoints.get(node_of(msg.target))
        if ep is None or not ep.accepts(msg.target):
            raise TransportFailure(f"unreachable target {msg.target}")
        self._observe(msg)
        self._queue.append(msg)

    def pump(self) -> int:
        n = 0
        while self._queue:
            msg = self._queue.popleft()
            self._endpoints[node_of(msg.target)].receive_wire(msg)
            n += 1
        return n

    def pending(self) -> int:
        return len(self._queue)


class _WireHandler(socketserver.StreamRequestHandler):
    def handle(self):
        transport: TcpTransport = self.server.transport  # type: ignore[attr-defined]
        while True:
            try:
                raw = read_frame(self.rfile)
            except (EncodingError, OSError) as exc:
                logger.warning("dropping connection from %s: %s", self.client_address, exc)
                return
            if raw is None:
                return
            try:
                msg = WireMessage.from_bytes(raw)
            except (EncodingError, KeyError, TypeError) as exc:
                # unsolicited or malformed traffic is not admitted
                logger.warning("rejecting malformed wire frame: %s", exc)
                continue
            transport._inbox.put(msg)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class TcpTransport(Transport):
    """Length-prefixed stream sockets, one listener per attached node."""

    def __init__(self, host: str = "127.0.0.1", connect_timeout: float = 2.0):
        super().__init__()
        self.host = host
        self.connect_timeout = connect_timeout
        self._endpoints: dict[str, Endpoint] = {}
        self._addresses: dict[str, tuple[str, int]] = {}
        self._servers: list[_Server] = []
        self._conns: dict[str, Any] = {}
        self._inbox: queue.Queue[WireMessage] = queue.Queue()
        self._sent = 0
        self._delivered = 0
        self._lock = threading.Lock()

    def attach(self, endpoint: Endpoint, port: int = 0) -> tuple[str, int]:
        server = _Server((self.host, port), _WireHandler)
        server.transport = self  # type: ignore[attr-defined]
        threading.Thread(target=server.serve_forever, name=f"tcp-{endpoint.node_id}", daemon=True).start()
        self._servers.append(server)
        self._endpoints[endpoint.node_id] = endpoint
        self._addresses[endpoint.node_id] = server.server_address[:2]
        return self._addresses[endpoint.node_id]

    def add_route(self, node_id: str, address: tuple[str, int]) -> None:
        self._addresses[node_id] = address

    def _conn(self, node_id: str):
        conn = self._conns.get(node_id)
        if conn is None:
            addr = self._addresses.get(node_id)
            if addr is None:
                raise TransportFailure(f"no route to node {node_id}")
            sock = socket.create_connection(addr, timeout=self.connect_timeout)
            conn = sock.makefile("wb")
            self._conns[node_id] = conn
        return conn

    def send(self, msg: WireMessage) -> None:
        node_id = node_of(msg.target)
        local = self._endpoints.get(node_id)
        if local is not None and not local.accepts(msg.target):
            raise TransportFailure(f"unreachable target {msg.target}")
        with self._lock:
            try:
                conn = self._conn(node_id)
                conn.write(frame(msg.to_bytes()))
                conn.flush()
            except OSError as exc:
                self._conns.pop(node_id, None)
                raise TransportFailure(f"send to {msg.target} failed: {exc}") from None
            self._sent += 1
        self._observe(msg)

    def pump(self, timeout: float = 0.0) -> int:
        n = 0
        while True:
            try:
                msg = self._inbox.get(timeout=timeout) if n == 0 and timeout else self._inbox.get_nowait()
            except queue.Empty:
                return n
            ep = self._endpoints.get(node_of(msg.target))
            if ep is None:
                logger.warning("message for foreign node %s dropped", msg.target)
            else:
                ep.receive_wire(msg)
            with self._lock:
                self._delivered += 1
            n += 1

    def pending(self) -> int:
        with self._lock:
            return self._sent - self._delivered

    def close(self) -> None:
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        self._conns.clear()
        for server in self._servers:
            server.shutdown()
            server.server_close()
        self._servers.clear()
