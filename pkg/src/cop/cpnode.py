"""Controller-provider node.

The node's local manager is the trusted part of the system: it hosts generic
controllers, turns their inputs into events, logs every event and every
operation to the ledger of the controller's law before any effect leaves the
node, runs the obligation server, and rebuilds failed controllers when an
inspector tells it to.
"""

from __future__ import annotations

import hashlib
import heapq
import hmac
import itertools
import logging
import socket
import socketserver
import threading
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

from cop.controller import Controller, ControllerError, Input, NotActive, Status
from cop.encoding import EncodingError, decode, encode, frame, read_frame
from cop.law import (
    AgentAddress,
    ControllerState,
    Event,
    EventKind,
    Law,
    LawId,
    LawRegistry,
    Operation,
    OpKind,
)
from cop.ledger import EntryKind, Ledger, LedgerEntry, LedgerUnavailable
from cop.transport import Transport, TransportFailure, WireMessage

logger = logging.getLogger(__name__)


class NodeError(Exception):
    pass


class CapacityExceeded(NodeError):
    pass


class UnknownController(NodeError):
    pass


class ReconstructionRace(NodeError):
    pass


class AuthenticationFailed(NodeError):
    pass


class CPUnreachable(NodeError):
    pass


@dataclass(frozen=True)
class ObligationTimer:
    controller: str
    name: str
    due_at: int


class ObligationServer:
    """Per-node timers keyed by (controller, obligation name).

    Re-imposing a pending obligation replaces its timer.
    """

    def __init__(self):
        self._heap: list[tuple[int, int, ObligationTimer]] = []
        self._live: dict[tuple[str, str], int] = {}
        self._counter = itertools.count()

    def impose(self, controller: str, name: str, due_at: int) -> ObligationTimer:
        token = next(self._counter)
        timer = ObligationTimer(controller, name, due_at)
        self._live[(controller, name)] = token
        heapq.heappush(self._heap, (due_at, token, timer))
        return timer

    def cancel(self, controller: str) -> int:
        keys = [k for k in self._live if k[0] == controller]
        for k in keys:
            del self._live[k]
        return len(keys)

    def pending(self) -> list[ObligationTimer]:
        return sorted((t for _, tok, t in self._heap if self._live.get((t.controller, t.name)) == tok),
                      key=lambda t: t.due_at)

    def next_due(self) -> int | None:
        self._discard_dead()
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: int) -> list[ObligationTimer]:
        fired = []
        while True:
            self._discard_dead()
            if not self._heap or self._heap[0][0] > now:
                return fired
            _, token, timer = heapq.heappop(self._heap)
            del self._live[(timer.controller, timer.name)]
            fired.append(timer)

    def _discard_dead(self) -> None:
        while self._heap:
            _, token, timer = self._heap[0]
            if self._live.get((timer.controller, timer.name)) == token:
                return
            heapq.heappop(self._heap)


LedgerResolver = Callable[[LawId], Ledger]


class CPNode:
    def __init__(
        self,
        node_id: str,
        registry: LawRegistry,
        ledgers: LedgerResolver | Mapping[LawId, Ledger],
        transport: Transport,
        clock,
        *,
        capacity: int = 500,
        secret: bytes = b"",
        backlog_limit: int = 256,
        queue_warn: int = 10_000,
        controller_factory: Callable[[AgentAddress, CPNode], Controller] = Controller,
    ):
        self.node_id = node_id
        self.registry = registry
        self._resolve = ledgers if callable(ledgers) else ledgers.__getitem__
        self.transport = transport
        self.clock = clock
        self.capacity = capacity
        self.secret = secret
        self.backlog_limit = backlog_limit
        self.queue_warn = queue_warn
        self.controller_factory = controller_factory

        self.controllers: dict[str, Controller] = {}
        self.obligations = ObligationServer()
        self.lock = threading.RLock()
        self._inbox: dict[str, deque[Input]] = {}
        self._ready: deque[str] = deque()
        self._ready_set: set[str] = set()
        self._ctrl_seq: dict[tuple[LawId, str], int] = {}
        self._backlog: deque[tuple[Ledger, LedgerEntry, Callable[[], None] | None]] = deque()
        self._ids = itertools.count(1)
        self._applied: set[tuple] = set()
        self.events_processed = 0
        transport.attach(self)

    def __repr__(self) -> str:
        return f"<CPNode {self.node_id} controllers={len(self.controllers)}>"

    # --- provisioning ------------------------------------------------------

    def provision_controller(self) -> Controller:
        with self.lock:
            if len(self.controllers) >= self.capacity:
                raise CapacityExceeded(f"{self.node_id} hosts {self.capacity} controllers")
            addr = AgentAddress(self.node_id, f"c{next(self._ids):04d}")
            ctrl = self.controller_factory(addr, self)
            self.controllers[addr.id] = ctrl
            self._inbox[addr.id] = deque()
            return ctrl

    def controller(self, controller_id: str) -> Controller:
        try:
            return self.controllers[controller_id]
        except KeyError:
            raise UnknownController(controller_id) from None

    def replace_controller(self, controller_id: str, ctrl: Controller) -> None:
        """Swap the instance behind an address (used to inject faults)."""
        self.controller(controller_id)
        self.controllers[controller_id] = ctrl

    # --- Host protocol used by controllers ----------------------------------

    def law(self, law_id: LawId) -> Law:
        return self.registry.get(law_id)

    def enqueue(self, ctrl: Controller, item: Input) -> None:
        q = self._inbox[ctrl.id]
        q.append(item)
        if len(q) > self.queue_warn and len(q) % self.queue_warn == 1:
            logger.warning("%s: event queue depth %d", ctrl.id, len(q))
        if ctrl.id not in self._ready_set:
            self._ready_set.add(ctrl.id)
            self._ready.append(ctrl.id)

    def process_pending(self, ctrl: Controller) -> None:
        with self.lock:
            while self._inbox[ctrl.id] and self._flush_backlog():
                self._process_one(self.controllers[ctrl.id])

    def perform(self, ctrl: Controller, op: Operation, event: Event) -> None:
        source = event.source if event.kind is EventKind.ARRIVED else None
        self._log(ctrl.id, ctrl.law, EntryKind.OPERATION, op.to_bytes(),
                  lambda: self._effect(ctrl.id, ctrl.law, op, source))

    # --- transport endpoint ------------------------------------------------

    def accepts(self, target: str) -> bool:
        ctrl = self.controllers.get(target)
        return ctrl is not None and ctrl.status in (Status.ACTIVE, Status.UNDER_RECONSTRUCTION)

    def receive_wire(self, msg: WireMessage) -> None:
        ctrl = self.controllers.get(msg.target)
        if ctrl is None:
            logger.warning("%s: message for unknown controller %s dropped", self.node_id, msg.target)
            return
        try:
            ctrl.receive_message(msg.source, msg.payload)
        except NotActive:
            logger.info("%s: message from %s to inactive %s dropped", self.node_id, msg.source, msg.target)

    # --- interception and logging -------------------------------------------

    @property
    def stalled(self) -> bool:
        return len(self._backlog) > self.backlog_limit

    @property
    def backlog(self) -> int:
        return len(self._backlog)

    def _next_ctrl_seq(self, law: LawId, controller: str, ledger: Ledger) -> int:
        key = (law, controller)
        if key not in self._ctrl_seq:
            self._ctrl_seq[key] = ledger.last_ctrl_seq(controller)
        self._ctrl_seq[key] += 1
        return self._ctrl_seq[key]

    def _log(self, controller: str, law: LawId, kind: EntryKind, body: bytes,
             effect: Callable[[], None] | None = None) -> None:
        ledger = self._resolve(law)
        entry = LedgerEntry(law=law, controller=controller, ctrl_seq=self._next_ctrl_seq(law, controller, ledger),
                            kind=kind, body=body, timestamp=self.clock.now(), node=self.node_id)
        if not self._backlog:
            try:
                ledger.append(entry)
            except LedgerUnavailable as exc:
                logger.warning("%s: ledger for %s unavailable (%s); buffering", self.node_id, law, exc)
            else:
                if effect is not None:
                    effect()
                return
        self._backlog.append((ledger, entry, effect))

    def _flush_backlog(self) -> bool:
        """Retry buffered appends in order; True once the node may proceed."""
        while self._backlog:
            ledger, entry, effect = self._backlog[0]
            try:
                ledger.append(entry)
            except LedgerUnavailable:
                return not self.stalled
            self._backlog.popleft()
            if effect is not None:
                effect()
        return True

    def intercept_and_log(self, controller: str, item: Event | Operation) -> None:
        """Log an event or executed operation on behalf of a hosted controller."""
        ctrl = self.controller(controller)
        kind = EntryKind.EVENT if isinstance(item, Event) else EntryKind.OPERATION
        self._log(ctrl.id, ctrl.law, kind, item.to_bytes())

    def _effect(self, controller: str, law: LawId, op: Operation, source: str | None) -> None:
        if op.kind in (OpKind.FORWARD, OpKind.SEND_MESSAGE):
            msg = WireMessage(controller, op.args["target"], op.args["payload"], law)
            try:
                self.transport.send(msg)
            except TransportFailure as exc:
                logger.info("%s: %s", controller, exc)
                ctrl = self.controllers.get(controller)
                if ctrl is not None and ctrl.status is Status.ACTIVE:
                    ctrl.report_exception(op.args["target"], op.to_bytes())
        elif op.kind is OpKind.DELIVER:
            ctrl = self.controllers.get(controller)
            if ctrl is not None and ctrl.actor is not None:
                ctrl.actor.deliver(source, op.args["payload"])
        elif op.kind is OpKind.IMPOSE_OBLIGATION:
            self.impose_obligation(controller, op.args["name"], op.args["dt_ms"])

    # --- event processing ----------------------------------------------------

    def has_work(self) -> bool:
        return any(self._inbox[c] for c in self._ready_set) or bool(self._backlog)

    def step(self) -> bool:
        """Process one pending event of one controller; False if nothing ran."""
        with self.lock:
            if not self._flush_backlog():
                return False
            while self._ready:
                cid = self._ready.popleft()
                self._ready_set.discard(cid)
                if not self._inbox[cid]:
                    continue
                self._process_one(self.controllers[cid])
                if self._inbox[cid] and cid not in self._ready_set:
                    self._ready_set.add(cid)
                    self._ready.append(cid)
                return True
            return False

    def _process_one(self, ctrl: Controller) -> None:
        item = self._inbox[ctrl.id].popleft()
        if ctrl.status is Status.QUIT:
            logger.info("%s: %s input dropped, controller has quit", ctrl.id, item.kind.value)
            return
        event = item.to_event(ctrl.id, ctrl.next_seq)
        ctrl.next_seq += 1
        law = ctrl.law
        self._log(ctrl.id, law, EntryKind.EVENT, event.to_bytes())
        try:
            ctrl.handle(event)
        except Exception:
            logger.exception("%s crashed while handling %s", ctrl.id, event.kind.value)
        self._log(ctrl.id, law, EntryKind.RULING_END, b"")
        self.events_processed += 1
        if ctrl.status is Status.QUIT:
            self.obligations.cancel(ctrl.id)

    # --- obligations ------------------------------------------------------

    def impose_obligation(self, controller: str, name: str, dt_ms: int) -> ObligationTimer:
        self.controller(controller)
        return self.obligations.impose(controller, name, self.clock.now() + int(dt_ms))

    def next_obligation_due(self) -> int | None:
        return self.obligations.next_due()

    def fire_due_obligations(self) -> int:
        fired = 0
        with self.lock:
            for timer in self.obligations.pop_due(self.clock.now()):
                ctrl = self.controllers.get(timer.controller)
                if ctrl is None:
                    continue
                try:
                    ctrl.raise_obligation_due(timer.name)
                except NotActive:
                    continue
                fired += 1
        return fired

    # --- recovery --------------------------------------------------------

    def reconstruct(self, target: str, law: LawId, csv: ControllerState, *, at_ctrl_seq: int | None = None,
                    active: bool = True) -> bool:
        """Replace ``target`` with an authentic controller holding ``csv``.

        Returns False when the same (target, at_ctrl_seq) was already applied.
        """
        with self.lock:
            old = self.controller(target)
            key = ("reconstruct", target, at_ctrl_seq)
            if at_ctrl_seq is not None and key in self._applied:
                return False
            if old.status is Status.UNDER_RECONSTRUCTION:
                raise ReconstructionRace(f"{target} is already being reconstructed")
            self.registry.get(law)
            old.status = Status.UNDER_RECONSTRUCTION
            try:
                fresh = Controller(old.address, self)
                fresh.law = law
                fresh.state = ControllerState(csv)
                fresh.actor = old.actor
                fresh.next_seq = old.next_seq
                self.obligations.cancel(target)
                self.controllers[target] = fresh
                body = encode({"law": law, "csv": fresh.state.to_wire(), "at_ctrl_seq": at_ctrl_seq,
                               "active": active, "next_seq": fresh.next_seq})
                self._log(target, law, EntryKind.RECONSTRUCTED, body)
                fresh.status = Status.ACTIVE if active else Status.QUIT
            except BaseException:
                old.status = Status.ACTIVE
                raise
            if at_ctrl_seq is not None:
                self._applied.add(key)
            if fresh.status is Status.ACTIVE and self._inbox[target] and target not in self._ready_set:
                self._ready_set.add(target)
                self._ready.append(target)
            return True

    def execute_op(self, target: str, op: Operation, *, at_ctrl_seq: int | None = None, index: int = 0,
                   source: str | None = None) -> bool:
        """Carry out ``op`` on behalf of ``target`` (repair of an illegal inaction)."""
        with self.lock:
            ctrl = self.controller(target)
            key = ("execute", target, at_ctrl_seq, index)
            if at_ctrl_seq is not None and key in self._applied:
                return False
            body = encode({"op": op.to_wire(), "for_ctrl_seq": at_ctrl_seq, "index": index})

            def effect():
                if op.kind is OpKind.SET_TERM:
                    ctrl.state = ctrl.state.with_term(op.args["key"], op.args["value"])
                elif op.kind is OpKind.QUIT_SELF:
                    ctrl.status = Status.QUIT
                    self.obligations.cancel(target)
                else:
                    self._effect(target, ctrl.law, op, source)

            self._log(target, ctrl.law, EntryKind.REPAIR, body, effect)
            if at_ctrl_seq is not None:
                self._applied.add(key)
            return True

    # --- control protocol --------------------------------------------------

    def handle_control(self, data: bytes) -> bytes:
        """Authenticate and execute one inspector command; returns the response frame body."""
        try:
            req = open_request(data, self.secret)
            result = self._dispatch_control(req)
            resp = {"ok": True, "applied": result}
        except (NodeError, ControllerError, EncodingError, KeyError, ValueError, TypeError) as exc:
            resp = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        return encode(resp)

    def _dispatch_control(self, req: dict[str, Any]) -> bool:
        kind = req["type"]
        if kind == "RECONSTRUCT":
            return self.reconstruct(req["controller"], req["law"], ControllerState(req["csv"]),
                                    at_ctrl_seq=req["at_ctrl_seq"], active=req["active"])
        if kind == "EXECUTE_OP":
            return self.execute_op(req["controller"], Operation.from_wire(req["op"]),
                                   at_ctrl_seq=req["at_ctrl_seq"], index=req["index"], source=req["source"])
        raise ValueError(f"unknown control request {kind!r}")


# --- control wire format ---------------------------------------------------

def _mac(secret: bytes, body: bytes) -> bytes:
    return hmac.new(secret, body, hashlib.sha256).digest()


def seal_request(req: dict[str, Any], secret: bytes) -> bytes:
    body = encode(req)
    return encode({"req": body, "mac": _mac(secret, body)})


def open_request(data: bytes, secret: bytes) -> dict[str, Any]:
    outer = decode(data)
    body, mac = outer["req"], outer["mac"]
    if not hmac.compare_digest(mac, _mac(secret, body)):
        raise AuthenticationFailed("bad control request signature")
    return decode(body)


def reconstruct_request(controller: str, law: LawId, csv: ControllerState, at_ctrl_seq: int | None,
                        active: bool = True) -> dict[str, Any]:
    return {"type": "RECONSTRUCT", "controller": controller, "law": law, "csv": ControllerState(csv).to_wire(),
            "at_ctrl_seq": at_ctrl_seq, "active": active}


def execute_op_request(controller: str, op: Operation, at_ctrl_seq: int | None, index: int,
                       source: str | None = None) -> dict[str, Any]:
    return {"type": "EXECUTE_OP", "controller": controller, "op": op.to_wire(), "at_ctrl_seq": at_ctrl_seq,
            "index": index, "source": source}


_REMOTE_ERRORS = {
    "UnknownController": UnknownController,
    "ReconstructionRace": ReconstructionRace,
    "AuthenticationFailed": AuthenticationFailed,
}

Channel = Callable[[bytes], bytes]


class ControlClient:
    """Inspector-side client for node control requests.

    ``routes`` maps node ids to channels (in-process: ``node.handle_control``;
    remote: :func:`tcp_channel`). Every request sent is recorded in ``sent``.
    """

    def __init__(self, routes: Mapping[str, Channel], secret: bytes = b"", retries: int = 3,
                 backoff: float = 0.05):
        self.routes = dict(routes)
        self.secret = secret
        self.retries = retries
        self.backoff = backoff
        self.sent: list[dict[str, Any]] = []

    def request(self, req: dict[str, Any]) -> bool:
        node_id = req["controller"].partition("/")[0]
        channel = self.routes.get(node_id)
        if channel is None:
            raise CPUnreachable(f"no route to node {node_id}")
        data = seal_request(req, self.secret)
        self.sent.append(req)
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = decode(channel(data))
                break
            except (OSError, EncodingError) as exc:
                last = exc
                threading.Event().wait(self.backoff * (2 ** attempt))
        else:
            raise CPUnreachable(f"node {node_id}: {last}")
        if not resp["ok"]:
            raise _REMOTE_ERRORS.get(resp["error"], NodeError)(resp["message"])
        return resp["applied"]

    def reconstruct(self, controller: str, law: LawId, csv: ControllerState, at_ctrl_seq: int | None,
                    active: bool = True) -> bool:
        return self.request(reconstruct_request(controller, law, csv, at_ctrl_seq, active))

    def execute_op(self, controller: str, op: Operation, at_ctrl_seq: int | None, index: int,
                   source: str | None = None) -> bool:
        return self.request(execute_op_request(controller, op, at_ctrl_seq, index, source))


class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        node: CPNode = self.server.node  # type: ignore[attr-defined]
        while True:
            try:
                data = read_frame(self.rfile)
            except (EncodingError, OSError):
                return
            if data is None:
                return
            self.wfile.write(frame(node.handle_control(data)))


class ControlServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, node: CPNode, host: str = "127.0.0.1", port: int = 0):
        self.node = node
        super().__init__((host, port), _ControlHandler)

    def start(self) -> ControlServer:
        threading.Thread(target=self.serve_forever, name=f"control-{self.node.node_id}", daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def tcp_channel(address: tuple[str, int], timeout: float = 5.0) -> Channel:
    def call(data: bytes) -> bytes:
        with socket.create_connection(address, timeout=timeout) as sock:
            f = sock.makefile("rwb")
            f.write(frame(data))
            f.flush()
            resp = read_frame(f)
            if resp is None:
                raise ConnectionError("control connection closed")
            return resp

    return call
