"""Law evaluation contract: events, controller state, operations and rulings.

A law maps an (event, state) pair to a ruling: an ordered list of operations
plus the state that replaces the current one. Laws are plain Python classes
deriving from :class:`Law`; they see nothing but the event and the state they
are handed.
"""

from __future__ import annotations

import enum
import hashlib
import inspect
import logging
import threading
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any, Union

from cop.encoding import decode, encode

logger = logging.getLogger(__name__)

TermValue = Union[int, str, bytes]
ControllerId = str
LawId = str


class LawError(Exception):
    pass


class UnknownLaw(LawError):
    pass


class DuplicateLawId(LawError):
    pass


class NonDeterministicLaw(LawError):
    pass


class MalformedEvent(LawError):
    pass


@dataclass(frozen=True, order=True)
class AgentAddress:
    """Globally unique controller address; its string form is the controller id."""

    cpnode: str
    controller: str

    def __post_init__(self):
        if not self.cpnode or not self.controller or "/" in self.cpnode or "/" in self.controller:
            raise ValueError(f"bad address parts: {self.cpnode!r}, {self.controller!r}")

    @property
    def id(self) -> ControllerId:
        return f"{self.cpnode}/{self.controller}"

    def __str__(self) -> str:
        return self.id

    @classmethod
    def parse(cls, text: str) -> AgentAddress:
        node, sep, ctrl = text.partition("/")
        if not sep:
            raise ValueError(f"not an agent address: {text!r}")
        return cls(node, ctrl)


class EventKind(str, enum.Enum):
    ADOPTED = "adopted"
    ARRIVED = "arrived"
    SENT = "sent"
    OBLIGATION_DUE = "obligationDue"
    EXCEPTION = "exception"
    QUIT = "quit"


class OpKind(str, enum.Enum):
    SET_TERM = "SetTerm"
    FORWARD = "Forward"
    DELIVER = "Deliver"
    SEND_MESSAGE = "SendMessage"
    IMPOSE_OBLIGATION = "ImposeObligation"
    QUIT_SELF = "QuitSelf"


def _check_term(key: Any, value: Any) -> None:
    if not isinstance(key, str):
        raise TypeError(f"term key must be str, got {type(key).__name__}")
    if isinstance(value, bool) or not isinstance(value, (int, str, bytes)):
        raise TypeError(f"term {key!r}: value must be int, str or bytes, got {type(value).__name__}")


class ControllerState(Mapping):
    """Immutable flat key/value term set of a controller."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[str, TermValue] | None = None):
        terms = dict(terms or {})
        for k, v in terms.items():
            _check_term(k, v)
        self._terms = terms
        self._hash: int | None = None

    def __getitem__(self, key: str) -> TermValue:
        return self._terms[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ControllerState):
            return self._terms == other._terms
        if isinstance(other, Mapping):
            return self._terms == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.to_bytes())
        return self._hash

    def __repr__(self) -> str:
        return f"ControllerState({self._terms!r})"

    def with_term(self, key: str, value: TermValue) -> ControllerState:
        terms = dict(self._terms)
        terms[key] = value
        return ControllerState(terms)

    def to_wire(self) -> dict[str, TermValue]:
        return dict(self._terms)

    def to_bytes(self) -> bytes:
        return encode(self._terms)

    @classmethod
    def from_wire(cls, data: Mapping[str, TermValue]) -> ControllerState:
        return cls(data)


EMPTY_STATE = ControllerState()


@dataclass(frozen=True)
class Event:
    kind: EventKind
    controller: ControllerId
    seq: int
    source: ControllerId | None = None
    target: ControllerId | None = None
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.seq < 1:
            raise MalformedEvent(f"event seq must be >= 1, got {self.seq}")
        if self.kind is EventKind.SENT and not self.target:
            raise MalformedEvent("sent event without target")
        if self.kind is EventKind.ARRIVED and not self.source:
            raise MalformedEvent("arrived event without source")
        if not isinstance(self.payload, bytes):
            object.__setattr__(self, "payload", bytes(self.payload))

    def to_wire(self) -> dict[str, Any]:
        return {
            "type": "event",
            "kind": self.kind.value,
            "controller": self.controller,
            "seq": self.seq,
            "source": self.source,
            "target": self.target,
            "payload": self.payload,
        }

    def to_bytes(self) -> bytes:
        return encode(self.to_wire())

    @classmethod
    def from_wire(cls, d: Mapping[str, Any]) -> Event:
        if d.get("type") != "event":
            raise MalformedEvent(f"not an event record: {d.get('type')!r}")
        return cls(
            kind=EventKind(d["kind"]),
            controller=d["controller"],
            seq=d["seq"],
            source=d["source"],
            target=d["target"],
            payload=d["payload"],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Event:
        return cls.from_wire(decode(data))

    def amount(self) -> int | None:
        """Payload read as a decimal integer, or None if it is not one."""
        return parse_amount(self.payload)


def parse_amount(payload: bytes) -> int | None:
    try:
        text = payload.decode("ascii")
    except UnicodeDecodeError:
        return None
    body = text[1:] if text[:1] in ("-", "+") else text
    if not body.isdigit() or len(body) > 18:
        return None
    return int(text)


_OP_ARGS = {
    OpKind.SET_TERM: ("key", "value"),
    OpKind.FORWARD: ("payload", "target"),
    OpKind.DELIVER: ("payload",),
    OpKind.SEND_MESSAGE: ("payload", "target"),
    OpKind.IMPOSE_OBLIGATION: ("dt_ms", "name"),
    OpKind.QUIT_SELF: (),
}


@dataclass(frozen=True, eq=False)
class Operation:
    kind: OpKind
    args: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = OpKind(self.kind)
        object.__setattr__(self, "kind", kind)
        args = dict(self.args)
        if tuple(sorted(args)) != _OP_ARGS[kind]:
            raise ValueError(f"{kind.value} takes args {_OP_ARGS[kind]}, got {tuple(sorted(args))}")
        if kind is OpKind.SET_TERM:
            _check_term(args["key"], args["value"])
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "_bytes", encode(self.to_wire()))

    @classmethod
    def set_term(cls, key: str, value: TermValue) -> Operation:
        return cls(OpKind.SET_TERM, {"key": key, "value": value})

    @classmethod
    def forward(cls, target: ControllerId, payload: bytes) -> Operation:
        return cls(OpKind.FORWARD, {"target": str(target), "payload": bytes(payload)})

    @classmethod
    def deliver(cls, payload: bytes) -> Operation:
        return cls(OpKind.DELIVER, {"payload": bytes(payload)})

    @classmethod
    def send_message(cls, target: ControllerId, payload: bytes) -> Operation:
        return cls(OpKind.SEND_MESSAGE, {"target": str(target), "payload": bytes(payload)})

    @classmethod
    def impose_obligation(cls, name: str, dt_ms: int) -> Operation:
        return cls(OpKind.IMPOSE_OBLIGATION, {"name": name, "dt_ms": int(dt_ms)})

    @classmethod
    def quit_self(cls) -> Operation:
        return cls(OpKind.QUIT_SELF, {})

    def to_wire(self) -> dict[str, Any]:
        return {"type": "op", "kind": self.kind.value, "args": dict(self.args)}

    def to_bytes(self) -> bytes:
        return self._bytes  # type: ignore[attr-defined]

    @classmethod
    def from_wire(cls, d: Mapping[str, Any]) -> Operation:
        if d.get("type") != "op":
            raise ValueError(f"not an operation record: {d.get('type')!r}")
        return cls(OpKind(d["kind"]), d["args"])

    @classmethod
    def from_bytes(cls, data: bytes) -> Operation:
        return cls.from_wire(decode(data))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Operation):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(self.args.items()))
        return f"{self.kind.value}({inner})"


@dataclass(frozen=True)
class Ruling:
    operations: tuple[Operation, ...] = ()
    new_state: ControllerState = EMPTY_STATE

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))
        if not isinstance(self.new_state, ControllerState):
            object.__setattr__(self, "new_state", ControllerState(self.new_state))

    def to_wire(self) -> dict[str, Any]:
        return {
            "type": "ruling",
            "ops": [op.to_wire() for op in self.operations],
            "state": self.new_state.to_wire(),
        }

    @classmethod
    def from_wire(cls, d: Mapping[str, Any]) -> Ruling:
        return cls(tuple(Operation.from_wire(o) for o in d["ops"]), ControllerState(d["state"]))

    @classmethod
    def empty(cls, state: ControllerState) -> Ruling:
        return cls((), state)


def canonical_bytes(ruling: Ruling) -> bytes:
    return encode(ruling.to_wire())


class RulingBuilder:
    """Accumulates operations and the replacement state while a rule fires.

    ``set`` both records a SetTerm operation and updates the working state, so
    the built ruling's new state is always consistent with its SetTerm list.
    """

    def __init__(self, event: Event, state: ControllerState):
        self.event = event
        self._terms = dict(state)
        self._ops: list[Operation] = []

    def get(self, key: str, default: TermValue | None = None) -> TermValue | None:
        return self._terms.get(key, default)

    def set(self, key: str, value: TermValue) -> None:
        self._ops.append(Operation.set_term(key, value))
        self._terms[key] = value

    def forward(self, target: ControllerId | None = None, payload: bytes | None = None) -> None:
        target = target if target is not None else self.event.target
        if target is None:
            raise LawError("forward needs a target")
        self._ops.append(Operation.forward(target, self.event.payload if payload is None else payload))

    def deliver(self, payload: bytes | None = None) -> None:
        self._ops.append(Operation.deliver(self.event.payload if payload is None else payload))

    def send(self, target: ControllerId, payload: bytes) -> None:
        self._ops.append(Operation.send_message(target, payload))

    def impose(self, name: str, dt_ms: int) -> None:
        self._ops.append(Operation.impose_obligation(name, dt_ms))

    def quit(self) -> None:
        self._ops.append(Operation.quit_self())

    def build(self) -> Ruling:
        return Ruling(tuple(self._ops), ControllerState(self._terms))


class Law:
    """Base class for laws.

    Subclasses set ``law_id`` and implement :meth:`rule`, returning a
    :class:`Ruling` or None (None means no rule fired). Constructor keyword
    arguments become law parameters and take part in the version hash.
    """

    law_id: LawId = ""

    def __init__(self, law_id: LawId | None = None, **params: Any):
        if law_id is not None:
            self.law_id = law_id
        if not self.law_id:
            raise LawError(f"{type(self).__name__} has no law id")
        self.params = params
        self._version_hash: str | None = None

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        raise NotImplementedError

    def evaluate(self, event: Event, state: ControllerState) -> Ruling:
        try:
            ruling = self.rule(event, state)
        except Exception:
            # a law that raises is treated as having no applicable rule;
            # deterministic, so controller and inspector agree
            logger.warning("law %s raised on %s event; empty ruling", self.law_id, event.kind.value, exc_info=True)
            ruling = None
        return ruling if ruling is not None else Ruling.empty(state)

    @property
    def version_hash(self) -> str:
        if self._version_hash is None:
            cls = type(self)
            try:
                source = inspect.getsource(cls)
            except (OSError, TypeError):
                source = ""
            definition = {
                "id": self.law_id,
                "impl": f"{cls.__module__}.{cls.__qualname__}",
                "source": source,
                "params": _params_wire(self.params),
            }
            self._version_hash = hashlib.sha256(encode(definition)).hexdigest()
        return self._version_hash

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.law_id!r}, {self.params!r})"


def _params_wire(params: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in params.items():
        out[k] = str(v) if isinstance(v, AgentAddress) else v
    return out


def _probe_pairs() -> list[tuple[Event, ControllerState]]:
    me, peer = "probe/a", "probe/b"
    events = [
        Event(EventKind.ADOPTED, me, 1, payload=b""),
        Event(EventKind.ADOPTED, me, 1, payload=b"secret"),
        Event(EventKind.SENT, me, 2, source=me, target=peer, payload=b"10"),
        Event(EventKind.SENT, me, 2, source=me, target=peer, payload=b"acquire"),
        Event(EventKind.ARRIVED, me, 2, source=peer, target=me, payload=b"10"),
        Event(EventKind.OBLIGATION_DUE, me, 3, payload=b"lease"),
        Event(EventKind.EXCEPTION, me, 3, source=peer, payload=b""),
        Event(EventKind.QUIT, me, 4),
    ]
    states = [EMPTY_STATE, ControllerState({"budget": 1000, "holding": 1, "lock": peer})]
    return [(e, s) for e in events for s in states]


class LawRegistry:
    """Write-once registry resolving law ids to definitions."""

    def __init__(self):
        self._laws: dict[LawId, Law] = {}
        self._lock = threading.Lock()

    def register(self, law: Law) -> LawId:
        with self._lock:
            existing = self._laws.get(law.law_id)
            if existing is not None:
                if existing.version_hash != law.version_hash:
                    raise DuplicateLawId(
                        f"law {law.law_id!r} already registered with hash {existing.version_hash[:12]}"
                    )
                return law.law_id
            _check_deterministic(law)
            self._laws[law.law_id] = law
            return law.law_id

    def get(self, law_id: LawId) -> Law:
        try:
            return self._laws[law_id]
        except KeyError:
            raise UnknownLaw(law_id) from None

    def __contains__(self, law_id: object) -> bool:
        return law_id in self._laws

    def ids(self) -> list[LawId]:
        return sorted(self._laws)

    def evaluate(self, law_id: LawId, event: Event, state: ControllerState) -> Ruling:
        return self.get(law_id).evaluate(event, state)


def _check_deterministic(law: Law) -> None:
    for event, state in _probe_pairs():
        first = canonical_bytes(law.evaluate(event, state))
        second = canonical_bytes(law.evaluate(event, state))
        if first != second:
            raise NonDeterministicLaw(f"law {law.law_id!r} gave two rulings for one {event.kind.value} probe")
