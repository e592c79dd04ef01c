"""The LGI controller: a per-agent surrogate that evaluates its law on each
event and carries out the ruling.

Controllers are untrusted. They never see the ledger or the transport; every
operation they carry out goes through the hosting node's interceptor
(:class:`Host`), and the node, not the controller, builds and logs events.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Protocol

from cop.law import (
    EMPTY_STATE,
    AgentAddress,
    ControllerState,
    Event,
    EventKind,
    Law,
    LawId,
    Operation,
    OpKind,
    Ruling,
)

logger = logging.getLogger(__name__)


class ControllerError(Exception):
    pass


class NotActive(ControllerError):
    pass


class AlreadyAdopted(ControllerError):
    pass


class Rejected(ControllerError):
    pass


class Status(str, enum.Enum):
    GENERIC = "generic"
    ACTIVE = "active"
    QUIT = "quit"
    UNDER_RECONSTRUCTION = "under-reconstruction"


@dataclass(frozen=True)
class Input:
    """Something that will become the controller's next event."""

    kind: EventKind
    source: str | None = None
    target: str | None = None
    payload: bytes = b""

    def to_event(self, controller: str, seq: int) -> Event:
        return Event(self.kind, controller, seq, self.source, self.target, self.payload)


@dataclass
class RecordingActor:
    """Test actor: records everything its controller delivers to it."""

    name: str = "actor"
    received: list[tuple[str | None, bytes]] = field(default_factory=list)
    on_deliver: Callable[[str | None, bytes], None] | None = None

    def deliver(self, source: str | None, payload: bytes) -> None:
        self.received.append((source, payload))
        if self.on_deliver is not None:
            self.on_deliver(source, payload)


class Actor(Protocol):
    def deliver(self, source: str | None, payload: bytes) -> None: ...


class Host(Protocol):
    """The interceptor side a controller talks to."""

    def enqueue(self, ctrl: Controller, item: Input) -> None: ...

    def process_pending(self, ctrl: Controller) -> None: ...

    def perform(self, ctrl: Controller, op: Operation, event: Event) -> None: ...

    def law(self, law_id: LawId) -> Law: ...


class Controller:
    def __init__(self, address: AgentAddress, host: Host):
        self.address = address
        self.host = host
        self.law: LawId | None = None
        self.state: ControllerState = EMPTY_STATE
        self.actor: Actor | None = None
        self.status = Status.GENERIC
        self.next_seq = 1

    @property
    def id(self) -> str:
        return self.address.id

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.id} {self.status.value} law={self.law}>"

    # --- regulated inputs --------------------------------------------------

    def adopt(self, law: LawId, args: bytes = b"", actor: Actor | None = None) -> AgentAddress:
        if self.status is not Status.GENERIC:
            raise AlreadyAdopted(f"{self.id} is {self.status.value}")
        self.host.law(law)
        self.law = law
        self.actor = actor
        self.status = Status.ACTIVE
        self.host.enqueue(self, Input(EventKind.ADOPTED, payload=bytes(args)))
        self.host.process_pending(self)
        if self.status is Status.QUIT:
            raise Rejected(f"law {law} refused adoption of {self.id}")
        return self.address

    def submit_send(self, target: str | AgentAddress, payload: bytes) -> None:
        self._require_active()
        self.host.enqueue(self, Input(EventKind.SENT, source=self.id, target=str(target), payload=bytes(payload)))

    def receive_message(self, source: str, payload: bytes) -> None:
        self._require_active()
        self.host.enqueue(self, Input(EventKind.ARRIVED, source=source, target=self.id, payload=bytes(payload)))

    def raise_obligation_due(self, name: str) -> None:
        self._require_active()
        self.host.enqueue(self, Input(EventKind.OBLIGATION_DUE, payload=name.encode()))

    def report_exception(self, source: str | None, payload: bytes) -> None:
        self._require_active()
        self.host.enqueue(self, Input(EventKind.EXCEPTION, source=source, payload=payload))

    def quit(self) -> None:
        self._require_active()
        self.host.enqueue(self, Input(EventKind.QUIT))

    def _require_active(self) -> None:
        if self.status not in (Status.ACTIVE, Status.UNDER_RECONSTRUCTION):
            raise NotActive(f"{self.id} is {self.status.value}")

    # --- ruling ------------------------------------------------------------

    def decide(self, event: Event) -> Ruling:
        """Evaluate the law for ``event`` against the current state."""
        return self.host.law(self.law).evaluate(event, self.state)

    def execute_ruling(self, ruling: Ruling, event: Event) -> None:
        """Carry out ``ruling`` in order, then adopt its new state."""
        quit_requested = event.kind is EventKind.QUIT
        for op in ruling.operations:
            self.host.perform(self, op, event)
            if op.kind is OpKind.QUIT_SELF:
                quit_requested = True
        self.state = ruling.new_state
        if quit_requested:
            self.status = Status.QUIT

    def handle(self, event: Event) -> None:
        self.execute_ruling(self.decide(event), event)


def describe(ctrl: Controller) -> dict[str, Any]:
    return {"id": ctrl.id, "status": ctrl.status.value, "law": ctrl.law, "state": ctrl.state.to_wire()}
