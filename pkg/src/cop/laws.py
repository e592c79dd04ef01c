"""Built-in laws.

``MoneyTransfer`` and ``Monitoring`` are the two example communities; ``Sink``
serves the monitor agent, ``Lock`` exercises enforced obligations and
``Password`` exercises adoption refusal.
"""

from __future__ import annotations

from typing import Any

from cop.encoding import encode
from cop.law import ControllerState, Event, EventKind, Law, Ruling, RulingBuilder


class MoneyTransfer(Law):
    """Every agent starts with a budget and may transfer any positive amount
    not exceeding it. Payloads are decimal integer amounts."""

    law_id = "MT"

    def __init__(self, law_id: str | None = None, initial_budget: int = 1000):
        super().__init__(law_id, initial_budget=initial_budget)

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        r = RulingBuilder(event, state)
        if event.kind is EventKind.ADOPTED:
            r.set("budget", self.params["initial_budget"])
            return r.build()
        budget = state.get("budget")
        if not isinstance(budget, int):
            return None
        amount = event.amount()
        if amount is None or amount <= 0:
            return None
        if event.kind is EventKind.SENT:
            if amount <= budget:
                r.set("budget", budget - amount)
                r.forward()
                return r.build()
        elif event.kind is EventKind.ARRIVED:
            r.set("budget", budget + amount)
            r.deliver()
            return r.build()
        return None


def birth_record(agent: str) -> bytes:
    return encode({"type": "birth", "agent": agent})


def copy_record(sender: str, target: str, body: bytes) -> bytes:
    return encode({"type": "copy", "sender": sender, "target": target, "body": body})


class Monitoring(Law):
    """Reports each agent's birth and a copy of every sent message, with
    sender and target addresses, to a designated monitor."""

    law_id = "MO"

    def __init__(self, law_id: str | None = None, monitor: Any = None):
        if monitor is None:
            raise ValueError("Monitoring law needs a monitor address")
        super().__init__(law_id, monitor=str(monitor))

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        r = RulingBuilder(event, state)
        monitor = self.params["monitor"]
        if event.kind is EventKind.ADOPTED:
            r.send(monitor, birth_record(event.controller))
        elif event.kind is EventKind.SENT:
            r.forward()
            r.send(monitor, copy_record(event.source or event.controller, event.target, event.payload))
        elif event.kind is EventKind.ARRIVED:
            r.deliver()
        else:
            return None
        return r.build()


class Sink(Law):
    """Permits everything: arrivals are delivered, sends forwarded."""

    law_id = "SINK"

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        r = RulingBuilder(event, state)
        if event.kind is EventKind.ARRIVED:
            r.deliver()
        elif event.kind is EventKind.SENT:
            r.forward()
        else:
            return None
        return r.build()


class Lock(Law):
    """Lease-style locking. Sending ``acquire`` to a lock manager records the
    holding and imposes a ``lease`` obligation; if the lease comes due while
    still held, the sanction releases the lock on the holder's behalf."""

    law_id = "LOCK"

    def __init__(self, law_id: str | None = None, lease_ms: int = 100):
        super().__init__(law_id, lease_ms=lease_ms)

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        r = RulingBuilder(event, state)
        holding = state.get("holding", 0)
        if event.kind is EventKind.ADOPTED:
            r.set("holding", 0)
        elif event.kind is EventKind.SENT and event.payload == b"acquire":
            if holding:
                return None
            r.set("holding", 1)
            r.set("lock", event.target)
            r.forward()
            r.impose("lease", self.params["lease_ms"])
        elif event.kind is EventKind.SENT and event.payload == b"release":
            if not holding or state.get("lock") != event.target:
                return None
            r.set("holding", 0)
            r.forward()
        elif event.kind is EventKind.OBLIGATION_DUE and event.payload == b"lease":
            if not holding:
                return None
            r.set("holding", 0)
            r.send(str(state.get("lock")), b"release")
        elif event.kind is EventKind.ARRIVED:
            r.deliver()
        else:
            return None
        return r.build()


class Password(Law):
    """Membership requires the right adoption argument; otherwise the
    controller quits itself during adoption."""

    law_id = "PW"

    def __init__(self, law_id: str | None = None, password: str = "open-sesame"):
        super().__init__(law_id, password=password)

    def rule(self, event: Event, state: ControllerState) -> Ruling | None:
        r = RulingBuilder(event, state)
        if event.kind is EventKind.ADOPTED:
            if event.payload == self.params["password"].encode():
                r.set("member", 1)
            else:
                r.quit()
        elif state.get("member") != 1:
            return None
        elif event.kind is EventKind.SENT:
            r.forward()
        elif event.kind is EventKind.ARRIVED:
            r.deliver()
        else:
            return None
        return r.build()


LAW_KINDS: dict[str, type[Law]] = {
    "money-transfer": MoneyTransfer,
    "monitoring": Monitoring,
    "sink": Sink,
    "lock": Lock,
    "password": Password,
}


def make_law(kind: str, law_id: str | None = None, **params: Any) -> Law:
    try:
        cls = LAW_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown law kind {kind!r}; known: {', '.join(sorted(LAW_KINDS))}") from None
    return cls(law_id, **params)


def kind_of(law: Law) -> str:
    for name, cls in LAW_KINDS.items():
        if type(law) is cls:
            return name
    raise ValueError(f"{type(law).__name__} is not a built-in law")
