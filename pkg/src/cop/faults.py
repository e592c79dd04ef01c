"""Byzantine fault injection for controllers.

A :class:`FaultyController` behaves like the controller it replaces until its
trigger fires, then deviates in one of four ways. It also folds the law over
an honest shadow state, which gives the ground truth of where its logged
behaviour first departs from the law.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any

from cop.controller import Controller
from cop.law import ControllerState, Event, EventKind, Law, Operation, OpKind, Ruling


class FaultMode(str, enum.Enum):
    DROP_OPS = "drop-ops"
    EXTRA_OP = "extra-op"
    CORRUPT_STATE = "corrupt-state"
    WRONG_RULING = "wrong-ruling"


@dataclass(frozen=True)
class Trigger:
    """Fires on the first event with ordinal >= ``from_seq`` whose kind is in ``kinds``
    (any kind when ``kinds`` is empty) and for which the fault mode has an effect."""

    from_seq: int = 1
    kinds: frozenset[EventKind] = frozenset()

    def matches(self, event: Event) -> bool:
        return event.seq >= self.from_seq and (not self.kinds or event.kind in self.kinds)


@dataclass(frozen=True)
class FaultSpec:
    target: str
    mode: FaultMode
    trigger: Trigger = Trigger()
    params: Mapping[str, Any] = field(default_factory=dict)
    repeat: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode))


@dataclass
class FaultRecord:
    controller: str
    mode: FaultMode
    fired_at: list[int] = field(default_factory=list)
    divergences: list[int] = field(default_factory=list)

    @property
    def diverged_at(self) -> int | None:
        return self.divergences[0] if self.divergences else None


def _op_bytes(ruling: Ruling) -> list[bytes]:
    return [op.to_bytes() for op in ruling.operations]


def _as_operation(spec: Any) -> Operation:
    if isinstance(spec, Operation):
        return spec
    spec = dict(spec)
    kind = OpKind(spec.pop("kind"))
    if "payload" in spec and isinstance(spec["payload"], str):
        spec["payload"] = spec["payload"].encode()
    return Operation(kind, spec)


class FaultyController(Controller):
    def __init__(self, inner: Controller, spec: FaultSpec):
        super().__init__(inner.address, inner.host)
        self.law = inner.law
        self.state = inner.state
        self.actor = inner.actor
        self.status = inner.status
        self.next_seq = inner.next_seq
        self.spec = spec
        self.shadow = inner.state
        self.record = FaultRecord(inner.id, spec.mode)

    @property
    def armed(self) -> bool:
        return self.spec.repeat or not self.record.fired_at

    def decide(self, event: Event) -> Ruling:
        law = self.host.law(self.law)
        honest = law.evaluate(event, self.shadow)
        self.shadow = honest.new_state
        ruling = law.evaluate(event, self.state)
        if self.armed and self.spec.trigger.matches(event):
            altered = self._deviate(law, event, ruling)
            if altered is not None:
                ruling = altered
                self.record.fired_at.append(event.seq)
        if _op_bytes(ruling) != _op_bytes(honest):
            self.record.divergences.append(event.seq)
        return ruling

    def _deviate(self, law: Law, event: Event, ruling: Ruling) -> Ruling | None:
        p = self.spec.params
        mode = self.spec.mode
        if mode is FaultMode.DROP_OPS:
            kinds = {OpKind(k) for k in p.get("kinds", ())}
            budget = int(p.get("count", 1))
            kept = []
            for op in ruling.operations:
                if budget and (not kinds or op.kind in kinds):
                    budget -= 1
                    continue
                kept.append(op)
            if len(kept) == len(ruling.operations):
                return None
            return Ruling(tuple(kept), ruling.new_state)
        if mode is FaultMode.EXTRA_OP:
            return Ruling(ruling.operations + (_as_operation(p["op"]),), ruling.new_state)
        if mode is FaultMode.CORRUPT_STATE:
            terms = dict(p["terms"])
            state = ControllerState(terms if p.get("replace") else {**ruling.new_state, **terms})
            if state == ruling.new_state:
                return None
            return Ruling(ruling.operations, state)
        if mode is FaultMode.WRONG_RULING:
            payload = p["payload"]
            payload = payload.encode() if isinstance(payload, str) else bytes(payload)
            wrong = law.evaluate(replace(event, payload=payload), self.state)
            if _op_bytes(wrong) == _op_bytes(ruling):
                return None
            return wrong
        raise ValueError(f"unhandled fault mode {mode}")


def wrap(ctrl: Controller, spec: FaultSpec) -> FaultyController:
    if spec.target != ctrl.id:
        raise ValueError(f"fault targets {spec.target}, not {ctrl.id}")
    return FaultyController(ctrl, spec)


def inject(node, spec: FaultSpec) -> FaultyController:
    """Wrap the controller at ``spec.target`` on ``node`` and install the wrapper."""
    faulty = wrap(node.controller(spec.target), spec)
    node.replace_controller(spec.target, faulty)
    return faulty
