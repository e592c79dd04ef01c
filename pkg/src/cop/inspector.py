"""Off-line inspection of a law's ledger.

For every controller the inspector keeps a controller state variable (csv):
the state an honest controller would hold at its current event. Each event
found on the ledger is re-evaluated against the csv, the csv is replaced by
the law's new state, and the mandated operation list is compared with the
operations logged between that event and its ruling-end marker. Any mismatch
is a failure and triggers recovery through the hosting node.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
import zlib
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Any

from cop.encoding import decode, encode
from cop.law import EMPTY_STATE, ControllerState, Event, EventKind, Law, Operation, OpKind, Ruling
from cop.ledger import EntryKind, Ledger, LedgerEntry, LedgerUnavailable

logger = logging.getLogger(__name__)


class RecordStatus(str, enum.Enum):
    HEALTHY = "healthy"
    FAILED_PENDING_RECOVERY = "failed-pending-recovery"
    RECOVERED = "recovered"


class VerdictKind(str, enum.Enum):
    COMPLIANT = "compliant"
    FAILED = "failed"


@dataclass
class _Group:
    entry: LedgerEntry
    event: Event | None
    observed: list[Operation] = field(default_factory=list)
    anomaly: str | None = None
    opened: float = field(default_factory=time.monotonic)


@dataclass
class InspectionRecord:
    controller: str
    csv: ControllerState = EMPTY_STATE
    last_ctrl_seq: int = 0
    last_event_seq: int = 0
    status: RecordStatus = RecordStatus.HEALTHY
    quit: bool = False
    obligations: dict[str, int] = field(default_factory=dict)
    group: _Group | None = None


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    controller: str
    at_ctrl_seq: int
    event_seq: int
    event_kind: str
    inactions: tuple[Operation, ...] = ()
    actions: tuple[Operation, ...] = ()
    anomaly: str | None = None
    source: str | None = None
    closed_at: int | None = None
    issued: float = field(default=0.0, compare=False)

    @property
    def failed(self) -> bool:
        return self.kind is VerdictKind.FAILED

    def to_wire(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "controller": self.controller,
            "at_ctrl_seq": self.at_ctrl_seq,
            "event_seq": self.event_seq,
            "event_kind": self.event_kind,
            "inactions": [op.to_wire() for op in self.inactions],
            "actions": [op.to_wire() for op in self.actions],
            "anomaly": self.anomaly,
            "source": self.source,
            "closed_at": self.closed_at,
        }

    def to_bytes(self) -> bytes:
        return encode(self.to_wire())

    @classmethod
    def from_wire(cls, d: dict[str, Any]) -> Verdict:
        return cls(
            kind=VerdictKind(d["kind"]),
            controller=d["controller"],
            at_ctrl_seq=d["at_ctrl_seq"],
            event_seq=d["event_seq"],
            event_kind=d["event_kind"],
            inactions=tuple(Operation.from_wire(o) for o in d["inactions"]),
            actions=tuple(Operation.from_wire(o) for o in d["actions"]),
            anomaly=d["anomaly"],
            source=d["source"],
            closed_at=d["closed_at"],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Verdict:
        return cls.from_wire(decode(data))

    def render(self) -> str:
        head = f"{self.kind.value.upper():9} {self.controller} ctrl_seq={self.at_ctrl_seq} event#{self.event_seq} ({self.event_kind})"
        parts = [head]
        if self.anomaly:
            parts.append(f"anomaly={self.anomaly}")
        if self.inactions:
            parts.append("missing=[" + ", ".join(map(repr, self.inactions)) + "]")
        if self.actions:
            parts.append("extra=[" + ", ".join(map(repr, self.actions)) + "]")
        return " ".join(parts)


@dataclass(frozen=True)
class Notification:
    """Report of an illegal action for the community's manager."""

    controller: str
    operation: Operation
    at_ctrl_seq: int

    def to_wire(self) -> dict[str, Any]:
        return {"controller": self.controller, "operation": self.operation.to_wire(), "at_ctrl_seq": self.at_ctrl_seq}


def diff_ops(expected: Iterable[Operation], observed: Iterable[Operation]) -> tuple[list[Operation], list[Operation]]:
    """Split an ordered mismatch into (missing, extra) via the longest common subsequence."""
    exp, obs = list(expected), list(observed)
    eb, ob = [op.to_bytes() for op in exp], [op.to_bytes() for op in obs]
    if eb == ob:
        return [], []
    matcher = SequenceMatcher(a=eb, b=ob, autojunk=False)
    missing, extra = [], []
    i = j = 0
    for block in matcher.get_matching_blocks():
        missing.extend(exp[i : block.a])
        extra.extend(obs[j : block.b])
        i, j = block.a + block.size, block.b + block.size
    return missing, extra


def _multiset_minus(a: Iterable[Operation], b: Iterable[Operation]) -> list[Operation]:
    remaining = Counter(op.to_bytes() for op in b)
    out = []
    for op in a:
        key = op.to_bytes()
        if remaining[key]:
            remaining[key] -= 1
        else:
            out.append(op)
    return out


@dataclass(frozen=True)
class ShardPlan:
    """Partition of the controller-id space into ``count`` shards.

    Controllers go to ``crc32(id) % count`` unless pinned by ``overrides``.
    """

    count: int = 1
    overrides: tuple[tuple[str, int], ...] | Mapping[str, int] = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("shard count must be >= 1")
        pins = self.overrides.items() if isinstance(self.overrides, Mapping) else self.overrides
        object.__setattr__(self, "overrides", tuple(sorted((str(c), int(s)) for c, s in pins)))
        for _, shard in self.overrides:
            if not 0 <= shard < self.count:
                raise ValueError(f"override shard {shard} out of range")

    def shard_of(self, controller: str) -> int:
        for cid, shard in self.overrides:
            if cid == controller:
                return shard
        return zlib.crc32(controller.encode()) % self.count

    def predicate(self, shard: int) -> Callable[[str], bool]:
        return lambda controller: self.shard_of(controller) == shard

    @property
    def shards(self) -> list[int]:
        return list(range(self.count))


class Inspector:
    """Inspects one law's ledger, optionally restricted to one shard.

    ``cp`` is a node control client (see ``cop.cpnode.ControlClient``); without
    it, failures are only reported. ``notify`` receives illegal-action
    notifications. ``quiescence`` (seconds) closes a ruling group whose
    ruling-end marker never shows up.
    """

    def __init__(
        self,
        law: Law,
        *,
        cp=None,
        notify: Callable[[Notification], None] | None = None,
        owns: Callable[[str], bool] | None = None,
        quiescence: float = 2.0,
        obligation_tolerance_ms: int = 50,
        on_verdict: Callable[[Verdict], None] | None = None,
        keep_compliant: bool = True,
    ):
        self.law = law
        self.cp = cp
        self.notify = notify
        self.owns = owns or (lambda controller: True)
        self.quiescence = quiescence
        self.obligation_tolerance_ms = obligation_tolerance_ms
        self.on_verdict = on_verdict
        self.keep_compliant = keep_compliant
        self.records: dict[str, InspectionRecord] = {}
        self.verdicts: list[Verdict] = []
        self.failures: list[Verdict] = []
        self.notifications: list[Notification] = []
        self.compliant_count = 0
        self.entries_seen = 0
        self.cursor = 0
        self._pending_recovery: list[Callable[[], Any]] = []
        self._last_entry: LedgerEntry | None = None

    # --- feeding ------------------------------------------------------------

    def poll(self, ledger: Ledger) -> int:
        """Consume every entry past the cursor; returns how many were read."""
        n = 0
        while True:
            batch = ledger.read(self.cursor)
            if not batch:
                break
            for entry in batch:
                self.feed(entry)
                n += 1
        self.retry_recoveries()
        return n

    def feed(self, entry: LedgerEntry) -> None:
        self.cursor = entry.global_seq + 1
        if not self.owns(entry.controller):
            return
        self.entries_seen += 1
        self._last_entry = entry
        if entry.law != self.law.law_id:
            self._structural_failure(entry, "foreign-law", [])
            return
        kind = entry.kind
        if kind is EntryKind.EVENT:
            self._on_event(entry)
        elif kind is EntryKind.OPERATION:
            self._on_operation(entry)
        elif kind is EntryKind.RULING_END:
            rec = self.records.get(entry.controller)
            if rec is None or rec.group is None:
                self._structural_failure(entry, "stray-ruling-end", [])
            else:
                self._close(rec, entry)
        elif kind is EntryKind.REPAIR:
            self._on_repair(entry)
        elif kind is EntryKind.RECONSTRUCTED:
            self._on_reconstructed(entry)

    def check_quiescence(self, now: float | None = None) -> int:
        """Judge groups left open for longer than the quiescence timeout."""
        now = time.monotonic() if now is None else now
        closed = 0
        for rec in self.records.values():
            if rec.group is not None and now - rec.group.opened >= self.quiescence:
                self._close(rec, None)
                closed += 1
        return closed

    def flush(self) -> None:
        """Judge every open group now (end of an off-line replay)."""
        for rec in self.records.values():
            if rec.group is not None:
                self._close(rec, None)

    # --- entry handlers ------------------------------------------------------

    def _on_event(self, entry: LedgerEntry) -> None:
        rec = self.records.get(entry.controller)
        if rec is not None and rec.group is not None:
            self._close(rec, None)
        try:
            event = Event.from_bytes(entry.body)
        except Exception:
            self._open_anomalous(rec, entry, None, "undecodable-event")
            return
        if event.kind is EventKind.ADOPTED and rec is None:
            if entry.ctrl_seq != 1 or event.seq != 1:
                self._open_anomalous(rec, entry, event, "adoption-out-of-order")
                return
            rec = self.on_adopted(entry)
            rec.group = _Group(entry, event)
            return
        if rec is None:
            self._open_anomalous(rec, entry, event, "unknown-controller")
        elif event.kind is EventKind.ADOPTED:
            self._open_anomalous(rec, entry, event, "duplicate-adoption")
        elif rec.quit:
            self._open_anomalous(rec, entry, event, "event-after-quit")
        elif event.seq != rec.last_event_seq + 1 or event.controller != entry.controller:
            self._open_anomalous(rec, entry, event, "event-out-of-order")
        else:
            rec.group = _Group(entry, event)

    def _open_anomalous(self, rec: InspectionRecord | None, entry: LedgerEntry, event: Event | None,
                        anomaly: str) -> None:
        if rec is None:
            rec = self.records.setdefault(entry.controller, InspectionRecord(entry.controller))
        rec.group = _Group(entry, event, anomaly=anomaly)

    def _on_operation(self, entry: LedgerEntry) -> None:
        rec = self.records.get(entry.controller)
        try:
            op = Operation.from_bytes(entry.body)
        except Exception:
            self._structural_failure(entry, "undecodable-operation", [])
            return
        if rec is None or rec.group is None:
            self._structural_failure(entry, "operation-outside-ruling", [op])
            return
        rec.group.observed.append(op)
        if op.kind is OpKind.IMPOSE_OBLIGATION:
            rec.obligations[op.args["name"]] = entry.timestamp + op.args["dt_ms"]

    def _on_repair(self, entry: LedgerEntry) -> None:
        rec = self.records.get(entry.controller)
        if rec is None:
            return
        body = decode(entry.body)
        op = Operation.from_wire(body["op"])
        if op.kind is OpKind.IMPOSE_OBLIGATION:
            rec.obligations[op.args["name"]] = entry.timestamp + op.args["dt_ms"]

    def _on_reconstructed(self, entry: LedgerEntry) -> None:
        body = decode(entry.body)
        planted = ControllerState(body["csv"])
        rec = self.records.get(entry.controller)
        if rec is None:
            rec = self.records[entry.controller] = InspectionRecord(entry.controller, csv=planted)
            rec.last_event_seq = body["next_seq"] - 1
        if rec.group is not None:
            self._close(rec, None)
        rec.last_ctrl_seq = entry.ctrl_seq
        rec.obligations.clear()
        rec.status = RecordStatus.RECOVERED
        rec.quit = not body["active"]
        if planted != rec.csv:
            # events were processed between our command and the rebuild;
            # plant the state we now know to be correct
            logger.warning("%s reconstructed with stale state; re-issuing", entry.controller)
            if self.cp is not None:
                self._issue(lambda: self.cp.reconstruct(entry.controller, self.law.law_id, rec.csv,
                                                        entry.ctrl_seq, not rec.quit))

    # --- judging -------------------------------------------------------------

    def on_adopted(self, entry: LedgerEntry) -> InspectionRecord:
        """Start tracking a controller at its adoption with an empty csv."""
        rec = InspectionRecord(entry.controller, csv=EMPTY_STATE)
        self.records[entry.controller] = rec
        return rec

    def inspect_step(self, rec: InspectionRecord, event_entry: LedgerEntry,
                     observed_ops: list[Operation]) -> Verdict:
        """Judge one event of ``rec``'s controller against its logged operations."""
        event = Event.from_bytes(event_entry.body)
        ruling = self.law.evaluate(event, rec.csv)
        rec.csv = ruling.new_state
        rec.last_event_seq = event.seq
        rec.last_ctrl_seq = event_entry.ctrl_seq + len(observed_ops)
        anomaly = None
        if event.kind is EventKind.OBLIGATION_DUE:
            anomaly = self._check_obligation(rec, event, event_entry)
        if event.kind is EventKind.QUIT or any(op.kind is OpKind.QUIT_SELF for op in ruling.operations):
            rec.quit = True
            rec.obligations.clear()
        return self._judge(rec, event_entry, event, ruling, observed_ops, anomaly)

    def _check_obligation(self, rec: InspectionRecord, event: Event, entry: LedgerEntry) -> str | None:
        name = event.payload.decode("utf-8", "replace")
        due = rec.obligations.pop(name, None)
        if due is None:
            return "obligation-not-imposed"
        if entry.timestamp + self.obligation_tolerance_ms < due:
            return "obligation-early"
        return None

    def _judge(self, rec, event_entry, event, ruling: Ruling, observed, anomaly, closed_at=None) -> Verdict:
        missing, extra = diff_ops(ruling.operations, observed)
        failed = bool(missing or extra or anomaly)
        return Verdict(
            kind=VerdictKind.FAILED if failed else VerdictKind.COMPLIANT,
            controller=rec.controller,
            at_ctrl_seq=event_entry.ctrl_seq,
            event_seq=event.seq if event is not None else 0,
            event_kind=event.kind.value if event is not None else "?",
            inactions=tuple(missing),
            actions=tuple(extra),
            anomaly=anomaly,
            source=event.source if event is not None else None,
            closed_at=closed_at,
            issued=time.perf_counter(),
        )

    def _close(self, rec: InspectionRecord, closing: LedgerEntry | None) -> None:
        group, rec.group = rec.group, None
        closed_at = closing.global_seq if closing is not None else None
        anomaly = group.anomaly
        if anomaly is None:
            verdict = self.inspect_step(rec, group.entry, group.observed)
        else:
            # illegitimate event: nothing was mandated, the csv stays put
            verdict = self._judge(rec, group.entry, group.event, Ruling.empty(rec.csv), group.observed, anomaly)
            rec.last_ctrl_seq = group.entry.ctrl_seq + len(group.observed)
            if group.event is not None and group.event.seq == rec.last_event_seq + 1:
                rec.last_event_seq = group.event.seq
        if closing is not None:
            rec.last_ctrl_seq = closing.ctrl_seq
        verdict = _with_closed(verdict, closed_at)
        self._emit(rec, verdict)

    def _structural_failure(self, entry: LedgerEntry, anomaly: str, actions: list[Operation]) -> None:
        rec = self.records.setdefault(entry.controller, InspectionRecord(entry.controller))
        verdict = Verdict(VerdictKind.FAILED, entry.controller, entry.ctrl_seq, rec.last_event_seq, "?",
                          (), tuple(actions), anomaly, None, entry.global_seq, time.perf_counter())
        self._emit(rec, verdict)

    def _emit(self, rec: InspectionRecord, verdict: Verdict) -> None:
        if verdict.failed:
            self.failures.append(verdict)
            self.verdicts.append(verdict)
            rec.status = RecordStatus.FAILED_PENDING_RECOVERY
            if self.cp is not None or self.notify is not None:
                self.recover(rec, verdict)
        else:
            self.compliant_count += 1
            if self.keep_compliant:
                self.verdicts.append(verdict)
        if self.on_verdict is not None:
            self.on_verdict(verdict)

    # --- recovery ------------------------------------------------------------

    def recovery_plan(self, rec: InspectionRecord, verdict: Verdict) -> tuple[list[Operation], list[Notification]]:
        """Operations to carry out on the controller's behalf, and notifications to send.

        An operation that was performed but out of order shows up both as
        missing and as extra; it is neither repeated nor reported.
        """
        repairs = _multiset_minus(verdict.inactions, verdict.actions)
        notices = [Notification(verdict.controller, op, verdict.at_ctrl_seq)
                   for op in _multiset_minus(verdict.actions, verdict.inactions)]
        return repairs, notices

    def recover(self, rec: InspectionRecord, verdict: Verdict) -> None:
        repairs, notices = self.recovery_plan(rec, verdict)
        for note in notices:
            self.notifications.append(note)
            if self.notify is not None:
                self.notify(note)
        if self.cp is None:
            return
        cid, law_id, at = verdict.controller, self.law.law_id, verdict.at_ctrl_seq
        csv, active = rec.csv, not rec.quit

        def run():
            for index, op in enumerate(repairs):
                self.cp.execute_op(cid, op, at, index, verdict.source)
            self.cp.reconstruct(cid, law_id, csv, at, active)
            rec.status = RecordStatus.RECOVERED

        self._issue(run)

    def _issue(self, action: Callable[[], Any]) -> None:
        from cop.cpnode import CPUnreachable

        try:
            action()
        except (CPUnreachable, LedgerUnavailable) as exc:
            logger.warning("recovery deferred: %s", exc)
            self._pending_recovery.append(action)

    def retry_recoveries(self) -> None:
        pending, self._pending_recovery = self._pending_recovery, []
        for action in pending:
            self._issue(action)

    # --- running -------------------------------------------------------------

    def run(self, entries: Iterable[LedgerEntry], stop: threading.Event | None = None,
            check_every: int = 256) -> None:
        for i, entry in enumerate(entries):
            self.feed(entry)
            if i % check_every == 0:
                self.check_quiescence()
                self.retry_recoveries()
            if stop is not None and stop.is_set():
                return


def _with_closed(verdict: Verdict, closed_at: int | None) -> Verdict:
    if verdict.closed_at == closed_at:
        return verdict
    return Verdict(verdict.kind, verdict.controller, verdict.at_ctrl_seq, verdict.event_seq, verdict.event_kind,
                   verdict.inactions, verdict.actions, verdict.anomaly, verdict.source, closed_at, verdict.issued)


def run_shard(law: Law, plan: ShardPlan, shard: int, ledger: Ledger, *, stop: threading.Event | None = None,
              inspector: Inspector | None = None, poll: float = 0.05, **kwargs) -> Inspector:
    """Continuously inspect the controllers of one shard until ``stop`` is set.

    Returns the inspector once stopped (it never returns otherwise). Ledger
    outages are retried with exponential backoff, resuming from the cursor.
    """
    insp = inspector or Inspector(law, owns=plan.predicate(shard), **kwargs)
    backoff = poll
    while stop is None or not stop.is_set():
        try:
            for entry in ledger.stream(insp.cursor, stop=stop, idle_timeout=insp.quiescence, poll=poll):
                insp.feed(entry)
                backoff = poll
            insp.check_quiescence()
            insp.retry_recoveries()
        except LedgerUnavailable as exc:
            logger.warning("shard %d: ledger unavailable (%s); retrying in %.2fs", shard, exc, backoff)
            time.sleep(backoff)
            backoff = min(backoff * 2, 5.0)
    return insp


class ShardedInspector:
    """Several shard inspectors fed from one ledger, repartitionable at a barrier."""

    def __init__(self, law: Law, plan: ShardPlan, **kwargs):
        self.law = law
        self.plan = plan
        self._kwargs = kwargs
        self.shards = [Inspector(law, owns=plan.predicate(i), **kwargs) for i in plan.shards]
        self.cursor = 0
        self.retired: list[Inspector] = []

    def feed(self, entry: LedgerEntry) -> None:
        self.cursor = entry.global_seq + 1
        owner = self.plan.shard_of(entry.controller)
        for i, insp in enumerate(self.shards):
            if i == owner:
                insp.feed(entry)
            else:
                insp.cursor = self.cursor

    def poll(self, ledger: Ledger) -> int:
        n = 0
        while True:
            batch = ledger.read(self.cursor)
            if not batch:
                break
            for entry in batch:
                self.feed(entry)
                n += 1
        for insp in self.shards:
            insp.retry_recoveries()
        return n

    def flush(self) -> None:
        for insp in self.shards:
            insp.flush()

    def repartition(self, plan: ShardPlan) -> None:
        """Move inspection records to the shards of ``plan``. All shards sit at
        the same cursor here, so no entry is judged twice or skipped."""
        old = self.shards
        fresh = [Inspector(self.law, owns=plan.predicate(i), **self._kwargs) for i in plan.shards]
        for insp in fresh:
            insp.cursor = self.cursor
        for insp in old:
            for cid, rec in insp.records.items():
                fresh[plan.shard_of(cid)].records[cid] = rec
        self.retired.extend(old)
        self.shards = fresh
        self.plan = plan

    def _all(self) -> Iterator[Inspector]:
        yield from self.retired
        yield from self.shards

    @property
    def verdicts(self) -> list[Verdict]:
        return sorted((v for insp in self._all() for v in insp.verdicts), key=verdict_order)

    @property
    def failures(self) -> list[Verdict]:
        return sorted((v for insp in self._all() for v in insp.failures), key=verdict_order)

    @property
    def records(self) -> dict[str, InspectionRecord]:
        out: dict[str, InspectionRecord] = {}
        for insp in self.shards:
            out.update(insp.records)
        return out

    @property
    def compliant_count(self) -> int:
        return sum(insp.compliant_count for insp in self._all())


def verdict_order(v: Verdict) -> tuple:
    return (v.closed_at if v.closed_at is not None else 1 << 62, v.controller, v.at_ctrl_seq)
