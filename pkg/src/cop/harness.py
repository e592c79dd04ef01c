"""Scenario runner.

:class:`Runtime` wires laws, ledgers, CPnodes, inspectors and the control
client together and drives them from a single loop. :func:`run` builds a
runtime from a :class:`~cop.scenario.Scenario`, plays its workload, injects
its faults and returns a :class:`Report`.

With the in-process transport and the virtual clock everything runs in one
thread: after every event a node processes, the inspectors read the new
ledger entries, so a deviating ruling is judged (and the controller
recovered) before its controller handles anything else.
"""

from __future__ import annotations

import json
import logging
import random
import statistics
import time
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from cop.clock import VirtualClock, WallClock
from cop.controller import Controller, RecordingActor, Status
from cop.cpnode import CPNode, ControlClient, ControlServer, tcp_channel
from cop.encoding import decode, frame
from cop.faults import FaultSpec, FaultyController, Trigger, inject
from cop.inspector import Notification, ShardedInspector, ShardPlan, Verdict, verdict_order
from cop.law import Event, EventKind, Law, LawRegistry
from cop.ledger import CorruptLedger, EntryKind, FileLedger, Ledger, LedgerEntry
from cop.laws import make_law
from cop.replay import ManifestError, manifest_path, replay_file, write_manifest
from cop.scenario import ConfigError, FaultConfig, Scenario
from cop.transport import InProcBus, TcpTransport, node_of

logger = logging.getLogger(__name__)

_TIMED = (EntryKind.EVENT, EntryKind.RECONSTRUCTED)


class Runtime:
    """One Cop deployment: CPnodes, per-law ledgers and inspectors, control client.

    ``out_dir`` makes the ledgers file-backed (with a law manifest next to
    each); otherwise they live in memory.
    """

    def __init__(
        self,
        *,
        transport: str = "inproc",
        clock=None,
        out_dir: str | Path | None = None,
        chain: bool = True,
        shards: int = 1,
        secret: bytes = b"cop-shared-secret",
        capacity: int = 500,
        recover: bool = True,
        quiescence: float = 2.0,
        keep_compliant: bool = True,
        inspect: bool = True,
    ):
        if transport == "inproc":
            self.transport = InProcBus()
            self.clock = clock or VirtualClock()
        elif transport == "tcp":
            self.transport = TcpTransport()
            self.clock = clock or WallClock()
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self.transport_kind = transport
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.chain = chain
        self.shards = shards
        self.secret = secret
        self.capacity = capacity
        self.recover = recover
        self.quiescence = quiescence
        self.keep_compliant = keep_compliant
        self.live_inspection = inspect

        self.registry = LawRegistry()
        self.laws: dict[str, Law] = {}
        self.ledgers: dict[str, Ledger] = {}
        self.inspectors: dict[str, ShardedInspector] = {}
        self.nodes: dict[str, CPNode] = {}
        self.cp = ControlClient({}, secret)
        self.notifications: list[Notification] = []
        self.faults: list[FaultyController] = []
        self.members: dict[str, list[str]] = {}
        self.actors: dict[str, RecordingActor] = {}
        self.append_wall: dict[tuple[str, int], float] = {}
        self._servers: list[ControlServer] = []
        self._spawned = 0

    # --- setup ----------------------------------------------------------------

    def add_node(self, node_id: str | None = None) -> CPNode:
        node_id = node_id or f"n{len(self.nodes)}"
        node = CPNode(node_id, self.registry, self.ledger, self.transport, self.clock,
                      capacity=self.capacity, secret=self.secret)
        self.nodes[node_id] = node
        if self.transport_kind == "tcp":
            server = ControlServer(node).start()
            self._servers.append(server)
            self.cp.routes[node_id] = tcp_channel(server.server_address[:2])
        else:
            self.cp.routes[node_id] = node.handle_control
        return node

    def register_law(self, law: Law) -> Law:
        """Create the law's community: registry entry, empty ledger, inspector."""
        self.registry.register(law)
        law_id = law.law_id
        if law_id in self.ledgers:
            return self.laws[law_id]
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self.out_dir / f"{law_id}.ledger"
            ledger: Ledger = FileLedger(path, law_id, chain=self.chain)
            write_manifest(path, law)
        else:
            ledger = Ledger(law_id, chain=self.chain)
        ledger.listeners.append(self._stamp)
        self.laws[law_id] = law
        self.ledgers[law_id] = ledger
        self.members[law_id] = []
        self.inspectors[law_id] = ShardedInspector(
            law, ShardPlan(self.shards),
            cp=self.cp if self.recover else None,
            notify=self.notifications.append,
            quiescence=self.quiescence,
            keep_compliant=self.keep_compliant,
        )
        return law

    def ledger(self, law_id: str) -> Ledger:
        return self.ledgers[law_id]

    def _stamp(self, entry: LedgerEntry) -> None:
        if entry.kind in _TIMED:
            self.append_wall[(entry.law, entry.global_seq)] = time.perf_counter()

    def spawn(self, law_id: str, *, node: str | None = None, args: bytes = b"",
              actor: RecordingActor | None = None) -> str:
        """Provision a controller, have a fresh actor adopt ``law_id`` through it."""
        if not self.nodes:
            self.add_node()
        if node is None:
            ids = list(self.nodes)
            node = ids[self._spawned % len(ids)]
        self._spawned += 1
        ctrl = self.nodes[node].provision_controller()
        actor = actor or RecordingActor(ctrl.id)
        self.actors[ctrl.id] = actor
        ctrl.adopt(law_id, args, actor)
        self.members[law_id].append(ctrl.id)
        self.inspect()
        return ctrl.id

    def controller(self, controller_id: str) -> Controller:
        return self.nodes[node_of(controller_id)].controller(controller_id)

    def inject(self, spec: FaultSpec) -> FaultyController:
        faulty = inject(self.nodes[node_of(spec.target)], spec)
        self.faults.append(faulty)
        return faulty

    # --- driving --------------------------------------------------------------

    def send(self, sender: str, target: str, payload: bytes) -> None:
        self.controller(sender).submit_send(target, payload)

    def inspect(self) -> None:
        if not self.live_inspection:
            return
        for law_id, insp in self.inspectors.items():
            insp.poll(self.ledgers[law_id])

    def step(self) -> bool:
        """Deliver arrived messages, then let each node process one event."""
        progressed = self.transport.pump() > 0
        for node in self.nodes.values():
            if node.step():
                progressed = True
                self.inspect()
        return progressed

    def run_until_idle(self, max_steps: int | None = None) -> int:
        steps = 0
        while max_steps is None or steps < max_steps:
            if self.step():
                steps += 1
                continue
            if self.transport_kind == "tcp" and self.transport.pending():
                self.transport.pump(timeout=0.01)
                continue
            break
        self.inspect()
        return steps

    def next_due(self) -> int | None:
        dues = [d for d in (n.next_obligation_due() for n in self.nodes.values()) if d is not None]
        return min(dues) if dues else None

    def fire_timers(self) -> int:
        return sum(node.fire_due_obligations() for node in self.nodes.values())

    def run_until(self, t_ms: int) -> None:
        """Run everything scheduled up to virtual time ``t_ms``, firing obligations on time."""
        while True:
            self.run_until_idle()
            due = self.next_due()
            if due is None or due > t_ms:
                break
            if due > self.clock.now():
                self.clock.advance_to(due)
            self.fire_timers()
        if t_ms > self.clock.now():
            self.clock.advance_to(t_ms)
        self.fire_timers()
        self.run_until_idle()

    def drain(self, max_rounds: int = 100_000) -> None:
        """Run until no event, message or obligation is left."""
        for _ in range(max_rounds):
            self.run_until_idle()
            due = self.next_due()
            if due is None:
                return
            if due > self.clock.now():
                self.clock.advance_to(due)
            self.fire_timers()
        raise RuntimeError("run did not quiesce")

    def flush(self) -> None:
        """Inspect everything logged so far and judge any ruling group still open."""
        for law_id, insp in self.inspectors.items():
            insp.poll(self.ledgers[law_id])
        for insp in self.inspectors.values():
            insp.flush()

    def close(self) -> None:
        for server in self._servers:
            server.stop()
        self._servers.clear()
        self.transport.close()
        for ledger in self.ledgers.values():
            ledger.close()

    def __enter__(self) -> Runtime:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- results --------------------------------------------------------------

    def verdicts(self, law_id: str | None = None) -> list[Verdict]:
        ids = [law_id] if law_id else list(self.inspectors)
        return sorted((v for i in ids for v in self.inspectors[i].verdicts), key=verdict_order)

    def failures(self, law_id: str | None = None) -> list[Verdict]:
        return [v for v in self.verdicts(law_id) if v.failed]

    def events_processed(self) -> int:
        return sum(node.events_processed for node in self.nodes.values())


# --- report ---------------------------------------------------------------------


@dataclass
class FaultOutcome:
    controller: str
    law: str
    mode: str
    fired_at: list[int]
    diverged_at: int | None
    detected: bool = False
    verdict_ctrl_seq: int | None = None
    divergent_ctrl_seq: int | None = None
    detection_latency_ms: float | None = None
    ledger_distance_entries: int | None = None
    ledger_distance_groups: int | None = None
    recovered: bool = False
    recovery_latency_ms: float | None = None


@dataclass
class Report:
    scenario: str
    seed: int = 0
    transport: str = "inproc"
    shards: int = 1
    laws: dict[str, dict[str, int]] = field(default_factory=dict)
    faults: list[FaultOutcome] = field(default_factory=list)
    false_positives: int = 0
    false_negatives: int = 0
    conservation: dict[str, dict[str, Any]] = field(default_factory=dict)
    monitor: dict[str, dict[str, Any]] = field(default_factory=dict)
    notifications: int = 0
    events: int = 0
    wall_seconds: float = 0.0
    replay: dict[str, Any] | None = None

    @property
    def throughput(self) -> float:
        return self.events / self.wall_seconds if self.wall_seconds > 0 else 0.0

    @property
    def failed_verdicts(self) -> int:
        return sum(s["failed"] for s in self.laws.values())

    @property
    def conservation_holds(self) -> bool:
        return all(c["holds"] for c in self.conservation.values())

    def median_detection_ms(self) -> float | None:
        xs = [f.detection_latency_ms for f in self.faults if f.detection_latency_ms is not None]
        return statistics.median(xs) if xs else None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["throughput"] = self.throughput
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Report:
        d = dict(d)
        d.pop("throughput", None)
        d["faults"] = [FaultOutcome(**f) for f in d.get("faults", [])]
        return cls(**d)

    def deterministic(self) -> dict[str, Any]:
        """The report without wall-clock measurements."""
        d = self.to_dict()
        for key in ("wall_seconds", "throughput"):
            d.pop(key)
        for f in d["faults"]:
            f.pop("detection_latency_ms")
            f.pop("recovery_latency_ms")
        return d

    def render(self) -> str:
        lines = [f"scenario {self.scenario}  seed={self.seed}  transport={self.transport}  shards={self.shards}"]
        lines.append("")
        lines.append(f"{'law':8} {'entries':>8} {'verdicts':>9} {'compliant':>10} {'failed':>7}")
        for law_id, s in sorted(self.laws.items()):
            lines.append(f"{law_id:8} {s['entries']:>8} {s['verdicts']:>9} {s['compliant']:>10} {s['failed']:>7}")
        if self.faults:
            lines.append("")
            lines.append(f"{'controller':12} {'mode':14} {'diverged':>8} {'detected':>8} {'ctrl_seq':>8} "
                         f"{'dist':>5} {'groups':>6} {'detect ms':>10} {'recover ms':>10}")
            for f in self.faults:
                lines.append(
                    f"{f.controller:12} {f.mode:14} {_fmt(f.diverged_at):>8} {('yes' if f.detected else 'no'):>8} "
                    f"{_fmt(f.verdict_ctrl_seq):>8} {_fmt(f.ledger_distance_entries):>5} "
                    f"{_fmt(f.ledger_distance_groups):>6} {_fmt(f.detection_latency_ms):>10} "
                    f"{_fmt(f.recovery_latency_ms):>10}")
        lines.append("")
        lines.append(f"false positives: {self.false_positives}   false negatives: {self.false_negatives}   "
                     f"notifications: {self.notifications}")
        for law_id, c in sorted(self.conservation.items()):
            lines.append(f"conservation {law_id}: total {c['actual']} (expected {c['expected']}) "
                         f"{'holds' if c['holds'] else 'BROKEN'}")
        for law_id, m in sorted(self.monitor.items()):
            lines.append(f"monitor {law_id}: {m['births']} births, {m['copies']} copies, "
                         f"{m['addressed']} with both addresses")
        if self.replay and self.wall_seconds:
            n = self.replay.get("entries", 0)
            lines.append(f"replayed {n} entries in {self.wall_seconds:.3f} s ({n / self.wall_seconds:.0f} entries/s)")
        elif self.wall_seconds:
            lines.append(f"throughput: {self.events} events in {self.wall_seconds:.3f} s "
                         f"({self.throughput:.0f} events/s)")
        if self.replay:
            lines.append("replay: " + ", ".join(f"{k}={v}" for k, v in sorted(self.replay.items())))
        return "\n".join(lines)


def _fmt(x: Any) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.3f}"
    return str(x)


def _event_entry(ledger: Ledger, controller: str, event_seq: int) -> LedgerEntry | None:
    for entry in ledger.controller_view(controller):
        if entry.kind is EntryKind.EVENT and Event.from_bytes(entry.body).seq == event_seq:
            return entry
    return None


def fault_outcome(rt: Runtime, faulty: FaultyController) -> FaultOutcome:
    rec = faulty.record
    law_id = faulty.law
    out = FaultOutcome(rec.controller, law_id, rec.mode.value, list(rec.fired_at), rec.diverged_at)
    if rec.diverged_at is None:
        return out
    ledger = rt.ledgers[law_id]
    entry = _event_entry(ledger, rec.controller, rec.diverged_at)
    if entry is None:
        return out
    out.divergent_ctrl_seq = entry.ctrl_seq
    verdict = next((v for v in rt.failures(law_id)
                    if v.controller == rec.controller and v.event_seq == rec.diverged_at), None)
    if verdict is None:
        return out
    out.detected = True
    out.verdict_ctrl_seq = verdict.at_ctrl_seq
    start = rt.append_wall.get((law_id, entry.global_seq))
    if start is not None and verdict.issued:
        out.detection_latency_ms = (verdict.issued - start) * 1000.0
    if verdict.closed_at is not None:
        out.ledger_distance_entries = verdict.closed_at - entry.global_seq
        out.ledger_distance_groups = sum(
            1 for e in ledger.read(entry.global_seq + 1, verdict.closed_at - entry.global_seq)
            if e.kind is EntryKind.EVENT)
    for e in ledger.controller_view(rec.controller, entry.ctrl_seq):
        if e.kind is EntryKind.RECONSTRUCTED and decode(e.body)["at_ctrl_seq"] == verdict.at_ctrl_seq:
            out.recovered = True
            done = rt.append_wall.get((law_id, e.global_seq))
            if done is not None and verdict.issued:
                out.recovery_latency_ms = (done - verdict.issued) * 1000.0
            break
    return out


def ground_truth(faults: Iterable[FaultyController]) -> set[tuple[str, int]]:
    """(controller, event ordinal) of every ruling that departed from the law."""
    return {(f.record.controller, s) for f in faults for s in f.record.divergences}


def build_report(rt: Runtime, name: str = "runtime", *, seed: int = 0, wall_seconds: float = 0.0,
                 budgets: dict[str, int] | None = None, monitors: dict[str, tuple[str, int]] | None = None) -> Report:
    """Summarise a finished run.

    ``budgets`` maps money-transfer law ids to their initial budget;
    ``monitors`` maps monitoring law ids to (monitor controller, messages sent).
    """
    report = Report(name, seed, rt.transport_kind, rt.shards)
    for law_id, insp in rt.inspectors.items():
        failed = len(insp.failures)
        report.laws[law_id] = {
            "entries": len(rt.ledgers[law_id]),
            "verdicts": insp.compliant_count + failed,
            "compliant": insp.compliant_count,
            "failed": failed,
        }
    report.faults = [fault_outcome(rt, f) for f in rt.faults]
    truth = ground_truth(rt.faults)
    flagged = {(v.controller, v.event_seq) for v in rt.failures()}
    report.false_positives = len(flagged - truth)
    report.false_negatives = len(truth - flagged)
    for law_id, initial in (budgets or {}).items():
        members = rt.members[law_id]
        actual = sum(int(rt.controller(c).state.get("budget", 0)) for c in members)
        expected = initial * len(members)
        report.conservation[law_id] = {"expected": expected, "actual": actual, "holds": actual == expected,
                                       "in_flight": rt.transport.pending()}
    for law_id, (monitor, sent) in (monitors or {}).items():
        report.monitor[law_id] = monitor_stats(rt.actors[monitor], rt.members[law_id], sent)
    report.notifications = len(rt.notifications)
    report.events = rt.events_processed()
    report.wall_seconds = wall_seconds
    return report


def monitor_stats(actor: RecordingActor, members: list[str], sent: int) -> dict[str, Any]:
    births: list[str] = []
    copies = addressed = 0
    for _, payload in actor.received:
        try:
            rec = decode(payload)
        except Exception:
            continue
        if not isinstance(rec, dict):
            continue
        if rec.get("type") == "birth":
            births.append(rec.get("agent"))
        elif rec.get("type") == "copy":
            copies += 1
            if rec.get("sender") and rec.get("target"):
                addressed += 1
    return {
        "agents": len(members),
        "births": len(births),
        "births_match": sorted(births) == sorted(members),
        "copies": copies,
        "addressed": addressed,
        "messages": sent,
    }


# --- scenarios ----------------------------------------------------------------


def _resolve_agent_refs(value: Any, agents: list[str]) -> Any:
    """Replace ``"agent:N"`` strings in fault params with controller addresses."""
    if isinstance(value, str) and value.startswith("agent:"):
        try:
            return agents[int(value[6:])]
        except (ValueError, IndexError):
            raise ConfigError(f"bad agent reference {value!r}") from None
    if isinstance(value, dict):
        return {k: _resolve_agent_refs(v, agents) for k, v in value.items()}
    if isinstance(value, list):
        return [_resolve_agent_refs(v, agents) for v in value]
    return value


def fault_spec(fc: FaultConfig, agents: list[str]) -> FaultSpec:
    trigger = Trigger(fc.at_seq, frozenset(EventKind(k) for k in fc.on))
    return FaultSpec(agents[fc.agent], fc.mode, trigger, _resolve_agent_refs(fc.params, agents), fc.repeat)


def build(scenario: Scenario, out_dir: str | Path | None = None) -> tuple[Runtime, dict, dict]:
    """Create the runtime and communities of ``scenario`` (no workload yet)."""
    rt = Runtime(transport=scenario.transport,
                 clock=VirtualClock() if scenario.clock == "virtual" else WallClock(),
                 out_dir=out_dir, chain=scenario.chain, shards=scenario.shards,
                 secret=scenario.secret.encode(), capacity=scenario.capacity)
    for _ in range(scenario.nodes):
        rt.add_node()
    budgets: dict[str, int] = {}
    monitors: dict[str, tuple[str, int]] = {}
    for spec in scenario.laws:
        params = dict(spec.params)
        if spec.monitor:
            sink = rt.register_law(make_law("sink", f"{spec.id}-monitor"))
            mon = rt.spawn(sink.law_id, node=next(iter(rt.nodes)))
            params["monitor"] = mon
            monitors[spec.id] = (mon, 0)
        try:
            law = make_law(spec.kind, spec.id, **params)
        except TypeError as exc:
            raise ConfigError(f"bad params for law {spec.id}: {exc}", field=f"laws.{spec.id}.params") from None
        rt.register_law(law)
        if spec.kind == "money-transfer":
            budgets[spec.id] = law.params["initial_budget"]
        for _ in range(spec.agents):
            rt.spawn(spec.id)
    return rt, budgets, monitors


def workload_plan(scenario: Scenario, rt: Runtime, rng: random.Random) -> list[tuple[int, str, str, bytes]]:
    """(time ms, sender, target, payload) for every message the workload sends."""
    wl = scenario.workload
    if wl is None:
        return []
    senders = rt.members[wl.law]
    targets = senders if wl.cross_law is None else senders + rt.members[wl.cross_law]
    if len(senders) < 1 or len(targets) < 2:
        raise ConfigError("workload needs at least two agents", field="workload.law")
    plan = []
    t = float(rt.clock.now())
    for i in range(wl.count):
        t += rng.expovariate(wl.rate) * 1000.0
        sender = rng.choice(senders)
        target = rng.choice([a for a in targets if a != sender])
        if wl.kind == "transfers":
            payload = str(rng.randint(wl.amount_min, wl.amount_max)).encode()
        else:
            payload = f"message {i}".encode()
        plan.append((int(t), sender, target, payload))
    return plan


def run(scenario: Scenario, out_dir: str | Path | None = None) -> Report:
    """Run a scenario end to end; with ``out_dir``, also write its artifacts there."""
    rng = random.Random(scenario.seed)
    t0 = time.perf_counter()
    rt, budgets, monitors = build(scenario, out_dir)
    try:
        for fc in scenario.faults:
            rt.inject(fault_spec(fc, rt.members[fc.law]))
        plan = workload_plan(scenario, rt, rng)
        sent: dict[str, int] = {}
        for t, sender, target, payload in plan:
            rt.run_until(t)
            if rt.controller(sender).status is not Status.ACTIVE:
                continue
            rt.send(sender, target, payload)
            law_id = rt.controller(sender).law
            sent[law_id] = sent.get(law_id, 0) + 1
        rt.drain()
        rt.flush()
        monitors = {k: (mon, sent.get(k, 0)) for k, (mon, _) in monitors.items()}
        report = build_report(rt, scenario.name, seed=scenario.seed, wall_seconds=time.perf_counter() - t0,
                              budgets=budgets, monitors=monitors)
        if out_dir is not None:
            write_artifacts(rt, report, Path(out_dir))
        return report
    finally:
        rt.close()


def write_artifacts(rt: Runtime, report: Report, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for law_id in rt.inspectors:
        verdicts = rt.verdicts(law_id)
        (out_dir / f"{law_id}.verdicts.bin").write_bytes(b"".join(frame(v.to_bytes()) for v in verdicts))
        (out_dir / f"{law_id}.verdicts.txt").write_text("".join(v.render() + "\n" for v in verdicts))
    with open(out_dir / "notifications.jsonl", "w") as fh:
        for note in rt.notifications:
            fh.write(json.dumps({"controller": note.controller, "operation": repr(note.operation),
                                 "at_ctrl_seq": note.at_ctrl_seq}) + "\n")
    (out_dir / "report.json").write_text(report.to_json() + "\n")


def read_verdicts(path: str | Path) -> list[Verdict]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        n = int.from_bytes(data[pos : pos + 4], "big")
        out.append(Verdict.from_bytes(data[pos + 4 : pos + 4 + n]))
        pos += 4 + n
    return out


def replay_verify(ledger_path: str | Path, *, shards: int = 1) -> Report:
    """Inspect a recorded ledger off-line and compare with the live verdicts, if saved.

    Raises :class:`~cop.ledger.CorruptLedger` when the file fails verification.
    """
    path = Path(ledger_path)
    if not manifest_path(path).exists():
        raise ManifestError(f"no law manifest next to {path}")
    result = replay_file(path, shards=shards)
    failed = len(result.failures)
    report = Report(path.stem, shards=shards)
    report.laws[result.law] = {"entries": result.entries, "verdicts": len(result.verdicts),
                               "compliant": len(result.verdicts) - failed, "failed": failed}
    report.wall_seconds = result.elapsed
    report.replay = {"ledger": str(path), "entries": result.entries, "verified": True}
    live_path = path.with_name(f"{result.law}.verdicts.bin")
    if live_path.exists():
        live = read_verdicts(live_path)
        report.replay["live_verdicts"] = len(live)
        report.replay["live_match"] = live == result.verdicts
    return report


def load_report(out_dir: str | Path) -> Report:
    path = Path(out_dir) / "report.json"
    try:
        return Report.from_dict(json.loads(path.read_text()))
    except FileNotFoundError:
        raise ConfigError(f"{path} not found; run a scenario with --out first") from None


__all__ = [
    "CorruptLedger",
    "FaultOutcome",
    "Report",
    "Runtime",
    "build",
    "build_report",
    "fault_outcome",
    "fault_spec",
    "ground_truth",
    "load_report",
    "read_verdicts",
    "replay_verify",
    "run",
    "workload_plan",
]
