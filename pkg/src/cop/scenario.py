"""Scenario files (TOML).

A scenario names the laws and their communities, the CPnode topology, a
workload, and the faults to inject. See ``docs/scenario.md`` for the schema.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from cop.faults import FaultMode
from cop.law import EventKind
from cop.laws import LAW_KINDS


class ConfigError(ValueError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class LawSpec:
    id: str
    kind: str
    agents: int = 0
    params: dict[str, Any] = field(default_factory=dict)
    monitor: bool = False


@dataclass
class WorkloadSpec:
    law: str
    kind: str = "transfers"
    count: int = 100
    rate: float = 1000.0
    amount_min: int = 1
    amount_max: int = 300
    cross_law: str | None = None


@dataclass
class FaultConfig:
    law: str
    agent: int
    mode: FaultMode
    at_seq: int = 1
    on: tuple[str, ...] = ()
    repeat: bool = False
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    transport: str = "inproc"
    clock: str = "virtual"
    shards: int = 1
    chain: bool = True
    nodes: int = 1
    capacity: int = 500
    secret: str = "cop-shared-secret"
    laws: list[LawSpec] = field(default_factory=list)
    workload: WorkloadSpec | None = None
    faults: list[FaultConfig] = field(default_factory=list)

    def law(self, law_id: str) -> LawSpec:
        for spec in self.laws:
            if spec.id == law_id:
                return spec
        raise KeyError(law_id)


_TOP = {"name", "seed", "transport", "clock", "shards", "chain", "secret", "topology", "laws", "workload", "faults"}


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, key: str, table: str | None = None) -> int | None:
        start = 0
        if table is not None:
            hdr = re.compile(r"^\s*\[\[?\s*" + re.escape(table) + r"\s*\]\]?\s*$")
            for i, line in enumerate(self.lines):
                if hdr.match(line):
                    start = i
                    break
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        for i in range(start, len(self.lines)):
            if pat.match(self.lines[i]):
                return i + 1
        return None

    def fail(self, message: str, path: str, table: str | None = None) -> ConfigError:
        key = path.rsplit(".", 1)[-1].split("[")[0]
        return ConfigError(message, field=path, line=self.line_of(key, table))


def _get(d: dict, key: str, kind, default, path: str, rd: _Reader, table: str | None = None):
    if key not in d:
        if default is _REQUIRED:
            raise ConfigError("missing required field", field=f"{path}{key}", line=None)
        return default
    value = d[key]
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if isinstance(value, bool) and bool not in kinds:
        raise rd.fail(f"expected {'/'.join(k.__name__ for k in kinds)}, got bool", f"{path}{key}", table)
    if not isinstance(value, kinds):
        raise rd.fail(f"expected {'/'.join(k.__name__ for k in kinds)}, got {type(value).__name__}",
                      f"{path}{key}", table)
    return value


_REQUIRED = object()


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None) from None
    rd = _Reader(text)
    unknown = set(raw) - _TOP
    if unknown:
        key = sorted(unknown)[0]
        raise rd.fail("unknown field", key)

    sc = Scenario(name=_get(raw, "name", str, name, "", rd))
    sc.seed = _get(raw, "seed", int, 0, "", rd)
    sc.transport = _get(raw, "transport", str, "inproc", "", rd)
    if sc.transport not in ("inproc", "tcp"):
        raise rd.fail("must be 'inproc' or 'tcp'", "transport")
    sc.clock = _get(raw, "clock", str, "virtual" if sc.transport == "inproc" else "wall", "", rd)
    if sc.clock not in ("virtual", "wall"):
        raise rd.fail("must be 'virtual' or 'wall'", "clock")
    if sc.transport == "tcp" and sc.clock == "virtual":
        raise rd.fail("tcp transport runs on the wall clock", "clock")
    sc.shards = _get(raw, "shards", int, 1, "", rd)
    if sc.shards < 1:
        raise rd.fail("must be >= 1", "shards")
    sc.chain = _get(raw, "chain", bool, True, "", rd)
    sc.secret = _get(raw, "secret", str, sc.secret, "", rd)

    topo = _get(raw, "topology", dict, {}, "", rd)
    sc.nodes = _get(topo, "nodes", int, 1, "topology.", rd, "topology")
    sc.capacity = _get(topo, "capacity", int, 500, "topology.", rd, "topology")
    if sc.nodes < 1:
        raise rd.fail("must be >= 1", "topology.nodes", "topology")

    laws = _get(raw, "laws", list, [], "", rd)
    if not laws:
        raise ConfigError("at least one [[laws]] table is required", field="laws")
    seen = set()
    for i, item in enumerate(laws):
        p = f"laws[{i}]."
        if not isinstance(item, dict):
            raise ConfigError("expected a table", field=f"laws[{i}]")
        spec = LawSpec(
            id=_get(item, "id", str, _REQUIRED, p, rd, "laws"),
            kind=_get(item, "kind", str, _REQUIRED, p, rd, "laws"),
            agents=_get(item, "agents", int, 0, p, rd, "laws"),
            params=dict(_get(item, "params", dict, {}, p, rd, "laws")),
            monitor=_get(item, "monitor", bool, False, p, rd, "laws"),
        )
        if spec.kind not in LAW_KINDS:
            raise rd.fail(f"unknown law kind {spec.kind!r} (known: {', '.join(sorted(LAW_KINDS))})",
                          f"{p}kind", "laws")
        if spec.id in seen:
            raise rd.fail(f"duplicate law id {spec.id!r}", f"{p}id", "laws")
        if spec.monitor and spec.kind != "monitoring":
            raise rd.fail("only monitoring laws take a monitor agent", f"{p}monitor", "laws")
        if spec.kind == "monitoring" and not spec.monitor and "monitor" not in spec.params:
            raise ConfigError("monitoring law needs monitor = true or params.monitor", field=f"{p}monitor")
        seen.add(spec.id)
        sc.laws.append(spec)

    wl = _get(raw, "workload", dict, None, "", rd)
    if wl is not None:
        w = WorkloadSpec(law=_get(wl, "law", str, _REQUIRED, "workload.", rd, "workload"))
        w.kind = _get(wl, "kind", str, "transfers", "workload.", rd, "workload")
        w.count = _get(wl, "count", int, 100, "workload.", rd, "workload")
        w.rate = float(_get(wl, "rate", (int, float), 1000.0, "workload.", rd, "workload"))
        duration = _get(wl, "duration", (int, float), None, "workload.", rd, "workload")
        if duration is not None and "count" not in wl:
            w.count = int(duration * w.rate)
        w.amount_min = _get(wl, "amount_min", int, 1, "workload.", rd, "workload")
        w.amount_max = _get(wl, "amount_max", int, 300, "workload.", rd, "workload")
        w.cross_law = _get(wl, "cross_law", str, None, "workload.", rd, "workload")
        if w.law not in seen:
            raise rd.fail(f"unknown law {w.law!r}", "workload.law", "workload")
        if w.cross_law is not None and w.cross_law not in seen:
            raise rd.fail(f"unknown law {w.cross_law!r}", "workload.cross_law", "workload")
        if w.kind not in ("transfers", "messages"):
            raise rd.fail("must be 'transfers' or 'messages'", "workload.kind", "workload")
        if w.rate <= 0 or w.count < 0 or w.amount_min > w.amount_max:
            raise rd.fail("rate must be > 0, count >= 0 and amount_min <= amount_max", "workload.rate", "workload")
        sc.workload = w

    for i, item in enumerate(_get(raw, "faults", list, [], "", rd)):
        p = f"faults[{i}]."
        law_id = _get(item, "law", str, _REQUIRED, p, rd, "faults")
        if law_id not in seen:
            raise rd.fail(f"unknown law {law_id!r}", f"{p}law", "faults")
        mode = _get(item, "mode", str, _REQUIRED, p, rd, "faults")
        try:
            fmode = FaultMode(mode)
        except ValueError:
            raise rd.fail(f"unknown mode {mode!r} (known: {', '.join(m.value for m in FaultMode)})",
                          f"{p}mode", "faults") from None
        on = tuple(_get(item, "on", list, [], p, rd, "faults"))
        for k in on:
            try:
                EventKind(k)
            except ValueError:
                raise rd.fail(f"unknown event kind {k!r}", f"{p}on", "faults") from None
        fc = FaultConfig(
            law=law_id,
            agent=_get(item, "agent", int, _REQUIRED, p, rd, "faults"),
            mode=fmode,
            at_seq=_get(item, "at_seq", int, 1, p, rd, "faults"),
            on=on,
            repeat=_get(item, "repeat", bool, False, p, rd, "faults"),
            params=dict(_get(item, "params", dict, {}, p, rd, "faults")),
        )
        if not 0 <= fc.agent < sc.law(law_id).agents:
            raise rd.fail(f"agent index out of range for law {law_id!r}", f"{p}agent", "faults")
        sc.faults.append(fc)
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    return parse_scenario(text, name=path.stem)
