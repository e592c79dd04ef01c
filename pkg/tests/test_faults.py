from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cop.faults import FaultMode, FaultSpec, Trigger, wrap
from cop.harness import Runtime, ground_truth
from cop.law import EventKind, Operation
from cop.laws import MoneyTransfer

from conftest import random_transfers

PARAMS = {
    FaultMode.DROP_OPS: lambda agents: {},
    FaultMode.EXTRA_OP: lambda agents: {"op": Operation.send_message(agents[-1], b"250")},
    FaultMode.CORRUPT_STATE: lambda agents: {"terms": {"budget": 7}},
    FaultMode.WRONG_RULING: lambda agents: {"payload": "1"},
}


def mt_runtime(n, **kw):
    rt = Runtime(**kw)
    rt.register_law(MoneyTransfer())
    return rt, [rt.spawn("MT") for _ in range(n)]


def total(rt, agents):
    return sum(rt.controller(a).state["budget"] for a in agents)


def test_extra_op_inflates_money():
    rt, (x, y) = mt_runtime(2, recover=False)
    rt.inject(FaultSpec(x, FaultMode.EXTRA_OP, Trigger(2), {"op": Operation.send_message(y, b"1000000")}))
    rt.send(x, y, b"10")
    rt.run_until_idle()
    assert total(rt, [x, y]) == 2000 + 1_000_000


def test_drop_forward_destroys_exactly_the_amount():
    rt, agents = mt_runtime(4, recover=False)
    x, y = agents[:2]
    faulty = rt.inject(FaultSpec(x, FaultMode.DROP_OPS, Trigger(2, frozenset({EventKind.SENT})),
                                 {"kinds": ["Forward"]}))
    rt.send(x, y, b"321")
    rt.run_until_idle()
    random_transfers(rt, agents[1:], 20, random.Random(1))
    assert faulty.record.fired_at == [2]
    assert total(rt, agents) == 4000 - 321
    assert len(rt.failures()) == 1


def test_never_firing_trigger_leaves_ledger_identical():
    def go(with_fault):
        rt, agents = mt_runtime(5)
        if with_fault:
            rt.inject(FaultSpec(agents[0], FaultMode.DROP_OPS, Trigger(10_000)))
        random_transfers(rt, agents, 60, random.Random(42))
        rt.flush()
        return [e.to_bytes() for e in rt.ledgers["MT"].read()], rt

    plain, _ = go(False)
    faulted, rt = go(True)
    assert plain == faulted
    assert rt.faults[0].record.fired_at == [] and rt.failures() == []


def test_trigger_waits_for_an_effective_event():
    """drop-ops restricted to Forward cannot fire on an arrival, so it waits for the next send."""
    rt, (x, y) = mt_runtime(2)
    faulty = rt.inject(FaultSpec(x, FaultMode.DROP_OPS, Trigger(2), {"kinds": ["Forward"]}))
    rt.send(y, x, b"5")      # x's event 2 is an arrival
    rt.run_until_idle()
    assert faulty.record.fired_at == []
    rt.send(x, y, b"5")
    rt.run_until_idle()
    assert faulty.record.fired_at == [3]


def test_repeat_fires_every_time():
    rt, (x, y) = mt_runtime(2, recover=False)
    faulty = rt.inject(FaultSpec(x, FaultMode.EXTRA_OP, Trigger(2),
                                 {"op": {"kind": "SendMessage", "target": y, "payload": "1"}}, repeat=True))
    for _ in range(3):
        rt.send(x, y, b"2")
    rt.run_until_idle()
    assert faulty.record.fired_at == [2, 3, 4]
    assert len(rt.failures()) == 3


def test_wrap_checks_target():
    rt, (x, y) = mt_runtime(2)
    with pytest.raises(ValueError):
        wrap(rt.controller(x), FaultSpec(y, FaultMode.DROP_OPS))


def test_corrupt_state_detected_at_first_divergence():
    rt, agents = mt_runtime(3)
    x, y = agents[:2]
    faulty = rt.inject(FaultSpec(x, FaultMode.CORRUPT_STATE, Trigger(2), {"terms": {"budget": 5}}))
    rt.send(x, y, b"100")    # state silently wrong, operations honest
    rt.run_until_idle()
    assert faulty.record.fired_at == [2] and faulty.record.divergences == []
    assert rt.failures() == []
    rt.send(x, y, b"50")     # x now refuses: 5 < 50
    rt.run_until_idle()
    (v,) = rt.failures()
    assert faulty.record.diverged_at == 3
    assert (v.controller, v.event_seq) == (x, 3)


@settings(max_examples=20)
@given(st.sampled_from(list(FaultMode)), st.integers(1, 30), st.integers(0, 10**6))
def test_every_divergence_is_flagged_and_nothing_else(mode, at, seed):
    rt, agents = mt_runtime(6)
    rt.inject(FaultSpec(agents[0], mode, Trigger(at), PARAMS[mode](agents)))
    random_transfers(rt, agents, 80, random.Random(seed))
    rt.flush()
    flagged = {(v.controller, v.event_seq) for v in rt.failures()}
    assert flagged == ground_truth(rt.faults)
