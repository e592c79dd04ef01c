from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cop.controller import AlreadyAdopted, NotActive, Rejected, Status
from cop.encoding import decode
from cop.law import Event, EventKind, Operation, OpKind
from cop.ledger import EntryKind
from cop.laws import Lock, MoneyTransfer, Monitoring, Password, Sink

from conftest import random_transfers


def ops_of(rt, law, controller):
    return [Operation.from_bytes(e.body) for e in rt.ledgers[law].controller_view(controller)
            if e.kind is EntryKind.OPERATION]


def events_of(rt, law, controller):
    return [Event.from_bytes(e.body) for e in rt.ledgers[law].controller_view(controller)
            if e.kind is EntryKind.EVENT]


def test_adopt_mt(mt_rt):
    node = mt_rt.add_node()
    ctrl = node.provision_controller()
    assert ctrl.status is Status.GENERIC and ctrl.law is None and ctrl.state == {}
    ctrl.adopt("MT")
    assert ctrl.status is Status.ACTIVE
    assert ctrl.state == {"budget": 1000}
    with pytest.raises(AlreadyAdopted):
        ctrl.adopt("MT")


def test_adopt_wrong_password_rejected(rt):
    rt.register_law(Password(password="sesame"))
    node = rt.add_node()
    good = node.provision_controller()
    good.adopt("PW", b"sesame")
    assert good.state == {"member": 1}
    bad = node.provision_controller()
    with pytest.raises(Rejected):
        bad.adopt("PW", b"guess")
    assert bad.status is Status.QUIT
    rt.flush()
    assert rt.failures() == []


def test_send_within_budget_forwards(mt_rt):
    x, y = mt_rt.spawn("MT"), mt_rt.spawn("MT")
    mt_rt.send(x, y, b"200")
    mt_rt.run_until_idle()
    assert ops_of(mt_rt, "MT", x)[-2:] == [Operation.set_term("budget", 800), Operation.forward(y, b"200")]
    assert events_of(mt_rt, "MT", y)[-1].kind is EventKind.ARRIVED
    assert mt_rt.actors[y].received == [(x, b"200")]
    assert mt_rt.controller(y).state["budget"] == 1200


def test_send_over_budget_blocked_silently(mt_rt):
    x, y = mt_rt.spawn("MT"), mt_rt.spawn("MT")
    mt_rt.send(x, y, b"900")
    mt_rt.run_until_idle()
    before = ops_of(mt_rt, "MT", x)
    mt_rt.send(x, y, b"200")
    mt_rt.run_until_idle()
    assert ops_of(mt_rt, "MT", x) == before
    assert mt_rt.controller(x).state["budget"] == 100
    assert mt_rt.actors[y].received == [(x, b"900")]
    assert mt_rt.failures() == []


def test_mo_send_forwards_and_copies(rt):
    rt.register_law(Sink())
    mon = rt.spawn("SINK")
    rt.register_law(Monitoring(monitor=mon))
    x, y = rt.spawn("MO"), rt.spawn("MO")
    rt.send(x, y, b"hi")
    rt.run_until_idle()
    kinds = [op.kind for op in ops_of(rt, "MO", x)]
    assert kinds == [OpKind.SEND_MESSAGE, OpKind.FORWARD, OpKind.SEND_MESSAGE]
    assert rt.actors[y].received == [(x, b"hi")]
    records = [decode(p) for _, p in rt.actors[mon].received]
    assert {"type": "copy", "sender": x, "target": y, "body": b"hi"} in records


def test_receive_examples(mt_rt):
    x, y = mt_rt.spawn("MT"), mt_rt.spawn("MT")
    mt_rt.send(y, x, b"500")
    mt_rt.run_until_idle()
    assert mt_rt.controller(y).state["budget"] == 500
    mt_rt.controller(y).receive_message(x, b"200")
    mt_rt.run_until_idle()
    assert mt_rt.controller(y).state["budget"] == 700
    mt_rt.controller(y).receive_message(x, b"-5")
    mt_rt.run_until_idle()
    assert mt_rt.controller(y).state["budget"] == 700
    assert mt_rt.actors[y].received == [(x, b"200")]
    mt_rt.flush()
    assert mt_rt.failures() == []


def test_quit_controller_drops_input(mt_rt):
    x, y = mt_rt.spawn("MT"), mt_rt.spawn("MT")
    mt_rt.controller(y).quit()
    mt_rt.run_until_idle()
    assert mt_rt.controller(y).status is Status.QUIT
    with pytest.raises(NotActive):
        mt_rt.controller(y).receive_message(x, b"5")
    mt_rt.send(x, y, b"5")
    mt_rt.run_until_idle()
    # the transfer fails at the transport; the sender hears about it
    assert events_of(mt_rt, "MT", x)[-1].kind is EventKind.EXCEPTION
    assert events_of(mt_rt, "MT", y)[-1].kind is EventKind.QUIT


def test_obligation_with_unknown_name_is_empty_ruling(mt_rt):
    x = mt_rt.spawn("MT")
    mt_rt.controller(x).raise_obligation_due("nothing")
    mt_rt.run_until_idle()
    assert ops_of(mt_rt, "MT", x) == [Operation.set_term("budget", 1000)]


def test_two_obligations_processed_serially(rt):
    rt.register_law(Lock())
    x = rt.spawn("LOCK")
    c = rt.controller(x)
    c.raise_obligation_due("first")
    c.raise_obligation_due("second")
    rt.run_until_idle()
    due = [e for e in events_of(rt, "LOCK", x) if e.kind is EventKind.OBLIGATION_DUE]
    assert [e.payload for e in due] == [b"first", b"second"]
    assert due[0].seq < due[1].seq


def test_lock_sanction_releases(rt):
    rt.register_law(Lock(lease_ms=100))
    mgr, x = rt.spawn("LOCK"), rt.spawn("LOCK")
    rt.send(x, mgr, b"acquire")
    rt.run_until(99)
    assert rt.controller(x).state["holding"] == 1
    rt.run_until(100)
    assert rt.controller(x).state["holding"] == 0
    assert rt.actors[mgr].received == [(x, b"acquire"), (x, b"release")]


def test_execute_ruling_order_in_ledger(mt_rt):
    x, y = mt_rt.spawn("MT"), mt_rt.spawn("MT")
    mt_rt.send(x, y, b"200")
    mt_rt.run_until_idle()
    kinds = [e.kind for e in mt_rt.ledgers["MT"].controller_view(x)]
    assert kinds[-4:] == [EntryKind.EVENT, EntryKind.OPERATION, EntryKind.OPERATION, EntryKind.RULING_END]


def test_quit_self_stops_events(rt):
    rt.register_law(Password(password="pw"))
    node = rt.add_node()
    c = node.provision_controller()
    with pytest.raises(Rejected):
        c.adopt("PW", b"nope")
    with pytest.raises(NotActive):
        c.submit_send("n0/c9999", b"x")


def _check_serial_atomicity(rt, law):
    """Each controller's view: event, its ruling's operations, a ruling-end marker, and so on."""
    for cid in rt.ledgers[law].controllers():
        view = list(rt.ledgers[law].controller_view(cid))
        assert [e.ctrl_seq for e in view] == list(range(1, len(view) + 1))
        expect_event = True
        for e in view:
            if expect_event:
                assert e.kind is EntryKind.EVENT
                expect_event = False
            elif e.kind is EntryKind.RULING_END:
                expect_event = True
            else:
                assert e.kind is EntryKind.OPERATION
        assert expect_event


@settings(max_examples=25)
@given(st.integers(2, 6), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(-50, 1500)),
                                   max_size=40))
def test_serial_atomicity_and_dual_mediation(n, plan):
    from cop.harness import Runtime

    with Runtime() as rt:
        rt.register_law(MoneyTransfer())
        agents = [rt.spawn("MT") for _ in range(n)]
        for a, b, amt in plan:
            a, b = agents[a % n], agents[b % n]
            if a != b:
                rt.send(a, b, str(amt).encode())
        rt.run_until_idle()
        _check_serial_atomicity(rt, "MT")
        # every forwarded transfer shows up as an arrival at its target, after the forward
        entries = rt.ledgers["MT"].read()
        forwards = []
        for e in entries:
            if e.kind is EntryKind.OPERATION:
                op = Operation.from_bytes(e.body)
                if op.kind is OpKind.FORWARD:
                    forwards.append((e.global_seq, e.controller, op.args["target"], op.args["payload"]))
        arrivals = [(e.global_seq, Event.from_bytes(e.body)) for e in entries if e.kind is EntryKind.EVENT]
        arrivals = [(g, ev) for g, ev in arrivals if ev.kind is EventKind.ARRIVED]
        assert len(forwards) == len(arrivals)
        for g, src, dst, payload in forwards:
            match = [a for a in arrivals if a[1].source == src and a[1].controller == dst
                     and a[1].payload == payload and a[0] > g]
            assert match


@settings(max_examples=20)
@given(st.integers(2, 8), st.integers(0, 2**32))
def test_global_conservation_at_every_step(n, seed):
    from cop.harness import Runtime

    rng = random.Random(seed)
    with Runtime() as rt:
        rt.register_law(MoneyTransfer())
        agents = [rt.spawn("MT") for _ in range(n)]
        for _ in range(30):
            a, b = rng.sample(agents, 2)
            rt.send(a, b, str(rng.randint(1, 700)).encode())
        forwarded = arrived = 0
        seen = 0
        while True:
            progressed = rt.step()
            for e in rt.ledgers["MT"].read(seen):
                seen += 1
                if e.kind is EntryKind.OPERATION:
                    op = Operation.from_bytes(e.body)
                    if op.kind is OpKind.FORWARD:
                        forwarded += int(op.args["payload"])
                    elif op.kind is OpKind.DELIVER:
                        arrived += int(op.args["payload"])
            budgets = sum(rt.controller(a).state["budget"] for a in agents)
            assert budgets + forwarded - arrived == 1000 * n
            if not progressed:
                break
        assert forwarded == arrived
        assert budgets == 1000 * n


def test_honest_replay_reproduces_controllers(mt_rt):
    from oracles import fold_ledger

    agents = [mt_rt.spawn("MT") for _ in range(6)]
    random_transfers(mt_rt, agents, 150, random.Random(4))
    problems, finals = fold_ledger(mt_rt.ledgers["MT"].read(), mt_rt.laws["MT"])
    assert problems == []
    for a in agents:
        assert finals[a] == mt_rt.controller(a).state
