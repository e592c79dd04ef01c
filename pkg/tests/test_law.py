from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cop.encoding import decode
from cop.law import (
    AgentAddress,
    ControllerState,
    DuplicateLawId,
    Event,
    EventKind,
    Law,
    LawRegistry,
    MalformedEvent,
    NonDeterministicLaw,
    Operation,
    OpKind,
    Ruling,
    UnknownLaw,
    canonical_bytes,
)
from cop.laws import Lock, MoneyTransfer, Monitoring, Password, Sink, make_law

from oracles import as_tuples, money_transfer

X, Y, MON = "n0/c0001", "n0/c0002", "n9/c0001"


def ev(kind, seq=2, source=None, target=None, payload=b"", controller=X):
    return Event(EventKind(kind), controller, seq, source, target, payload)


def sent(amount, target=Y):
    return ev("sent", source=X, target=target, payload=str(amount).encode())


def arrived(amount, source=Y):
    return ev("arrived", source=source, target=X, payload=str(amount).encode())


@pytest.fixture
def mt():
    return MoneyTransfer()


# --- examples -------------------------------------------------------------------


def test_mt_adoption_sets_budget(mt):
    r = mt.evaluate(ev("adopted", seq=1), ControllerState())
    assert r.operations == (Operation.set_term("budget", 1000),)
    assert r.new_state == {"budget": 1000}


def test_mt_overdraft_blocked(mt):
    s = ControllerState({"budget": 1000})
    r = mt.evaluate(sent(1500), s)
    assert r.operations == ()
    assert r.new_state == s


def test_mt_send_deducts_then_forwards(mt):
    r = mt.evaluate(sent(200), ControllerState({"budget": 1000}))
    assert r.operations == (Operation.set_term("budget", 800), Operation.forward(Y, b"200"))
    assert r.new_state == {"budget": 800}


def test_mt_arrival_deposits_then_delivers(mt):
    r = mt.evaluate(arrived(200), ControllerState({"budget": 500}))
    assert r.operations == (Operation.set_term("budget", 700), Operation.deliver(b"200"))
    assert r.new_state == {"budget": 700}


def test_mt_negative_arrival_blocked(mt):
    s = ControllerState({"budget": 500})
    assert mt.evaluate(arrived(-5), s) == Ruling.empty(s)


def test_mo_adoption_reports_birth():
    mo = Monitoring(monitor=MON)
    r = mo.evaluate(ev("adopted", seq=1), ControllerState())
    (op,) = r.operations
    assert op.kind is OpKind.SEND_MESSAGE and op.args["target"] == MON
    assert decode(op.args["payload"]) == {"type": "birth", "agent": X}


def test_mo_send_forwards_and_copies_with_addresses():
    mo = Monitoring(monitor=MON)
    r = mo.evaluate(ev("sent", source=X, target=Y, payload=b"hi"), ControllerState())
    fwd, copy = r.operations
    assert fwd == Operation.forward(Y, b"hi")
    assert copy.kind is OpKind.SEND_MESSAGE and copy.args["target"] == MON
    assert decode(copy.args["payload"]) == {"type": "copy", "sender": X, "target": Y, "body": b"hi"}


def test_canonical_bytes_examples():
    empty = Ruling.empty(ControllerState())
    assert canonical_bytes(empty) == canonical_bytes(Ruling.empty(ControllerState()))
    a, b = Operation.set_term("budget", 1), Operation.deliver(b"x")
    s = ControllerState()
    assert canonical_bytes(Ruling((a, b), s)) != canonical_bytes(Ruling((b, a), s))
    one = Operation(OpKind.FORWARD, {"target": Y, "payload": b"1"})
    two = Operation(OpKind.FORWARD, {"payload": b"1", "target": Y})
    assert canonical_bytes(Ruling((one,), s)) == canonical_bytes(Ruling((two,), s))
    s1 = ControllerState({"a": 1, "b": 2})
    s2 = ControllerState({"b": 2, "a": 1})
    assert canonical_bytes(Ruling((), s1)) == canonical_bytes(Ruling((), s2))


def test_register_examples():
    r1, r2 = LawRegistry(), LawRegistry()
    assert r1.register(MoneyTransfer()) == "MT"
    r2.register(MoneyTransfer())
    assert r1.get("MT").version_hash == r2.get("MT").version_hash
    assert r1.register(MoneyTransfer()) == "MT"
    with pytest.raises(DuplicateLawId):
        r1.register(MoneyTransfer(initial_budget=999))
    with pytest.raises(UnknownLaw):
        r1.get("nope")
    assert r1.ids() == ["MT"]


def test_version_hash_tracks_implementation():
    class OtherMT(MoneyTransfer):
        def rule(self, event, state):
            return None

    assert OtherMT().version_hash != MoneyTransfer().version_hash
    reg = LawRegistry()
    reg.register(MoneyTransfer())
    with pytest.raises(DuplicateLawId):
        reg.register(OtherMT())


def test_nondeterministic_law_rejected():
    class Coin(Law):
        law_id = "COIN"

        def rule(self, event, state):
            return Ruling((), ControllerState({"x": random.getrandbits(60)}))

    with pytest.raises(NonDeterministicLaw):
        LawRegistry().register(Coin())


def test_raising_law_gives_empty_ruling():
    class Broken(Law):
        law_id = "BROKEN"

        def rule(self, event, state):
            raise ZeroDivisionError

    s = ControllerState({"k": 1})
    assert Broken().evaluate(ev("quit"), s) == Ruling.empty(s)


def test_password_law():
    pw = Password(password="sesame")
    ok = pw.evaluate(ev("adopted", seq=1, payload=b"sesame"), ControllerState())
    assert ok.new_state == {"member": 1}
    bad = pw.evaluate(ev("adopted", seq=1, payload=b"guess"), ControllerState())
    assert bad.operations == (Operation.quit_self(),)


def test_lock_law_imposes_and_sanctions():
    lock = Lock(lease_ms=100)
    s = lock.evaluate(ev("adopted", seq=1), ControllerState()).new_state
    r = lock.evaluate(ev("sent", source=X, target=Y, payload=b"acquire"), s)
    assert as_tuples(r.operations) == [("SetTerm", "holding", 1), ("SetTerm", "lock", Y),
                                       ("Forward", Y, b"acquire"), ("ImposeObligation", "lease", 100)]
    due = lock.evaluate(ev("obligationDue", payload=b"lease"), r.new_state)
    assert as_tuples(due.operations) == [("SetTerm", "holding", 0), ("SendMessage", Y, b"release")]
    assert lock.evaluate(ev("obligationDue", payload=b"other"), r.new_state).operations == ()


def test_event_validation():
    with pytest.raises(MalformedEvent):
        Event(EventKind.SENT, X, 1)
    with pytest.raises(MalformedEvent):
        Event(EventKind.ARRIVED, X, 1, target=X)
    with pytest.raises(MalformedEvent):
        Event(EventKind.ADOPTED, X, 0)
    e = sent(5)
    assert Event.from_bytes(e.to_bytes()) == e


def test_operation_args_checked():
    with pytest.raises(ValueError):
        Operation(OpKind.FORWARD, {"target": Y})
    with pytest.raises(TypeError):
        Operation.set_term("k", 1.5)
    with pytest.raises(TypeError):
        Operation.set_term("k", True)
    op = Operation.impose_obligation("lease", 100)
    assert Operation.from_bytes(op.to_bytes()) == op


def test_address_parse():
    a = AgentAddress.parse("n3/c0007")
    assert a.cpnode == "n3" and str(a) == "n3/c0007"
    with pytest.raises(ValueError):
        AgentAddress.parse("nonsense")


def test_make_law_unknown_kind():
    with pytest.raises(ValueError):
        make_law("alchemy")


# --- properties -------------------------------------------------------------------

ids = st.sampled_from([X, Y, MON, "n1/c0003"])
payloads = st.one_of(
    st.integers(-2000, 3000).map(lambda n: str(n).encode()),
    st.binary(max_size=8),
    st.sampled_from([b"acquire", b"release", b"lease", b"+5", b"007", b"1e3"]),
)
term_values = st.integers(-5000, 5000) | st.text(max_size=8) | st.binary(max_size=4)
states = st.dictionaries(st.sampled_from(["budget", "holding", "lock", "member", "junk"]), term_values, max_size=4)


@st.composite
def events(draw):
    kind = draw(st.sampled_from(list(EventKind)))
    source = draw(ids) if kind is EventKind.ARRIVED else draw(st.none() | ids)
    target = draw(ids) if kind is EventKind.SENT else draw(st.none() | ids)
    return Event(kind, draw(ids), draw(st.integers(1, 50)), source, target, draw(payloads))


ALL_LAWS = [MoneyTransfer(), Monitoring(monitor=MON), Sink(), Lock(), Password()]


@settings(max_examples=1000)
@given(events(), states)
def test_purity_and_totality(event, terms):
    state = ControllerState(terms)
    for law in ALL_LAWS:
        first = law.evaluate(event, state)
        second = law.evaluate(event, state)
        assert canonical_bytes(first) == canonical_bytes(second)
        if not first.operations and first.new_state != state:
            pytest.fail(f"{law.law_id}: state changed without operations")


@settings(max_examples=500)
@given(events(), st.none() | st.integers(-100, 5000))
def test_mt_matches_reference_model(event, budget):
    state = ControllerState({} if budget is None else {"budget": budget})
    got = MoneyTransfer().evaluate(event, state)
    want_ops, want_budget = money_transfer(event.kind.value, budget, event.payload, target=event.target)
    assert as_tuples(got.operations) == want_ops
    assert got.new_state.get("budget") == want_budget


@given(st.integers(0, 5000), st.integers(-100, 6000))
def test_mt_local_conservation(budget, amount):
    mt = MoneyTransfer()
    s = ControllerState({"budget": budget})
    r = mt.evaluate(sent(amount), s)
    if any(op.kind is OpKind.FORWARD for op in r.operations):
        assert r.new_state["budget"] == budget - amount
    else:
        assert r.new_state == s
    r = mt.evaluate(arrived(amount), s)
    if r.operations:
        assert r.new_state["budget"] == budget + amount


@given(events(), states)
def test_locality_across_registries(event, terms):
    small, big = LawRegistry(), LawRegistry()
    small.register(MoneyTransfer())
    for law in (Lock(), Sink(), MoneyTransfer(), Monitoring(monitor=MON)):
        big.register(law)
    state = ControllerState(terms)
    assert canonical_bytes(small.evaluate("MT", event, state)) == canonical_bytes(big.evaluate("MT", event, state))


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 9)), max_size=6))
def test_state_equality_is_structural(pairs):
    d = dict(pairs)
    assert ControllerState(d) == ControllerState(dict(reversed(list(d.items()))))
    assert ControllerState(d).to_bytes() == ControllerState(dict(sorted(d.items()))).to_bytes()
