"""Reference models written independently of the package's law engine and
inspector. Tests compare the package against these."""

from __future__ import annotations

import re
from collections import defaultdict

from cop.encoding import decode
from cop.law import ControllerState, Event, Operation
from cop.ledger import EntryKind, LedgerEntry

_AMOUNT = re.compile(rb"[+-]?[0-9]{1,18}")

INITIAL_BUDGET = 1000


def amount(payload: bytes) -> int | None:
    if _AMOUNT.fullmatch(payload) is None:
        return None
    return int(payload)


def money_transfer(kind: str, budget: int | None, payload: bytes, *, target: str | None = None,
                   initial: int = INITIAL_BUDGET) -> tuple[list[tuple], int | None]:
    """Hand-written money-transfer law.

    Returns the ruling as plain tuples and the budget afterwards (None when the
    controller has no budget term).
    """
    if kind == "adopted":
        return [("SetTerm", "budget", initial)], initial
    if budget is None:
        return [], budget
    amt = amount(payload)
    if amt is None or amt <= 0:
        return [], budget
    if kind == "sent" and amt <= budget:
        return [("SetTerm", "budget", budget - amt), ("Forward", target, payload)], budget - amt
    if kind == "arrived":
        return [("SetTerm", "budget", budget + amt), ("Deliver", payload)], budget + amt
    return [], budget


def as_tuples(ops) -> list[tuple]:
    out = []
    for op in ops:
        a = op.args
        kind = op.kind.value
        if kind == "SetTerm":
            out.append((kind, a["key"], a["value"]))
        elif kind in ("Forward", "SendMessage"):
            out.append((kind, a["target"], a["payload"]))
        elif kind == "Deliver":
            out.append((kind, a["payload"]))
        elif kind == "ImposeObligation":
            out.append((kind, a["name"], a["dt_ms"]))
        else:
            out.append((kind,))
    return out


def fold_ledger(entries: list[LedgerEntry], law) -> tuple[list[str], dict[str, ControllerState]]:
    """Fold ``law.evaluate`` over each controller's logged events from the empty state.

    Returns a list of mismatch descriptions (empty when every logged ruling
    equals the recomputed one byte for byte) and the folded final states.
    Only meaningful for ledgers without repair or reconstruction entries.
    """
    by_ctrl: dict[str, list[LedgerEntry]] = defaultdict(list)
    for e in entries:
        by_ctrl[e.controller].append(e)
    problems: list[str] = []
    finals: dict[str, ControllerState] = {}
    for cid, seq in by_ctrl.items():
        state = ControllerState()
        expected: list[bytes] | None = None
        observed: list[bytes] = []

        def settle():
            if expected is not None and observed != expected:
                problems.append(f"{cid}: expected {expected!r}, logged {observed!r}")

        for e in seq:
            if e.kind is EntryKind.EVENT:
                settle()
                ruling = law.evaluate(Event.from_bytes(e.body), state)
                expected = [op.to_bytes() for op in ruling.operations]
                observed = []
                state = ruling.new_state
            elif e.kind is EntryKind.OPERATION:
                observed.append(Operation.from_bytes(e.body).to_bytes())
            elif e.kind is EntryKind.RULING_END:
                settle()
                expected = None
            else:
                problems.append(f"{cid}: unexpected {e.kind.value} entry in an honest ledger")
        settle()
        finals[cid] = state
    return problems, finals


def csv_trajectory(entries: list[LedgerEntry], law, controller: str) -> list[ControllerState]:
    """State before each of ``controller``'s events, folding from the empty state.

    Reconstruction entries reset the fold to the planted state, mirroring what
    an honest replacement controller would hold.
    """
    state = ControllerState()
    out = []
    for e in entries:
        if e.controller != controller:
            continue
        if e.kind is EntryKind.EVENT:
            out.append(state)
            state = law.evaluate(Event.from_bytes(e.body), state).new_state
        elif e.kind is EntryKind.RECONSTRUCTED:
            state = ControllerState(decode(e.body)["csv"])
    return out
