from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

from cop.harness import Runtime
from cop.laws import MoneyTransfer

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    _ACCEPTANCE.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture
def rt():
    runtime = Runtime()
    yield runtime
    runtime.close()


@pytest.fixture
def mt_rt(rt):
    rt.register_law(MoneyTransfer())
    return rt


def random_transfers(rt: Runtime, agents: list[str], count: int, rng: random.Random,
                     lo: int = 1, hi: int = 300) -> None:
    for _ in range(count):
        a, b = rng.sample(agents, 2)
        rt.send(a, b, str(rng.randint(lo, hi)).encode())
        rt.run_until_idle()
