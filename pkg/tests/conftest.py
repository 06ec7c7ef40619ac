from __future__ import annotations

import math

import pytest
from hypothesis import HealthCheck, settings

from cdeo_lab.kernel import MarketParams
from cdeo_lab.payoff import make_put

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

K100 = math.log(100.0)


@pytest.fixture
def put_market() -> MarketParams:
    """The put experiment: r = 6%, sigma = 40%, half a year, spot 10% above strike."""
    return MarketParams(0.06, 0.4, 0.5, K100 + 0.1)


@pytest.fixture
def put_payoff():
    return make_put(K100)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Records one PASS/FAIL line per acceptance criterion, then asserts it."""
    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f"  [{detail}]" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
