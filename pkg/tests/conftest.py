from pathlib import Path

import numpy as np
import pytest

from adaprox.problems import LogisticL1Instance, make_pool_quadratic

ROOT = Path(__file__).resolve().parents[1]
MUSHROOMS = ROOT / "data" / "mushrooms.gz"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_logistic():
    r = np.random.default_rng(7)
    Z = r.normal(size=(40, 5))
    Z[np.abs(Z) < 0.6] = 0.0
    y = np.where(r.random(40) < 0.5, -1.0, 1.0)
    return LogisticL1Instance(Z, y, name="toy")


@pytest.fixture
def quad():
    return make_pool_quadratic(4, 0.2, 2.0, 0.5, pool_size=30, seed=3)


@pytest.fixture
def quad_constrained():
    return make_pool_quadratic(3, 0.5, 2.0, 0.3, pool_size=6, seed=5, constraint=[1.0, -1.0, 0.5])
