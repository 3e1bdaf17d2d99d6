from pathlib import Path

import numpy as np
import pytest

from robust_mte.data import CellStats

FIXTURES = Path(__file__).parent / "fixtures"


def make_stats(p, q=None, beta1=None, beta0=None, sigma2=1.0, n=2000):
    p = np.asarray(p, dtype=float)
    q = np.full(p.size, 1.0 / p.size) if q is None else np.asarray(q, dtype=float)
    beta1 = np.zeros(p.size) if beta1 is None else np.asarray(beta1, dtype=float)
    beta0 = np.zeros(p.size) if beta0 is None else np.asarray(beta0, dtype=float)
    counts = np.maximum(np.round(np.vstack([(1 - p) * q, p * q]) * n), 1)
    return CellStats(q_hat=q, p_hat=p, beta1_hat=beta1, beta0_hat=beta0,
                     sigma2=np.full((2, p.size), sigma2), counts=counts, n=n)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    # keep the mixture-quantile disk cache out of the home directory
    cache = tmp_path_factory.getbasetemp() / "quantile-cache"
    monkeypatch.setenv("ROBUST_MTE_CACHE_DIR", str(cache))


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
