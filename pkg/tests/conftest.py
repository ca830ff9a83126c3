import numpy as np
import pytest

from fqpath.hvsm import synthesize_kernel
from fqpath.scoring import ScoringParams

CRITERIA = range(1, 10)
# criterion number -> list of (check, passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record(number, check, passed, detail):
    line = f"criterion {number} [{check}]: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_RESULTS.setdefault(number, []).append((check, bool(passed), detail))


@pytest.fixture(scope="session")
def kernel():
    return synthesize_kernel()


@pytest.fixture(scope="session")
def params():
    return ScoringParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in CRITERIA:
        checks = ACCEPTANCE_RESULTS.get(number)
        if not checks:
            terminalreporter.write_line(f"criterion {number}: FAIL (not run)")
            continue
        passed = all(ok for _, ok, _ in checks)
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAILED'}, {info}" for name, ok, info in checks)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
