import sys

import numpy as np
import pytest

from lbguard.sizedist import Bimodal, BoundedPareto, Deterministic, Exponential, Hyperexponential


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ALL_DISTS = {
    "deterministic": Deterministic(1.0),
    "bimodal": Bimodal(1.0, 1000.0, 0.9995),
    "exponential": Exponential(1.0),
    "h2": Hyperexponential.balanced(1.5, 444.0),
    "bp": BoundedPareto(1.5, 1.0, 1e6),
}


@pytest.fixture(params=sorted(ALL_DISTS))
def any_dist(request):
    return ALL_DISTS[request.param]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
