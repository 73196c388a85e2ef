import numpy as np
import pytest

from prism_ood import _fallback
from prism_ood.rng import Rng

try:
    from prism_ood import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

BACKENDS = [_fallback] + ([_kernels] if _kernels is not None else [])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    return request.param


def small_batch(n=16, D=3, K=2, seed=11):
    r = Rng(seed)
    X = r.normal((n, D))
    y = np.minimum((r.uniform(n) * K).astype(np.int64), K - 1)
    return X, y


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
