import numpy as np
import pytest

from nplb import kernels
from nplb.numeric_core import RandomSource

KERNEL_NAMES = ("triplet_terms", "pairwise_distances", "nearest_same_label",
                "prelu_forward", "prelu_backward")


@pytest.fixture(params=["numba", "numpy"])
def kernel_impl(request, monkeypatch):
    """Route every kernel call through one implementation for the test."""
    impl = kernels.numba_impl if request.param == "numba" else kernels.numpy_impl
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return impl


@pytest.fixture
def rng():
    return RandomSource(12345)


@pytest.fixture
def nprng():
    return np.random.default_rng(2024)


# one line per acceptance criterion, printed at the end of the session
CRITERIA = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        CRITERIA[str(number)] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(CRITERIA[key])
