import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from lowrank_ci import _kernels

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", autouse=True)
def _single_blas_thread():
    with threadpool_limits(1):
        yield


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    previous = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def acceptance_log():
    def log(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
