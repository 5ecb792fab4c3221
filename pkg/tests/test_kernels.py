import os
import subprocess
import sys

import numpy as np
import pytest

from lowrank_ci import _kernels
from lowrank_ci.linalg import svd


def test_python_backend_always_present():
    assert "python" in _kernels.available_backends()
    assert _kernels.BACKEND in _kernels.available_backends()


def test_compiled_preferred_when_built():
    if "compiled" in _kernels.available_backends() and not os.environ.get("LOWRANK_CI_BACKEND"):
        assert _kernels.BACKEND == "compiled"


def test_set_backend_roundtrip():
    before = _kernels.BACKEND
    previous = _kernels.set_backend("python")
    try:
        assert previous == before and _kernels.BACKEND == "python"
        assert _kernels.get_kernel() is _kernels.get_kernel("python")
    finally:
        _kernels.set_backend(before)
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")


def test_explicit_backend_argument(rng):
    a = rng.standard_normal((9, 6))
    for name in _kernels.available_backends():
        f = svd(a, backend=name)
        np.testing.assert_allclose(f.s, np.linalg.svd(a, compute_uv=False), rtol=1e-12)


def _probe(env_value):
    env = {**os.environ, "LOWRANK_CI_BACKEND": env_value}
    return subprocess.run([sys.executable, "-c", "from lowrank_ci import _kernels; print(_kernels.BACKEND)"],
                          capture_output=True, text=True, env=env)


def test_environment_forces_fallback():
    proc = _probe("python")
    assert proc.returncode == 0 and proc.stdout.strip() == "python"


def test_environment_rejects_unknown_backend():
    proc = _probe("gpu")
    assert proc.returncode != 0 and "LOWRANK_CI_BACKEND" in proc.stderr
