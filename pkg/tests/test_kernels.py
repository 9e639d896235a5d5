import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igmcmc import _kernels_py, kernels
from igmcmc.airy import AiryModel, _off2, sample_diagonals

try:
    from igmcmc import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

needs_ext = pytest.mark.skipif(_compiled is None, reason="compiled kernels not built")


def _batch(seed, K=40, B=16):
    m = AiryModel.from_n(K ** 3 / 1000)
    m = AiryModel(m.n_parameter, 2.0, m.grid_step, K)
    return m, sample_diagonals(m, B, np.random.default_rng(seed)), _off2(m)


def _dense_top(D, off2, p):
    o = np.sqrt(off2)
    return np.array([np.sort(np.linalg.eigvalsh(np.diag(d) + np.diag(o, 1) + np.diag(o, -1)))[::-1][:p]
                     for d in D])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_python_kernels_match_dense(seed):
    m, D, off2 = _batch(seed)
    top = _dense_top(D, off2, 3)
    assert np.allclose(_kernels_py.top_eigvals(D, off2, 3), top, atol=1e-9)
    t = float(np.median(top[:, 1]))
    assert np.array_equal(_kernels_py.sturm_count(D, off2, t), (top > t).sum(axis=1))


@needs_ext
@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-20, 5))
def test_backends_agree(seed, t):
    m, D, off2 = _batch(seed)
    assert np.array_equal(_compiled.sturm_count(D, off2, t), _kernels_py.sturm_count(D, off2, t))
    assert np.allclose(_compiled.top_eigvals(D, off2, 4), _kernels_py.top_eigvals(D, off2, 4), atol=1e-10)
    a1, c1 = _compiled.count_in_window(D, off2, t - 1, t)
    a2, c2 = _kernels_py.count_in_window(D, off2, t - 1, t)
    assert np.array_equal(a1, a2)
    assert np.array_equal(c1[a1 > 0], c2[a2 > 0])


def test_kernel_input_validation():
    D = np.zeros((2, 5))
    with pytest.raises(ValueError):
        _kernels_py.sturm_count(D, np.ones(3), 0.0)
    with pytest.raises(ValueError):
        _kernels_py.top_eigvals(D, np.ones(4), 6)


def test_env_var_forces_python_backend():
    code = "import igmcmc.kernels as k; print(k.BACKEND)"
    env = {**os.environ, "IGMCMC_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")
