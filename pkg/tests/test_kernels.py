import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hss import kernels
from hss.kernels import _numba, _numpy

from oracles import brute_lcs, finite_difference, rel_error, scalar_gru_step


def gru_case(seed, b=3, d_in=4, d=5):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(size=(b, d_in)),
        rng.normal(size=(b, d)),
        rng.normal(scale=0.5, size=(3 * d, d_in)),
        rng.normal(scale=0.5, size=(3 * d, d)),
        rng.normal(scale=0.5, size=3 * d),
        np.array([1.0, 0.0, 1.0])[:b],
    )


def test_backend_flag_selects_numba_by_default():
    assert kernels.BACKEND in ("numba", "numpy")
    assert kernels.gru_forward in (_numba.gru_forward, _numpy.gru_forward)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_scalar_oracle(seed):
    x, h, wx, wh, b, mask = gru_case(seed)
    for impl in (_numpy, _numba):
        h_new = impl.gru_forward(x, h, wx, wh, b, mask)[0]
        for row in range(x.shape[0]):
            want = scalar_gru_step(x[row].tolist(), h[row].tolist(), wx.tolist(), wh.tolist(), b.tolist())
            if mask[row] == 0:
                want = h[row]
            np.testing.assert_allclose(h_new[row], want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    x, h, wx, wh, b, mask = gru_case(seed)
    fa = _numpy.gru_forward(x, h, wx, wh, b, mask)
    fb = _numba.gru_forward(x, h, wx, wh, b, mask)
    for a, c in zip(fa, fb):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)
    dh_new = np.random.default_rng(seed + 50).normal(size=h.shape)
    ga = _numpy.gru_backward(dh_new, x, h, wx, wh, *fa[1:], mask)
    gb = _numba.gru_backward(dh_new, x, h, wx, wh, *fb[1:], mask)
    for a, c in zip(ga, gb):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)


@pytest.mark.parametrize("impl", [_numpy, _numba], ids=["numpy", "numba"])
def test_backward_matches_finite_differences(impl):
    x, h, wx, wh, b, mask = gru_case(11)
    probe = np.random.default_rng(3).normal(size=h.shape)

    def loss():
        return float(np.sum(impl.gru_forward(x, h, wx, wh, b, mask)[0] * probe))

    h_new, r, z, g = impl.gru_forward(x, h, wx, wh, b, mask)
    analytic = impl.gru_backward(probe, x, h, wx, wh, r, z, g, mask)
    numeric = finite_difference(loss, [x, h, wx, wh, b])
    for a, n in zip(analytic, numeric):
        assert rel_error(a, n) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_lcs_matches_enumeration(a, b):
    want = brute_lcs(a, b)
    assert _numpy.lcs_length(a, b) == want
    assert _numba.lcs_length(a, b) == want


def test_env_flag_forces_numpy_fallback():
    env = dict(os.environ, HSS_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "import hss.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
