import os
import subprocess
import sys

import numpy as np
import pytest

from ealstm import _pykernels, kernels

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                  reason="compiled extension not built")


def _case(rng, T, B, H, G):
    zx = rng.normal(0, 1.5, size=(T, B, G * H))
    U = rng.normal(0, 0.5, size=(G * H, H))
    istat = rng.uniform(0.05, 0.95, size=(B, H)) if G == 3 else None
    return zx, U, istat


@needs_cython
@pytest.mark.parametrize("G", [3, 4])
@pytest.mark.parametrize("T,B,H", [(1, 1, 1), (7, 3, 5), (20, 16, 8), (4, 1, 33)])
def test_backends_agree(G, T, B, H):
    ck = kernels.get_backend("cython")
    rng = np.random.default_rng(T * 100 + B * 10 + H + G)
    zx, U, istat = _case(rng, T, B, H, G)
    fp = _pykernels.recurrent_forward(zx, U, istat)
    fc = ck.recurrent_forward(zx, U, istat)
    for a, b in zip(fp, fc):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    dh = rng.normal(size=(B, H))
    bp = _pykernels.recurrent_backward(*fp, U, dh, istat)
    bc = ck.recurrent_backward(*fc, U, dh, istat)
    np.testing.assert_allclose(bp[0], bc[0], rtol=1e-11, atol=1e-12)
    if G == 3:
        np.testing.assert_allclose(bp[1], bc[1], rtol=1e-11, atol=1e-12)
    else:
        assert bp[1] is None and bc[1] is None


@needs_cython
def test_cython_saturated_inputs_stay_finite():
    ck = kernels.get_backend("cython")
    zx = np.full((3, 2, 8), 1e4)
    zx[1] = -1e4
    U = np.zeros((8, 2))
    g, c, h = ck.recurrent_forward(zx, U)
    gp, cp, hp = _pykernels.recurrent_forward(zx, U)
    assert np.all(np.isfinite(h))
    np.testing.assert_allclose(h, hp, atol=1e-15)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_empty_sequence(backend):
    k = kernels.get_backend(backend)
    g, c, h = k.recurrent_forward(np.zeros((0, 2, 12)), np.zeros((12, 3)))
    assert g.shape == (0, 2, 12) and h.shape == (1, 2, 3)
    assert np.all(h == 0)


def test_unknown_backend_rejected():
    with pytest.raises(ImportError, match="unavailable"):
        kernels.get_backend("fortran")


def test_env_var_forces_python_fallback():
    code = "import ealstm.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, EALSTM_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
