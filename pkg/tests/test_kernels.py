import numpy as np
import pytest

from noisesep import _kernels
from noisesep._kernels import _reference

compiled = _kernels.backends().get("cython")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def gru_inputs(rng, B=3, T=7, H=5):
    return (0.7 * rng.standard_normal((B, T, 3 * H)), 0.4 * rng.standard_normal((3 * H, H)),
            0.2 * rng.standard_normal(3 * H), rng.standard_normal((B, T, H)))


def test_backend_flag_is_known():
    assert _kernels.BACKEND in _kernels.backends()


def test_reference_gru_matches_unrolled_cell(rng):
    x, w, b, _ = gru_inputs(rng, B=2, T=4, H=3)
    hs, _ = _reference.gru_forward(x, w, b, False)
    H = 3
    sig = lambda v: 1 / (1 + np.exp(-v))
    h = np.zeros((2, H))
    for t in range(4):
        u = h @ w.T + b
        r = sig(x[:, t, :H] + u[:, :H])
        z = sig(x[:, t, H:2 * H] + u[:, H:2 * H])
        n = np.tanh(x[:, t, 2 * H:] + r * u[:, 2 * H:])
        h = (1 - z) * n + z * h
        np.testing.assert_allclose(hs[:, t], h, atol=1e-14)


def test_reverse_is_time_flip(rng):
    x, w, b, _ = gru_inputs(rng)
    fw, _ = _reference.gru_forward(np.ascontiguousarray(x[:, ::-1]), w, b, False)
    bw, _ = _reference.gru_forward(x, w, b, True)
    np.testing.assert_allclose(bw, fw[:, ::-1], atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 7, 5), (8, 2, 16)])
def test_compiled_matches_reference(rng, shape, reverse):
    x, w, b, g = gru_inputs(rng, *shape)
    hs_r, cache_r = _reference.gru_forward(x, w, b, reverse)
    hs_c, cache_c = compiled.gru_forward(x, w, b, reverse)
    np.testing.assert_allclose(hs_c, hs_r, atol=1e-13)
    for a, c in zip(cache_r, cache_c):
        np.testing.assert_allclose(c, a, atol=1e-13)
    back_r = _reference.gru_backward(g, w, hs_r, cache_r, reverse)
    back_c = compiled.gru_backward(g, w, hs_c, cache_c, reverse)
    for a, c in zip(back_r, back_c):
        np.testing.assert_allclose(c, a, atol=1e-12)


@needs_compiled
def test_compiled_sigmoid(rng):
    x = np.concatenate([rng.standard_normal(100) * 10, [-800.0, 800.0, 0.0]])
    np.testing.assert_allclose(compiled.sigmoid(x), _reference.sigmoid(x), atol=1e-15)


@needs_compiled
def test_set_backend_switches_model_path(rng, tiny_model, tiny_item):
    from noisesep.separator import separate

    prev = _kernels.set_backend("numpy")
    try:
        a = separate(tiny_model, tiny_item.mixture).speakers[0].data
        _kernels.set_backend("cython")
        b = separate(tiny_model, tiny_item.mixture).speakers[0].data
    finally:
        _kernels.set_backend(prev)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")


def test_pure_python_env_forces_fallback():
    import os
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "import noisesep._kernels as k; print(k.BACKEND)"],
                         env={**os.environ, "NOISESEP_PURE_PYTHON": "1"}, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
