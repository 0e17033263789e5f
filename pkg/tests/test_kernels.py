"""The compiled kernels and the numpy fallback must agree."""
import numpy as np
import pytest

from gatefusion import _kernels_py, kernels

compiled = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


def both(name, *args):
    return (getattr(kernels, name)(*args, impl=kernels._impl),
            getattr(kernels, name)(*args, impl=_kernels_py))


@compiled
@pytest.mark.parametrize("t_in,t_out", [(5, 5), (12, 3), (7, 3), (3, 7), (1, 4), (4, 1), (64, 64), (256, 64)])
def test_align_bitwise(rng, t_in, t_out):
    x = rng.standard_normal((2, t_in, 5))
    fc, fp = both("align_forward", x, t_out)
    np.testing.assert_array_equal(fc, fp)
    g = rng.standard_normal((2, t_out, 5))
    bc, bp = both("align_backward", g, t_in)
    np.testing.assert_array_equal(bc, bp)


@compiled
def test_layer_norm_agrees(rng):
    x = rng.standard_normal((3, 6, 7))
    gamma, beta = rng.standard_normal(7), rng.standard_normal(7)
    (yc, xc, ic), (yp, xp, ip) = both("layer_norm_forward", x, gamma, beta, 1e-5)
    np.testing.assert_allclose(yc, yp, rtol=0, atol=1e-13)
    np.testing.assert_allclose(ic, ip, rtol=1e-13)
    g = rng.standard_normal(x.shape)
    for a, b in zip(kernels.layer_norm_backward(g, xc, ic, gamma, impl=kernels._impl),
                    kernels.layer_norm_backward(g, xp, ip, gamma, impl=_kernels_py)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@compiled
def test_gelu_agrees(rng):
    x = rng.standard_normal((4, 9)) * 3
    fc, fp = both("gelu_forward", x)
    np.testing.assert_allclose(fc, fp, rtol=0, atol=1e-15)
    g = rng.standard_normal(x.shape)
    bc, bp = both("gelu_backward", x, g)
    np.testing.assert_allclose(bc, bp, rtol=0, atol=1e-14)


@compiled
def test_precision_at_hits_bitwise(rng):
    hits = (rng.random(300) < 0.3).astype(np.int8)
    pc, pp = both("precision_at_hits", hits)
    np.testing.assert_array_equal(np.asarray(pc), np.asarray(pp))


@compiled
@pytest.mark.parametrize("tq,tk,d", [(1, 1, 1), (5, 7, 3), (64, 256, 8), (16, 16, 16)])
def test_attention_agrees(rng, tq, tk, d):
    q, k, v = (rng.standard_normal((2, t, d)) for t in (tq, tk, tk))
    (oc, wc), (op, wp) = both("attention_forward", q, k, v)
    np.testing.assert_allclose(oc, op, rtol=0, atol=1e-12)
    np.testing.assert_allclose(wc, wp, rtol=0, atol=1e-13)
    g = rng.standard_normal(oc.shape)
    for a, b in zip(kernels.attention_backward(g, q, k, v, wc, impl=kernels._impl),
                    kernels.attention_backward(g, q, k, v, wp, impl=_kernels_py)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)


def test_attention_rows_sum_to_one(rng):
    q, k, v = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 6, 2)), rng.standard_normal((3, 6, 2))
    _, w = kernels.attention_forward(q, k, v)
    np.testing.assert_allclose(w.sum(-1), 1.0, rtol=0, atol=1e-12)


def test_backend_is_named():
    assert kernels.BACKEND in ("cython", "python")


def test_fallback_selected_by_env():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "from gatefusion import kernels; print(kernels.BACKEND)"],
                         env={"GATEFUSION_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
