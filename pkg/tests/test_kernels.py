import os
import subprocess
import sys

import numpy as np
import pytest

from attnclust import kernels
from attnclust._kernels_py import linear_loss_grad as py_linear, softmax_loss_grad as py_softmax
from attnclust.attention import HeadBank, predictor_forward
from attnclust.optimize import per_sample_gradient, sphere_init
from attnclust.risk import regularizer_linear, regularizer_softmax

needs_compiled = pytest.mark.skipif(kernels.compiled is None, reason="compiled extension not built")


def _rel(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def fd_linear(X, H, lam, rho, form, h=1e-5):
    g = np.zeros_like(H)
    for idx in np.ndindex(H.shape):
        E = np.zeros_like(H)
        E[idx] = h
        g[idx] = (py_linear(X, H + E, lam, rho, form)[0] - py_linear(X, H - E, lam, rho, form)[0]) / (2 * h)
    return g


def fd_softmax(X, M, lam, psi, rho, overlap, h=1e-5):
    f = lambda M_, l_, p_: py_softmax(X, M_, l_, p_, rho, overlap)[0]
    g = np.zeros_like(M)
    for idx in np.ndindex(M.shape):
        E = np.zeros_like(M)
        E[idx] = h
        g[idx] = (f(M + E, lam, psi) - f(M - E, lam, psi)) / (2 * h)
    gl = (f(M, lam + h, psi) - f(M, lam - h, psi)) / (2 * h)
    gp = (f(M, lam, psi + h) - f(M, lam, psi - h)) / (2 * h)
    return g, gl, gp


@pytest.mark.parametrize("K,form,rho", [(2, 0, 0.0), (2, 0, 0.7), (3, 0, 0.5), (3, 1, 0.5), (1, 0, 0.0)])
def test_linear_gradient_fd(K, form, rho):
    rng = np.random.default_rng(K * 10 + form)
    for _ in range(5):
        X = rng.standard_normal((3, 8, 5)) * 0.7
        H = sphere_init(K, 5, rng)
        _, g = py_linear(X, H, 0.6, rho, form)
        assert _rel(g, fd_linear(X, H, 0.6, rho, form)) <= 1e-5


@pytest.mark.parametrize("overlap", [0, 1])
def test_softmax_gradient_fd(overlap):
    rng = np.random.default_rng(overlap)
    for _ in range(5):
        X = rng.standard_normal((3, 8, 5)) * 0.7
        M = sphere_init(2, 5, rng)
        lam, psi = rng.uniform(0.5, 4), rng.uniform(0, 3)
        _, g, gl, gp = py_softmax(X, M, lam, psi, 0.5, overlap)
        fg, fgl, fgp = fd_softmax(X, M, lam, psi, 0.5, overlap)
        assert _rel(np.concatenate([g.ravel(), [gl, gp]]), np.concatenate([fg.ravel(), [fgl, fgp]])) <= 1e-4


def test_linear_loss_matches_forward():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((4, 6, 5))
    H = sphere_init(2, 5, rng)
    bank = HeadBank.linear(H, 0.8)
    ref = np.mean([np.sum((x[0] - predictor_forward(bank, x)[0]) ** 2) + 0.3 * regularizer_linear(H, x[0])
                   for x in X])
    assert py_linear(X, H, 0.8, 0.3, 0)[0] == pytest.approx(ref, rel=1e-12)


def test_softmax_loss_matches_forward():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((4, 6, 5))
    M = sphere_init(2, 5, rng)
    bank = HeadBank.softmax(M, 2.5, 1.5)
    for overlap, name in ((0, "linear"), (1, "squared")):
        ref = np.mean([np.sum((x[0] - predictor_forward(bank, x)[0]) ** 2)
                       + 0.5 * regularizer_softmax(M[0], M[1], x[0], name) for x in X])
        assert py_softmax(X, M, 2.5, 1.5, 0.5, overlap)[0] == pytest.approx(ref, rel=1e-12)


def test_zero_gradient_when_orthogonal():
    E = np.eye(5)
    rng = np.random.default_rng(5)
    X = rng.standard_normal((7, 5))
    X[:, :2] = 0
    g = per_sample_gradient(HeadBank.linear(E[:2], 0.6), X, rho=0.0)
    assert np.all(g.heads == 0)


def test_regularizer_gradient_vanishes_with_orthogonal_head():
    # mu0 orthogonal to X1: the penalty adds nothing to either head's gradient
    E = np.eye(5)
    rng = np.random.default_rng(6)
    X = rng.standard_normal((7, 5))
    X[0, 0] = 0.0
    H = np.stack([E[0], (E[0] + E[1]) / np.sqrt(2)])
    g0 = per_sample_gradient(HeadBank.linear(H, 0.6), X, rho=0.0).heads
    g1 = per_sample_gradient(HeadBank.linear(H, 0.6), X, rho=2.0).heads
    np.testing.assert_allclose(g1, g0, atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("K,form,rho,d", [(2, 0, 0.0, 5), (2, 0, 0.2, 5), (3, 0, 0.2, 6), (3, 1, 0.2, 6),
                                          (2, 0, 0.2, 40)])
def test_backend_parity_linear(K, form, rho, d):
    rng = np.random.default_rng(7)
    X = rng.standard_normal((16, 30, d))
    H = sphere_init(K, d, rng)
    a = kernels.compiled.linear_loss_grad(X, H, 0.6, rho, form)
    b = py_linear(X, H, 0.6, rho, form)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("overlap", [0, 1])
def test_backend_parity_softmax(overlap):
    rng = np.random.default_rng(8)
    X = rng.standard_normal((16, 30, 5))
    M = sphere_init(2, 5, rng)
    a = kernels.compiled.softmax_loss_grad(X, M, 3.0, 2.0, 0.5, overlap)
    b = py_softmax(X, M, 3.0, 2.0, 0.5, overlap)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    assert a[2] == pytest.approx(b[2], rel=1e-10, abs=1e-12)
    assert a[3] == pytest.approx(b[3], rel=1e-10, abs=1e-12)


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("compiled", "python")
    assert (kernels.BACKEND == "compiled") == (kernels.compiled is not None)


def test_pure_env_selects_python():
    env = dict(os.environ, ATTNCLUST_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from attnclust import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
