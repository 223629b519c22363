import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnclust.attention import (
    HeadBank, ctx_forward, first_row_batch, linear_head_forward, linear_predictor_forward, predictor_forward,
    score_matrix_forward, shaped_softmax_predictor_forward, softmax_head_forward, softmax_weights,
)
from attnclust.errors import ConfigurationError, DomainError, EmptySequenceError
from attnclust.mixtures import MixtureSpec, make_orthonormal_centroids, sample_batch
from attnclust.moments import mc_estimate
from attnclust.risk import ctx_statistics, first_row_sampler, lambda_star_degenerate, oracle_mean_factor

from conftest import unit


def test_linear_head_single_token():
    mu = unit([1, 2, 3])
    np.testing.assert_allclose(linear_head_forward(mu, mu[None], 1.0), 2 * mu[None], atol=1e-15)


def test_linear_head_orthogonal_tokens():
    mu = np.eye(4)[0]
    X = np.random.default_rng(0).standard_normal((6, 4))
    X[:, 0] = 0
    assert np.all(linear_head_forward(mu, X, 0.7) == 0)


def test_linear_head_matches_loop(rng):
    X = rng.standard_normal((7, 5))
    mu = unit(rng.standard_normal(5))
    lam, L = 0.8, 7
    ref = np.array([(2 / L) * sum(lam * (X[l] @ mu) * (X[k] @ mu) * X[k] for k in range(L)) for l in range(L)])
    np.testing.assert_allclose(linear_head_forward(mu, X, lam), ref, atol=1e-12)


def test_empty_and_nonunit():
    with pytest.raises(EmptySequenceError):
        linear_head_forward(np.eye(3)[0], np.zeros((0, 3)), 1.0)
    with pytest.raises(DomainError):
        linear_head_forward(np.ones(3), np.ones((2, 3)), 1.0)
    with pytest.raises(DomainError):
        HeadBank.linear(np.ones((2, 3)), 1.0)
    with pytest.raises(ConfigurationError):
        HeadBank.softmax(np.eye(3), 1.0)


def test_dirac_oracle_mean():
    # sigma = 0: E[T_1 | Z_1 = 0] for a single head on mu*_0 is lam (L+1)/L mu*_0
    C = make_orthonormal_centroids(5, 2)
    L = 30
    lam = lambda_star_degenerate(L)
    bank = HeadBank.linear(C[:1], lam)
    est = mc_estimate(first_row_sampler(bank, MixtureSpec.dirac(C), L, lambda x, t, b: t, first_label=0),
                      100_000, rng=3)
    target = lam * (L + 1) / L * C[0]
    assert est.within(target)
    assert oracle_mean_factor(L, 0.0, lam) == pytest.approx(lam * (L + 1) / L)


def test_predictor_k1_equals_head(rng):
    X = rng.standard_normal((5, 4))
    mu = unit(rng.standard_normal(4))
    np.testing.assert_allclose(linear_predictor_forward(HeadBank.linear(mu[None], 0.3), X),
                               linear_head_forward(mu, X, 0.3), atol=1e-14)


def test_full_basis_equals_ctx(rng):
    X = rng.standard_normal((9, 6))
    np.testing.assert_allclose(linear_predictor_forward(HeadBank.linear(np.eye(6), 0.4), X), ctx_forward(X, 0.4),
                               atol=1e-12)


def test_orthogonal_second_head_silent():
    E = np.eye(3)
    X = np.array([E[0], 2 * E[0]])
    two = linear_predictor_forward(HeadBank.linear(E[:2], 1.0), X)
    np.testing.assert_array_equal(two, linear_head_forward(E[0], X, 1.0))


@given(seed=st.integers(0, 10_000), K=st.integers(1, 4), L=st.integers(1, 12))
@settings(max_examples=50, deadline=None)
def test_rank_identity_and_sign_symmetry(seed, K, L):
    rng = np.random.default_rng(seed)
    d = 5
    H = np.linalg.qr(rng.standard_normal((d, K)))[0].T
    X = rng.standard_normal((L, d))
    lam = float(rng.uniform(0.1, 2))
    out = linear_predictor_forward(HeadBank.linear(H, lam), X)
    assert np.max(np.abs(out - score_matrix_forward(X, H.T @ H, lam))) <= 1e-10
    flipped = H.copy()
    flipped[0] *= -1
    np.testing.assert_array_equal(linear_head_forward(flipped[0], X, lam), linear_head_forward(H[0], X, lam))
    # homogeneity in lambda
    np.testing.assert_allclose(linear_head_forward(H[0], X, 2 * lam), 2 * linear_head_forward(H[0], X, lam),
                               rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(ctx_forward(X, 2 * lam), 2 * ctx_forward(X, lam), rtol=1e-13, atol=1e-13)


def test_softmax_rows_stochastic(rng):
    X = 10 * rng.standard_normal((20, 4))
    W = softmax_weights(unit(rng.standard_normal(4)), X, 50.0)
    assert np.all(W >= 0) and np.all(np.isfinite(W))
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_orthogonal_first_token_is_mean():
    C = make_orthonormal_centroids(4, 2)
    X = np.array([C[1], C[0], C[1], C[0]])
    out = softmax_head_forward(C[0], X, 2.0)
    np.testing.assert_allclose(out[0], X.mean(axis=0), atol=1e-15)


def test_softmax_small_lambda_uniform(rng):
    X = rng.standard_normal((6, 3))
    out = softmax_head_forward(unit([1, 1, 0]), X, 1e-12)
    np.testing.assert_allclose(out, np.broadcast_to(X.mean(axis=0), X.shape), atol=1e-10)


def test_softmax_large_lambda_selects_aligned():
    C = make_orthonormal_centroids(4, 2)
    X = np.array([C[0], C[1], C[0], C[1], C[0], C[1]])
    out = softmax_head_forward(C[0], X, 60.0)
    np.testing.assert_allclose(out[0], C[0], atol=1e-12)


def test_shaped_softmax():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 4))
    H = np.eye(4)[:2]
    plain = softmax_head_forward(H[0], X, 3.0) + softmax_head_forward(H[1], X, 3.0)
    np.testing.assert_allclose(shaped_softmax_predictor_forward(HeadBank(H, 3.0, 0.0, "softmax"), X), plain)
    # uniform attention with psi = 2 cancels
    out = shaped_softmax_predictor_forward(HeadBank(H, 1e-14, 2.0, "softmax"), X)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)
    bank = HeadBank.softmax(H)
    assert (bank.lam, bank.psi) == (3.0, 2.0)


def test_ctx_single_token():
    x = np.array([[1.0, 2.0, -1.0]])
    np.testing.assert_allclose(ctx_forward(x, 0.5), 2 * 0.5 * (x @ x.T) * x)


def test_first_row_batch_matches_forward(rng):
    C = make_orthonormal_centroids(5, 2)
    batch = sample_batch(MixtureSpec.gaussian(C, 0.5), 9, 4, rng)
    H = np.array([unit(rng.standard_normal(5)) for _ in range(2)])
    for bank in (HeadBank.linear(H, 0.6), HeadBank.softmax(H, 2.0, 1.5), HeadBank.incontext(0.4)):
        rows = first_row_batch(bank, batch.tokens)
        for i in range(len(batch)):
            np.testing.assert_allclose(rows[i], predictor_forward(bank, batch.tokens[i])[0], atol=1e-12)


def test_ctx_conditional_mean_short():
    # smaller version of the in-context mean check; the full one is in the acceptance suite
    d, sigma, L = 10, 0.3, 100
    lam = 1 / (1 + 2 * sigma**2)
    spec = MixtureSpec.incontext(d, sigma)

    def fn(x1, t1, batch):
        idx = np.arange(len(batch))
        return np.einsum("nd,nd->n", t1, batch.centroids[idx, batch.labels[:, 0]])

    est = mc_estimate(first_row_sampler(HeadBank.incontext(lam), spec, L, fn), 50_000, rng=2)
    target = 2 * lam / L * ((1 + (d + 2) * sigma**2) + (L - 1) * (0.5 + sigma**2))
    assert target == pytest.approx(ctx_statistics(sigma, d, L, lam).mean_factor)
    assert est.within(target)
