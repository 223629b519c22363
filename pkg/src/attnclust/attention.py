"""Forward passes of the attention predictors.

Linear heads use scores lambda <X_l, mu><X_k, mu> with a 2/L
normalization. Softmax heads normalize the same scores row-wise with a
softmax of temperature lambda and carry no 2/L factor. The in-context
layer has no parameters besides lambda: its score matrix is the identity.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError, EmptySequenceError

HEAD_TOL = 1e-9


class PredictorKind(str, enum.Enum):
    LINEAR = "linear"
    SOFTMAX = "softmax"
    INCONTEXT = "incontext"


@dataclass(frozen=True)
class HeadBank:
    """Head directions (K, d) with temperature `lam` and shape offset `psi`.

    `psi` is only read by the softmax predictor. An in-context bank has no
    heads.
    """

    heads: np.ndarray | None
    lam: float
    psi: float = 0.0
    kind: PredictorKind = PredictorKind.LINEAR

    def __post_init__(self):
        kind = PredictorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")
        if kind is PredictorKind.INCONTEXT:
            object.__setattr__(self, "heads", None)
            return
        h = np.atleast_2d(np.array(self.heads, dtype=float))
        if np.max(np.abs(np.linalg.norm(h, axis=1) - 1.0)) > HEAD_TOL:
            raise DomainError("heads must have unit norm")
        if kind is PredictorKind.SOFTMAX and len(h) != 2:
            raise ConfigurationError("the shaped softmax predictor has exactly two heads")
        h.setflags(write=False)
        object.__setattr__(self, "heads", h)

    @classmethod
    def linear(cls, heads, lam):
        return cls(heads, lam, 0.0, PredictorKind.LINEAR)

    @classmethod
    def softmax(cls, heads, lam=3.0, psi=2.0):
        return cls(heads, lam, psi, PredictorKind.SOFTMAX)

    @classmethod
    def incontext(cls, lam):
        return cls(None, lam, 0.0, PredictorKind.INCONTEXT)

    @property
    def K(self) -> int:
        return 0 if self.heads is None else len(self.heads)

    def with_params(self, heads=None, lam=None, psi=None) -> "HeadBank":
        return replace(
            self,
            heads=self.heads if heads is None else heads,
            lam=self.lam if lam is None else lam,
            psi=self.psi if psi is None else psi,
        )


def _tokens(X) -> np.ndarray:
    X = np.asarray(getattr(X, "tokens", X), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySequenceError("expected a nonempty (L, d) sequence")
    return X


def _unit(mu):
    mu = np.asarray(mu, dtype=float)
    if abs(np.linalg.norm(mu) - 1.0) > HEAD_TOL:
        raise DomainError("head must have unit norm")
    return mu


def linear_head_forward(mu, X, lam: float) -> np.ndarray:
    """Rows (2/L) sum_k lam <X_l,mu><X_k,mu> X_k."""
    X = _tokens(X)
    # elementwise reductions keep the output exactly even in mu; BLAS
    # kernels may round differently depending on memory layout
    s = (X * _unit(mu)).sum(axis=1)
    return (2.0 * lam / len(X)) * s[:, None] * (s[:, None] * X).sum(axis=0)[None, :]


def score_matrix_forward(X, P, lam: float) -> np.ndarray:
    """Rows (2 lam/L) sum_k (X_l^T P X_k) X_k for a symmetric score matrix P."""
    X = _tokens(X)
    return (2.0 * lam / len(X)) * (X @ P @ X.T) @ X


def linear_predictor_forward(bank: HeadBank, X) -> np.ndarray:
    """Sum of linear heads."""
    X = _tokens(X)
    S = X @ bank.heads.T  # (L, K)
    return (2.0 * bank.lam / len(X)) * S @ (S.T @ X)


def softmax_weights(mu, X, lam: float) -> np.ndarray:
    """Row-stochastic (L, L) attention matrix softmax_lam(<X_l,mu> <X_k,mu>)."""
    X = _tokens(X)
    s = X @ _unit(mu)
    z = lam * np.outer(s, s)
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w


def softmax_head_forward(mu, X, lam: float) -> np.ndarray:
    X = _tokens(X)
    return softmax_weights(mu, X, lam) @ X


def shaped_softmax_predictor_forward(bank: HeadBank, X) -> np.ndarray:
    """H_soft(mu0) + H_soft(mu1) - (psi/L) sum_k X_k on every row."""
    if bank.K != 2:
        raise ConfigurationError("the shaped softmax predictor has exactly two heads")
    X = _tokens(X)
    out = softmax_head_forward(bank.heads[0], X, bank.lam) + softmax_head_forward(bank.heads[1], X, bank.lam)
    return out - bank.psi * X.mean(axis=0)


def ctx_forward(X, lam: float) -> np.ndarray:
    """Parameter-free layer: rows (2 lam/L) sum_k <X_l,X_k> X_k."""
    X = _tokens(X)
    return (2.0 * lam / len(X)) * (X @ X.T) @ X


def predictor_forward(bank: HeadBank, X) -> np.ndarray:
    if bank.kind is PredictorKind.LINEAR:
        return linear_predictor_forward(bank, X)
    if bank.kind is PredictorKind.SOFTMAX:
        return shaped_softmax_predictor_forward(bank, X)
    return ctx_forward(X, bank.lam)


def first_row_batch(bank: HeadBank, tokens: np.ndarray) -> np.ndarray:
    """T(X)_1 for a stack of sequences (n, L, d) -> (n, d)."""
    tokens = np.asarray(tokens, dtype=float)
    n, L, _ = tokens.shape
    x1 = tokens[:, 0, :]
    if bank.kind is PredictorKind.INCONTEXT:
        w = np.einsum("nd,nld->nl", x1, tokens)
        return (2.0 * bank.lam / L) * np.einsum("nl,nld->nd", w, tokens)
    S = tokens @ bank.heads.T  # (n, L, K)
    if bank.kind is PredictorKind.LINEAR:
        w = np.einsum("nk,nlk->nl", S[:, 0, :], S)
        return (2.0 * bank.lam / L) * np.einsum("nl,nld->nd", w, tokens)
    z = bank.lam * S[:, 0, None, :] * S  # (n, L, K)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    out = np.einsum("nlk,nld->nd", p, tokens)
    return out - bank.psi * tokens.mean(axis=1)
