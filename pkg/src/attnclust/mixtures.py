"""Mixture models for token sequences.

Three generative models are supported: a balanced Dirac mixture on
orthonormal centroids, the same mixture blurred by isotropic Gaussian
noise, and an in-context model where each sequence draws its own pair of
orthogonal centroids.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import as_generator
from .errors import DimensionError, DomainError, EmptySequenceError

UNIT_TOL = 1e-12


class MixtureKind(str, enum.Enum):
    DIRAC = "dirac"
    GAUSSIAN = "gaussian"
    INCONTEXT = "incontext"


def _check_orthonormal(centroids: np.ndarray, tol: float = UNIT_TOL) -> None:
    gram = centroids @ centroids.T
    if np.max(np.abs(gram - np.eye(len(centroids)))) > tol:
        raise DomainError("centroids must be orthonormal")


@dataclass(frozen=True)
class MixtureSpec:
    """Balanced mixture with K components.

    For ``kind=INCONTEXT`` no centroids are stored; ``dim`` gives the
    ambient dimension and two centroids are drawn per sequence.
    """

    kind: MixtureKind
    sigma: float = 0.0
    centroids: np.ndarray | None = None
    dim: int | None = None

    def __post_init__(self):
        kind = MixtureKind(self.kind)
        object.__setattr__(self, "kind", kind)
        sigma = float(self.sigma)
        if sigma < 0 or not math.isfinite(sigma):
            raise DomainError("sigma must be a finite nonnegative number")
        if kind is MixtureKind.DIRAC and sigma != 0.0:
            raise DomainError("a Dirac mixture has sigma = 0")
        object.__setattr__(self, "sigma", sigma)
        if kind is MixtureKind.INCONTEXT:
            if self.centroids is not None:
                raise DomainError("in-context mixtures draw their centroids per sequence")
            if self.dim is None or self.dim < 2:
                raise DimensionError("in-context mixtures need dim >= 2")
            return
        if self.centroids is None:
            raise DomainError("fixed-centroid mixtures need centroids")
        c = np.array(self.centroids, dtype=float, copy=True)
        if c.ndim != 2 or c.shape[0] < 1:
            raise DimensionError("centroids must be a (K, d) array")
        if c.shape[0] > c.shape[1]:
            raise DimensionError("K must not exceed d")
        norms = np.linalg.norm(c, axis=1)
        if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
            raise DomainError("every centroid must have unit norm")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "dim", c.shape[1])

    @classmethod
    def dirac(cls, centroids) -> "MixtureSpec":
        return cls(MixtureKind.DIRAC, 0.0, centroids)

    @classmethod
    def gaussian(cls, centroids, sigma: float) -> "MixtureSpec":
        return cls(MixtureKind.GAUSSIAN, sigma, centroids)

    @classmethod
    def incontext(cls, d: int, sigma: float) -> "MixtureSpec":
        return cls(MixtureKind.INCONTEXT, sigma, None, d)

    @property
    def d(self) -> int:
        return int(self.dim)

    @property
    def K(self) -> int:
        return 2 if self.kind is MixtureKind.INCONTEXT else len(self.centroids)


@dataclass
class TokenSequence:
    """One sequence: tokens (L, d), labels (L,) and the centroids that produced it."""

    tokens: np.ndarray
    labels: np.ndarray
    centroids_used: np.ndarray

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise DimensionError("row count must equal label count")

    @property
    def L(self) -> int:
        return self.tokens.shape[0]


@dataclass
class TokenBatch:
    """A stack of n sequences: tokens (n, L, d), labels (n, L), centroids (n, K, d)."""

    tokens: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray = field(repr=False)

    def __len__(self):
        return self.tokens.shape[0]

    def sequence(self, i: int) -> TokenSequence:
        return TokenSequence(self.tokens[i], self.labels[i], np.asarray(self.centroids[i]))


def basis_centroids(d: int, indices, signs=None) -> np.ndarray:
    """Signed canonical basis vectors e_i, one per entry of `indices`."""
    indices = list(indices)
    signs = [1.0] * len(indices) if signs is None else list(signs)
    if max(indices) >= d or min(indices) < 0:
        raise DimensionError("basis index out of range")
    c = np.zeros((len(indices), d))
    for row, (i, s) in enumerate(zip(indices, signs)):
        c[row, i] = s
    return c


def make_orthonormal_centroids(d: int, K: int, rng=None, mode: str = "canonical") -> np.ndarray:
    """K orthonormal centroids in R^d.

    ``canonical`` places them on signed basis vectors: for K=2 this is
    (e_d, -e_1); otherwise K basis vectors evenly spread over the
    coordinates (for d=6, K=3: e_1, e_4, e_6). ``random`` orthonormalizes
    Gaussian draws with one Gram-Schmidt pass.
    """
    if K < 1:
        raise DimensionError("K must be positive")
    if K > d:
        raise DimensionError(f"cannot place {K} orthonormal centroids in dimension {d}")
    if mode == "canonical":
        if K == 2:
            return basis_centroids(d, [d - 1, 0], [1.0, -1.0])
        if K == 1:
            return basis_centroids(d, [d - 1])
        idx = [int(math.floor((d - 1) * i / (K - 1) + 0.5)) for i in range(K)]
        return basis_centroids(d, idx)
    if mode != "random":
        raise ValueError(f"unknown mode {mode!r}")
    g = as_generator(rng).standard_normal((K, d))
    out = np.empty_like(g)
    for i in range(K):
        v = g[i]
        for j in range(i):
            v = v - (out[j] @ v) * out[j]
        out[i] = v / np.linalg.norm(v)
    return out


def _draw_tokens(rng, centroids, sigma, n, L, first_label=None):
    # centroids: (K, d) shared, or (n, K, d) per sequence
    K = centroids.shape[-2]
    labels = rng.integers(0, K, size=(n, L))
    if first_label is not None:
        labels[:, 0] = first_label
    if centroids.ndim == 2:
        means = np.take(centroids, labels, axis=0)
    else:
        means = np.take_along_axis(centroids, labels[:, :, None], axis=1)
    if sigma > 0:
        tokens = rng.standard_normal(means.shape)
        tokens *= sigma
        tokens += means
        return tokens, labels
    return means, labels


def sample_batch(spec: MixtureSpec, L: int, n: int, rng=None, first_label: int | None = None) -> TokenBatch:
    """Draw n independent sequences of length L.

    `first_label` pins the latent label of the first token, which is what
    conditional statistics given Z_1 = c need.
    """
    if L < 1:
        raise EmptySequenceError("sequence length must be positive")
    rng = as_generator(rng)
    if spec.kind is MixtureKind.INCONTEXT:
        cents = draw_incontext_centroids(spec.d, n, rng)
        tokens, labels = _draw_tokens(rng, cents, spec.sigma, n, L, first_label)
        return TokenBatch(tokens, labels, cents)
    tokens, labels = _draw_tokens(rng, spec.centroids, spec.sigma, n, L, first_label)
    cents = np.broadcast_to(spec.centroids, (n,) + spec.centroids.shape)
    return TokenBatch(tokens, labels, cents)


def sample_sequence(spec: MixtureSpec, L: int, rng=None) -> TokenSequence:
    """One sequence from a fixed-centroid mixture."""
    if spec.kind is MixtureKind.INCONTEXT:
        raise DomainError("use sample_incontext_sequence for in-context mixtures")
    return sample_batch(spec, L, 1, rng).sequence(0)


def draw_incontext_centroids(d: int, n: int, rng=None) -> np.ndarray:
    """n pairs (mu0, mu1): mu0 uniform on the sphere, mu1 uniform on the sphere in mu0's complement."""
    if d < 2:
        raise DimensionError("in-context centroids need d >= 2")
    rng = as_generator(rng)
    g = rng.standard_normal((n, 2, d))
    m0 = g[:, 0] / np.linalg.norm(g[:, 0], axis=1, keepdims=True)
    m1 = g[:, 1] - np.sum(g[:, 1] * m0, axis=1, keepdims=True) * m0
    m1 /= np.linalg.norm(m1, axis=1, keepdims=True)
    # second pass cleans residual overlap left by rounding
    m1 -= np.sum(m1 * m0, axis=1, keepdims=True) * m0
    m1 /= np.linalg.norm(m1, axis=1, keepdims=True)
    return np.stack([m0, m1], axis=1)


def sample_incontext_sequence(d: int, sigma: float, L: int, rng=None) -> TokenSequence:
    """One sequence with its own freshly drawn orthogonal centroid pair."""
    if d < 2:
        raise DimensionError("in-context sequences need d >= 2")
    return sample_batch(MixtureSpec.incontext(d, sigma), L, 1, rng).sequence(0)


def interference(sigma: float) -> float:
    """P(N(0, sigma^2) > sqrt(2)/2): overlap between two orthonormal modes."""
    sigma = float(sigma)
    if sigma < 0 or math.isnan(sigma):
        raise DomainError("sigma must be nonnegative")
    if sigma == 0.0:
        return 0.0
    return 0.5 * math.erfc(1.0 / (2.0 * sigma))
