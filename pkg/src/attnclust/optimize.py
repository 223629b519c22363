"""Projected gradient methods on the unit sphere.

* pgd_run: deterministic Riemannian PGD on the manifold risk, written as
  the induced map on (kappa0, kappa1);
* pgd_heads_run: deterministic PGD on the general closed-form risk;
* psgd_run: online projected SGD for K linear heads with a regularizer;
* psgd_soft_run: the same for the shaped softmax predictor, with plain
  gradient steps on psi and lambda.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._rng import as_generator
from .attention import HeadBank, PredictorKind, _tokens
from .errors import ConfigurationError, DimensionError, DomainError, StepError
from .metrics import dist_signed, dist_up_to_sign_perm
from .mixtures import MixtureKind, MixtureSpec, sample_batch
from .risk import RiskCoefficients, closed_form_risk_gaussian_general, closed_form_risk_gradient, manifold_risk_gradient

MAX_STEP = 0.1
DENSE_UNTIL = 1000
THIN_EVERY = 10


class Projection(str, enum.Enum):
    RIEMANNIAN = "riemannian"
    EUCLIDEAN = "euclidean"


class InitKind(str, enum.Enum):
    MANIFOLD = "manifold"
    SPHERE = "sphere"
    EXPLICIT = "explicit"


def _check_gamma(gamma):
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise ConfigurationError("gamma must be a finite nonnegative number")
    if gamma > MAX_STEP:
        raise ConfigurationError(f"gamma must not exceed the step cap {MAX_STEP}")


@dataclass(frozen=True)
class OptimizerConfig:
    gamma: float = 0.01
    iterations: int = 10_000
    batch_size: int = 256
    rho: float = 0.0
    projection: Projection = Projection.RIEMANNIAN
    init: InitKind = InitKind.SPHERE
    init_heads: np.ndarray | None = None
    regularizer: str = "pairwise"
    overlap: str = "linear"
    train_psi: bool = True
    train_lam: bool = True
    record_every: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "projection", Projection(self.projection))
        object.__setattr__(self, "init", InitKind(self.init))
        _check_gamma(self.gamma)
        if self.iterations < 0:
            raise ConfigurationError("iterations must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.rho < 0:
            raise ConfigurationError("rho must be nonnegative")
        if self.regularizer not in kernels.REG_FORMS:
            raise ConfigurationError(f"unknown regularizer {self.regularizer!r}")
        if self.overlap not in kernels.OVERLAP_FORMS:
            raise ConfigurationError(f"unknown overlap form {self.overlap!r}")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigurationError("record_every must be positive")
        if self.init is InitKind.EXPLICIT and self.init_heads is None:
            raise ConfigurationError("explicit init needs init_heads")


def should_record(k: int, iterations: int, record_every: int | None = None) -> bool:
    """Every iteration up to 1000 then every 10th, plus the last one."""
    if k == iterations or k == 0:
        return True
    if record_every is not None:
        return k % record_every == 0
    return k <= DENSE_UNTIL or k % THIN_EVERY == 0


@dataclass
class TrainTrace:
    """Snapshots of a run. `objective[i]` is the batch loss of the step that
    produced snapshot i (NaN for the initialization)."""

    iterations: list = field(default_factory=list)
    heads: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    distance: list = field(default_factory=list)
    signed_distance: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    diverged: bool = False

    def record(self, k, heads, truth, psi=float("nan"), lam=float("nan"), objective=float("nan")):
        self.iterations.append(int(k))
        self.heads.append(np.array(heads))
        self.psi.append(float(psi))
        self.lam.append(float(lam))
        if truth is None:
            self.distance.append(float("nan"))
            self.signed_distance.append(float("nan"))
        else:
            self.distance.append(dist_up_to_sign_perm(heads, truth))
            self.signed_distance.append(dist_signed(heads, truth))
        self.objective.append(float(objective))

    @property
    def final_heads(self):
        return self.heads[-1]

    @property
    def final_distance(self):
        return self.distance[-1]

    @property
    def final_signed_distance(self):
        return self.signed_distance[-1]

    def metrics(self) -> dict:
        return {
            "distance": np.array(self.distance),
            "signed_distance": np.array(self.signed_distance),
            "objective": np.array(self.objective),
            "psi": np.array(self.psi),
            "lambda": np.array(self.lam),
        }


# steps ------------------------------------------------------------------------

def _normalize(v):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms < 1e-300):
        raise StepError("cannot renormalize a zero or non-finite vector")
    return v / norms


def riemannian_step(mu, grad, gamma: float):
    """Move along the tangent projection of -grad, then renormalize.

    Works on a single vector or on rows of a (K, d) array.
    """
    mu = np.asarray(mu, float)
    grad = np.asarray(grad, float)
    radial = np.sum(mu * grad, axis=-1, keepdims=True)
    return _normalize(mu - gamma * (grad - radial * mu))


def euclidean_step(mu, grad, gamma: float):
    mu = np.asarray(mu, float)
    return _normalize(mu - gamma * np.asarray(grad, float))


def _step_fn(projection):
    return riemannian_step if Projection(projection) is Projection.RIEMANNIAN else euclidean_step


# initialization -------------------------------------------------------------------

def _orth_unit(rng, d, against):
    g = rng.standard_normal(d)
    for _ in range(2):  # repeated Gram-Schmidt for accuracy
        for v in against:
            g -= (g @ v) * v
    return g / np.linalg.norm(g)


def manifold_init(centroids, rng=None, K: int | None = None):
    """Heads with <mu*_j, mu_i> = 0 for j != i and <mu_i, mu_j> = 0.

    mu_0 is uniform on the sphere of span{mu*_j, j != 0}^perp, and each
    later head is uniform on the sphere orthogonal to the other centroids
    and the heads drawn before it.
    """
    rng = as_generator(rng)
    C = np.atleast_2d(np.asarray(centroids, float))
    K = len(C) if K is None else K
    d = C.shape[1]
    heads = []
    for i in range(K):
        basis = [C[j] for j in range(len(C)) if j != i] + heads
        Q = _gram_schmidt(np.array(basis).reshape(-1, d))
        if len(Q) >= d:
            raise DimensionError("dimension too small for a manifold initialization")
        heads.append(_orth_unit(rng, d, Q))
    return np.array(heads)


def _gram_schmidt(A):
    out = []
    for v in A:
        w = v.copy()
        for u in out:
            w -= (w @ u) * u
        n = np.linalg.norm(w)
        if n > 1e-12:
            out.append(w / n)
    return out


def sphere_init(K: int, d: int, rng=None):
    rng = as_generator(rng)
    return _normalize(rng.standard_normal((K, d)))


def initial_heads(config: OptimizerConfig, centroids, K: int, d: int, rng):
    if config.init is InitKind.EXPLICIT:
        H = np.atleast_2d(np.asarray(config.init_heads, float))
        if H.shape != (K, d):
            raise DimensionError(f"init_heads must have shape {(K, d)}")
        return _normalize(H)
    if config.init is InitKind.MANIFOLD:
        return manifold_init(centroids, rng, K)
    return sphere_init(K, d, rng)


# gradients ----------------------------------------------------------------------

@dataclass(frozen=True)
class PerSampleGradient:
    loss: float
    heads: np.ndarray
    lam: float | None = None
    psi: float | None = None


def per_sample_gradient(bank: HeadBank, X, rho: float = 0.0, regularizer: str = "pairwise",
                        overlap: str = "linear") -> PerSampleGradient:
    """Exact gradient of the per-sample loss on one sequence (L, d).

    Linear: |X1 - T(X)_1|^2 + rho r(X1). Softmax: the shaped loss plus
    rho r0, with derivatives in lambda and psi as well.
    """
    X = _tokens(X)[None]
    if bank.kind is PredictorKind.LINEAR:
        loss, g = kernels.linear_loss_grad(X, bank.heads, bank.lam, rho, kernels.REG_FORMS[regularizer])
        return PerSampleGradient(loss, g)
    if bank.kind is PredictorKind.SOFTMAX:
        loss, g, gl, gp = kernels.softmax_loss_grad(
            X, bank.heads, bank.lam, bank.psi, rho, kernels.OVERLAP_FORMS[overlap])
        return PerSampleGradient(loss, g, gl, gp)
    raise ConfigurationError("the in-context layer has no trainable parameters")


# deterministic PGD --------------------------------------------------------------------

@dataclass
class ReducedTrace:
    iterations: np.ndarray
    kappa: np.ndarray  # (n, 2)
    risk: np.ndarray


def reduced_pgd_map(kappa, grad, gamma):
    """Image of (kappa0, kappa1) under one Riemannian step on the manifold."""
    kappa = np.asarray(kappa, float)
    grad = np.asarray(grad, float)
    t = 1.0 - kappa**2
    return (kappa - gamma * grad * t) / np.sqrt(1.0 + gamma**2 * grad**2 * t)


def pgd_run(coeffs: RiskCoefficients, init, gamma: float = 0.01, iterations: int = 10_000,
            record_every: int | None = None) -> ReducedTrace:
    """Deterministic PGD on the manifold risk, through its action on (kappa0, kappa1)."""
    _check_gamma(gamma)
    k = np.array(init, float)
    if k.shape != (2,) or np.any(np.abs(k) > 1):
        raise DomainError("init must be a pair in [-1, 1]^2")
    risk = lambda k: coeffs.A * (k[0] ** 4 + k[1] ** 4) + coeffs.B * (k[0] ** 2 + k[1] ** 2) \
        + coeffs.C * k[0] ** 2 * k[1] ** 2 + coeffs.D
    its, ks, rs = [0], [k.copy()], [risk(k)]
    for it in range(1, iterations + 1):
        g = np.array(manifold_risk_gradient(k[0], k[1], coeffs))
        k = reduced_pgd_map(k, g, gamma)
        if should_record(it, iterations, record_every):
            its.append(it)
            ks.append(k.copy())
            rs.append(risk(k))
    return ReducedTrace(np.array(its), np.array(ks), np.array(rs))


def pgd_heads_run(heads, centroids, sigma: float, L: int, lam: float, gamma: float = 0.01,
                  iterations: int = 1000, projection=Projection.RIEMANNIAN,
                  record_every: int | None = None) -> TrainTrace:
    """Deterministic PGD on the general closed-form risk for arbitrary heads."""
    _check_gamma(gamma)
    H = _normalize(np.atleast_2d(np.asarray(heads, float)))
    C = np.atleast_2d(np.asarray(centroids, float))
    truth = C if len(C) == len(H) else None
    step = _step_fn(projection)
    trace = TrainTrace()
    trace.record(0, H, truth, lam=lam, objective=closed_form_risk_gaussian_general(H, C, sigma, L, lam))
    for it in range(1, iterations + 1):
        H = step(H, closed_form_risk_gradient(H, C, sigma, L, lam), gamma)
        if should_record(it, iterations, record_every):
            trace.record(it, H, truth, lam=lam, objective=closed_form_risk_gaussian_general(H, C, sigma, L, lam))
    return trace


# stochastic PGD ----------------------------------------------------------------------

def _check_fixed_spec(spec: MixtureSpec):
    if spec.kind is MixtureKind.INCONTEXT:
        raise ConfigurationError("training needs a mixture with fixed centroids")


def psgd_run(spec: MixtureSpec, L: int, lam: float, config: OptimizerConfig, rng=None,
             n_heads: int | None = None) -> TrainTrace:
    """Online projected SGD on K linear heads with fresh batches every step.

    The initialization is drawn first from `rng`, then one batch of
    `batch_size` sequences per iteration. A non-finite step stops the run
    and sets `diverged`.
    """
    _check_fixed_spec(spec)
    rng = as_generator(rng)
    C = spec.centroids
    K = len(C) if n_heads is None else n_heads
    truth = C if K == len(C) else None
    H = initial_heads(config, C, K, spec.d, rng)
    step = _step_fn(config.projection)
    form = kernels.REG_FORMS[config.regularizer]
    trace = TrainTrace()
    trace.record(0, H, truth, lam=lam)
    n = config.iterations
    for it in range(1, n + 1):
        X = sample_batch(spec, L, config.batch_size, rng).tokens
        loss, g = kernels.linear_loss_grad(X, H, lam, config.rho, form)
        try:
            H = step(H, g, config.gamma)
        except StepError:
            trace.diverged = True
            break
        if not math.isfinite(loss):
            trace.diverged = True
        if should_record(it, n, config.record_every) or trace.diverged:
            trace.record(it, H, truth, lam=lam, objective=loss)
        if trace.diverged:
            break
    return trace


def psgd_soft_run(spec: MixtureSpec, L: int, config: OptimizerConfig, rng=None,
                  lam: float = 3.0, psi: float = 2.0) -> TrainTrace:
    """Projected SGD for the shaped two-head softmax predictor.

    Heads move on the sphere; psi and lambda take plain gradient steps
    when their train flags are set. `config.rho` weights r0 and
    `config.overlap` picks its head-overlap term: "linear" is <mu0,mu1>,
    "squared" is <mu0,mu1>^2. The linear term rewards antiparallel heads,
    which is where PSGD ends up with it at rho = 0.5.
    """
    _check_fixed_spec(spec)
    if len(spec.centroids) != 2:
        raise ConfigurationError("the softmax predictor has exactly two heads")
    rng = as_generator(rng)
    C = spec.centroids
    H = initial_heads(config, C, 2, spec.d, rng)
    step = _step_fn(config.projection)
    overlap = kernels.OVERLAP_FORMS[config.overlap]
    trace = TrainTrace()
    trace.record(0, H, C, psi=psi, lam=lam)
    n = config.iterations
    for it in range(1, n + 1):
        X = sample_batch(spec, L, config.batch_size, rng).tokens
        loss, g, g_lam, g_psi = kernels.softmax_loss_grad(X, H, lam, psi, config.rho, overlap)
        try:
            H = step(H, g, config.gamma)
        except StepError:
            trace.diverged = True
            break
        if config.train_lam:
            lam = lam - config.gamma * g_lam
        if config.train_psi:
            psi = psi - config.gamma * g_psi
        if not (math.isfinite(loss) and math.isfinite(lam) and math.isfinite(psi)):
            trace.diverged = True
        if should_record(it, n, config.record_every) or trace.diverged:
            trace.record(it, H, C, psi=psi, lam=lam, objective=loss)
        if trace.diverged:
            break
    return trace
