"""Risk functionals for the attention predictors.

The population risk is E|X_1 - T(X)_1|^2. It is available as

* a Monte-Carlo estimate for any predictor and mixture,
* an exact enumeration over label patterns for the Dirac mixture,
* a closed-form quartic in the alignment coordinates (Dirac),
* a closed form on the manifold {<mu*_1,mu0> = <mu*_0,mu1> = <mu0,mu1> = 0}
  with constants A, B, C, D (Gaussian),
* a general closed form assembled from the moment polynomials p0..p3.

The last one is valid for any number of heads and orthonormal centroids
and is the reference that the other closed forms are checked against.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .attention import HeadBank, first_row_batch
from .errors import ConfigurationError, DomainError
from .mixtures import MixtureSpec, sample_batch
from .moments import MCEstimate, mc_estimate


# coordinates ----------------------------------------------------------------

@dataclass(frozen=True)
class ReparamCoords:
    kappa0: float
    kappa1: float
    eta0: float
    eta1: float
    xi: float = 0.0

    def as_tuple(self):
        return (self.kappa0, self.kappa1, self.eta0, self.eta1, self.xi)


def reparam(mu0, mu1, mu_star0, mu_star1) -> ReparamCoords:
    """kappa_c = <mu*_c, mu_c>, eta0 = <mu1, mu*_0>, eta1 = <mu0, mu*_1>, xi = <mu0, mu1>."""
    mu0, mu1, s0, s1 = (np.asarray(v, float) for v in (mu0, mu1, mu_star0, mu_star1))
    return ReparamCoords(
        float(s0 @ mu0), float(s1 @ mu1), float(mu1 @ s0), float(mu0 @ s1), float(mu0 @ mu1)
    )


def _coords4(coords):
    if isinstance(coords, ReparamCoords):
        return coords.kappa0, coords.kappa1, coords.eta0, coords.eta1
    return tuple(coords[:4])


# Monte Carlo ------------------------------------------------------------------

def _chunk_for(L, d):
    return max(1, 4_000_000 // (L * d))


def first_row_sampler(bank: HeadBank, spec: MixtureSpec, L: int, fn, first_label=None):
    """Sampler for mc_estimate: draws sequences and returns fn(x1, T1, batch)."""

    def draw(rng, m):
        batch = sample_batch(spec, L, m, rng, first_label=first_label)
        out = first_row_batch(bank, batch.tokens)
        return fn(batch.tokens[:, 0, :], out, batch)

    return draw


def empirical_risk(bank: HeadBank, spec: MixtureSpec, L: int, n_samples: int, rng=None,
                   first_label=None) -> MCEstimate:
    """Monte-Carlo estimate of E|X_1 - T(X)_1|^2 with its standard error."""
    def loss(x1, t1, _):
        r = x1 - t1
        return np.einsum("nd,nd->n", r, r)

    sampler = first_row_sampler(bank, spec, L, loss, first_label)
    return mc_estimate(sampler, n_samples, rng, chunk=_chunk_for(L, spec.d))


# Dirac mixture ----------------------------------------------------------------

def _dirac_constants(lam, L):
    return lam * (L + 1) / L, lam**2 * (L + 3) / (2 * L), lam**2 * (L - 1) / L


def exact_risk_dirac(coords, lam: float, L: int) -> float:
    """Risk under the two-point Dirac mixture as a quartic in (k0, k1, e0, e1)."""
    k0, k1, e0, e1 = _coords4(coords)
    a, b, c = _dirac_constants(lam, L)
    u0, u1 = k0**2 + e0**2, k1**2 + e1**2
    return 1 - a * (u0 + u1) + b * (u0**2 + u1**2) + c * (k0 * e1 + k1 * e0) ** 2


def dirac_risk_gradient(coords, lam: float, L: int) -> np.ndarray:
    """Gradient of exact_risk_dirac with respect to (k0, k1, e0, e1)."""
    k0, k1, e0, e1 = _coords4(coords)
    a, b, c = _dirac_constants(lam, L)
    u0, u1 = k0**2 + e0**2, k1**2 + e1**2
    w = k0 * e1 + k1 * e0
    return np.array([
        -2 * a * k0 + 4 * b * u0 * k0 + 2 * c * w * e1,
        -2 * a * k1 + 4 * b * u1 * k1 + 2 * c * w * e0,
        -2 * a * e0 + 4 * b * u0 * e0 + 2 * c * w * k1,
        -2 * a * e1 + 4 * b * u1 * e1 + 2 * c * w * k0,
    ])


def enumerate_risk_dirac(heads, centroids, lam: float, L: int) -> float:
    """Exact Dirac risk by averaging over all K^L label patterns.

    Heads need not be unit vectors here; the risk only depends on their
    inner products with the centroids.
    """
    H = np.atleast_2d(np.asarray(heads, float))
    C = np.atleast_2d(np.asarray(centroids, float))
    K = len(C)
    labels = np.array(list(itertools.product(range(K), repeat=L)), dtype=int)  # (P, L)
    X = C[labels]  # (P, L, d)
    S = X @ H.T  # (P, L, heads)
    w = (2.0 * lam / L) * np.einsum("ph,plh->pl", S[:, 0, :], S)
    r = X[:, 0, :] - np.einsum("pl,pld->pd", w, X)
    return float(np.mean(np.einsum("pd,pd->p", r, r)))


def dirac_coords_embedding(coords, d: int = 4):
    """Head vectors (possibly non-unit) and centroids (e_0, e_1) realizing (k0, k1, e0, e1)."""
    k0, k1, e0, e1 = _coords4(coords)
    C = np.eye(d)[:2]
    mu0 = k0 * C[0] + e1 * C[1]
    mu1 = e0 * C[0] + k1 * C[1]
    return np.stack([mu0, mu1]), C


# Gaussian mixture: manifold closed form ---------------------------------------

@dataclass(frozen=True)
class RiskCoefficients:
    A: float
    B: float
    C: float
    D: float
    c3: float
    sigma: float
    d: int

    def c1(self, n):
        return 1 + n * self.sigma**2

    def c2(self, n):
        return 1 + self.sigma**2 * (self.d + n)


def _c3(sigma, d, L):
    s2 = sigma**2
    c1 = lambda n: 1 + n * s2
    c2 = lambda n: 1 + s2 * (d + n)
    return (
        16 * s2 * c2(6) + 8 * s2 * (L - 1) * c1(6) + 4 * s2 * (L - 1) * c2(3)
        + s2 * (L - 1) * (L - 2) * c1(6) + 4 * c2(8) + 4 * (L - 1) * c1(5)
        + 2 * (L - 1) * c2(4) + (L - 1) * (L - 2) * c1(4) + 4 * s2 * (L - 1)
    )


def risk_coefficients(sigma: float, d: int, L: int, lam: float) -> RiskCoefficients:
    """Constants of R(k0, k1) = A(k0^4 + k1^4) + B(k0^2 + k1^2) + C k0^2 k1^2 + D."""
    s2 = sigma**2
    c1 = lambda n: 1 + n * s2
    c2 = lambda n: 1 + s2 * (d + n)
    lam2, L2 = lam**2, L**2
    A = (2 * lam2 / L2 * c2(8) + 2 * lam2 * (L - 1) / L2 * c1(5) + lam2 * (L - 1) / L2 * c2(4)
         + lam2 * (L - 1) * (L - 2) / (2 * L2) * c1(4))
    B = (-2 * lam / L * c2(4) + 16 * lam2 * s2 / L2 * c2(6) + 8 * lam2 * s2 * (L - 1) / L2 * c1(6)
         - lam * (L - 1) / L * c1(4) + 4 * lam2 * s2 * (L - 1) / L2 * c2(3)
         + lam2 * s2 * (L - 1) * (L - 2) / L2 * c1(6))
    C = 4 * lam2 * s2 * (L - 1) / L2
    D = (c1(d) - 8 * lam * s2 / L * c2(2) + 32 * lam2 * s2**2 / L2 * c2(4)
         + 64 * lam2 * s2**3 * (L - 1) / L2 - 8 * lam * s2**2 * (L - 1) / L
         + 8 * lam2 * s2**2 * (L - 1) / L2 * c2(2) + 8 * lam2 * s2**3 * (L - 1) * (L - 2) / L2)
    return RiskCoefficients(A, B, C, D, _c3(sigma, d, L), float(sigma), int(d))


def closed_form_risk_gaussian_manifold(kappa0, kappa1, sigma: float, d: int, L: int, lam: float):
    """Risk on the manifold as a function of (kappa0, kappa1); accepts arrays."""
    cf = risk_coefficients(sigma, d, L, lam)
    k0, k1 = np.asarray(kappa0, float), np.asarray(kappa1, float)
    out = cf.A * (k0**4 + k1**4) + cf.B * (k0**2 + k1**2) + cf.C * k0**2 * k1**2 + cf.D
    return float(out) if out.ndim == 0 else out


def manifold_risk_gradient(kappa0, kappa1, coeffs: RiskCoefficients):
    """(dR/dk0, dR/dk1) of the manifold risk."""
    A, B, C = coeffs.A, coeffs.B, coeffs.C
    g0 = 4 * A * kappa0**3 + 2 * B * kappa0 + 2 * C * kappa0 * kappa1**2
    g1 = 4 * A * kappa1**3 + 2 * B * kappa1 + 2 * C * kappa1 * kappa0**2
    return g0, g1


# Gaussian mixture: general closed form ----------------------------------------
# The helpers below take inner products directly so the assembly can be
# vectorized over heads and centroid labels. They mirror moments.p*.

def _p0(ma, mb, ab, na, nb, s2, d):
    return (ma**2 * mb**2 + s2 * (mb**2 * na + 4 * ma * mb * ab + ma**2 * nb)
            + s2 * (d + 8) * ma**2 * mb**2
            + s2**2 * (na * nb + 2 * ab**2 + (d + 6) * (na * mb**2 + nb * ma**2))
            + 4 * s2**2 * (d + 6) * ma * mb * ab + s2**3 * (d + 4) * (na * nb + 2 * ab**2))


def _p10(ma, mb, mc, na, ab, ac, bc, s2):
    return (ma**2 * mb * mc + s2 * (na * mb * mc + 2 * ma * (mc * ab + mb * ac))
            + s2 * ma**2 * bc + s2**2 * (na * bc + 2 * ab * ac))


def _p20(ma, mb, ab, s2):
    return ma * mb + s2 * ab


def _p21(ma, mb, ab, s2, d):
    return ma * mb + s2 * ((d + 4) * ma * mb + ab) + s2**2 * (d + 2) * ab


def _p31(m2a, m2b, m3a, m3b, s23, ab, s2):
    return m2a * m3b * s23 + s2 * (m2a * m2b + m3a * m3b) + s2**2 * ab


@dataclass(frozen=True)
class RiskTerms:
    """Pieces of the risk: E|X1|^2 - 2 E<X1,T1> + E|T1|^2."""

    norm2: float
    cross: float
    second_moment: float

    @property
    def risk(self):
        return self.norm2 - 2 * self.cross + self.second_moment


def check_orthonormal(centroids, tol=1e-12):
    C = np.atleast_2d(np.asarray(centroids, float))
    if np.max(np.abs(C @ C.T - np.eye(len(C)))) > tol:
        raise DomainError("centroids must be orthonormal")
    return C


def _risk_terms_batched(H, C, sigma, L, lam, first_label=None):
    """Cross term and second moment for a stack of head sets H (B, K, d)."""
    d = C.shape[1]
    s2 = float(sigma) ** 2
    m = np.swapaxes(H @ C.T, 1, 2)  # (B, z, h)
    G = H @ np.swapaxes(H, 1, 2)  # (B, h, g)
    nrm = np.einsum("bhd,bhd->bh", H, H)
    S = C @ C.T
    Z1 = m if first_label is None else m[:, [first_label]]
    S1 = S if first_label is None else S[[first_label]]

    # linear terms, axes (B, z1, [z2,] h)
    n3 = nrm[:, None, :]
    t_i0 = np.sum(Z1**2 * (1 + s2 * (d + 4)) + s2 * n3 * (1 + s2 * (d + 2)), axis=-1).mean(axis=-1)
    ma1, ma2 = Z1[:, :, None, :], m[:, None, :, :]
    t_i = np.sum(S1[None, :, :, None] * ma1 * ma2 + s2 * (ma1**2 + ma2**2) + s2**2 * nrm[:, None, None, :],
                 axis=-1).mean(axis=(1, 2))

    # quadratic terms, axes (B, z1, [z2, z3,] h, g)
    G4, na4, nb4 = G[:, None], nrm[:, None, :, None], nrm[:, None, None, :]
    t_p0 = np.sum(_p0(Z1[..., :, None], Z1[..., None, :], G4, na4, nb4, s2, d), axis=(-2, -1)).mean(axis=1)

    a1, b1 = Z1[:, :, None, :, None], Z1[:, :, None, None, :]
    a2, b2 = m[:, None, :, :, None], m[:, None, :, None, :]
    G5, na5, nb5 = G[:, None, None], nrm[:, None, None, :, None], nrm[:, None, None, None, :]
    s12 = S1[None, :, :, None, None]
    p1 = b2 * _p10(a1, b1, s12, na5, G5, a2, b2, s2) + s2 * _p10(a1, b1, b1, na5, G5, G5, nb5, s2)
    t_p1 = np.sum(p1, axis=(-2, -1)).mean(axis=(1, 2))
    p2 = _p20(a1, b1, G5, s2) * _p21(a2, b2, G5, s2, d)
    t_p2 = np.sum(p2, axis=(-2, -1)).mean(axis=(1, 2))

    G6 = G[:, None, None, None]
    p3 = _p20(Z1[:, :, None, None, :, None], Z1[:, :, None, None, None, :], G6, s2) * _p31(
        m[:, None, :, None, :, None], m[:, None, :, None, None, :],
        m[:, None, None, :, :, None], m[:, None, None, :, None, :],
        S[None, None, :, :, None, None], G6, s2)
    t_p3 = np.sum(p3, axis=(-2, -1)).mean(axis=(1, 2, 3))

    cross = (2 * lam / L) * (t_i0 + (L - 1) * t_i)
    second = (4 * lam**2 / L**2) * (t_p0 + 2 * (L - 1) * t_p1 + (L - 1) * t_p2 + (L - 1) * (L - 2) * t_p3)
    return cross, second


def gaussian_risk_terms(heads, centroids, sigma: float, L: int, lam: float, first_label=None) -> RiskTerms:
    """Closed-form moments of T^lin(X)_1 for any heads and orthonormal centroids.

    With `first_label=c` every expectation is conditional on Z_1 = c.
    """
    H = np.atleast_2d(np.asarray(heads, float))
    C = check_orthonormal(centroids)
    cross, second = _risk_terms_batched(H[None], C, sigma, L, lam, first_label)
    return RiskTerms(1 + C.shape[1] * float(sigma) ** 2, float(cross[0]), float(second[0]))


def closed_form_risk_gaussian_general(heads, centroids, sigma: float, L: int, lam: float,
                                      first_label=None) -> float:
    """Exact risk of the linear predictor with the given heads."""
    return gaussian_risk_terms(heads, centroids, sigma, L, lam, first_label).risk


def closed_form_second_moment(heads, centroids, sigma: float, L: int, lam: float, first_label=None) -> float:
    """E|T^lin(X)_1|^2, optionally conditional on Z_1."""
    return gaussian_risk_terms(heads, centroids, sigma, L, lam, first_label).second_moment


def closed_form_risk_gradient(heads, centroids, sigma: float, L: int, lam: float) -> np.ndarray:
    """Gradient of the general closed-form risk with respect to the heads.

    The risk is a polynomial of degree four in each head coordinate, so
    the five-point central stencil below is exact (up to rounding) for any
    step; it is not a finite-difference approximation.
    """
    H = np.atleast_2d(np.asarray(heads, float))
    C = check_orthonormal(centroids)
    K, d = H.shape
    h = 0.5
    steps = np.array([h, -h, 2 * h, -2 * h])
    eye = np.eye(K * d).reshape(K * d, K, d)
    stack = H[None, None] + steps[None, :, None, None] * eye[:, None]  # (Kd, 4, K, d)
    cross, second = _risk_terms_batched(stack.reshape(-1, K, d), C, sigma, L, lam)
    vals = (second - 2 * cross).reshape(K * d, 4)
    grad = (8 * (vals[:, 0] - vals[:, 1]) - (vals[:, 2] - vals[:, 3])) / (12 * h)
    return grad.reshape(K, d)


# temperatures -------------------------------------------------------------------

def lambda_star(sigma: float, d: int, L: int) -> float:
    """Temperature at which the corners (+-1, +-1) minimize the manifold risk."""
    s2 = sigma**2
    num = 2 * L * (1 + s2 * (d + 4)) + L * (L - 1) * (1 + 4 * s2)
    return num / _c3(sigma, d, L)


def lambda_star_degenerate(L: int) -> float:
    return (L + 1) / (L + 3)


def lambda_star_infinite(sigma: float) -> float:
    s2 = sigma**2
    return (1 + 4 * s2) / (1 + 5 * s2 + 6 * s2**2)


# regularizers -----------------------------------------------------------------

def regularizer_linear(heads, x1, form: str = "pairwise"):
    """Per-sample penalty on the first token.

    ``pairwise``: sum_{i<j} <mu_i,x>^2 <mu_j,x>^2; ``product``: prod_i <mu_i,x>^2.
    The two agree for K = 2.
    """
    H = np.atleast_2d(np.asarray(heads, float))
    if len(H) < 2:
        raise ConfigurationError("the regularizer needs at least two heads")
    x1 = np.asarray(x1, float)
    a2 = (x1 @ H.T) ** 2
    if form == "pairwise":
        out = 0.5 * (a2.sum(axis=-1) ** 2 - (a2**2).sum(axis=-1))
    elif form == "product":
        out = np.prod(a2, axis=-1)
    else:
        raise ConfigurationError(f"unknown regularizer form {form!r}")
    return float(out) if np.ndim(out) == 0 else out


def regularizer_expectation_dirac(heads, centroids, form: str = "pairwise") -> float:
    """Expected penalty under the Dirac mixture (average over centroids)."""
    C = np.atleast_2d(np.asarray(centroids, float))
    return float(np.mean(regularizer_linear(heads, C, form)))


def regularizer_dirac_coords(coords) -> float:
    """Two-head Dirac expectation in coordinates: (k0^2 e0^2 + k1^2 e1^2) / 2."""
    k0, k1, e0, e1 = _coords4(coords)
    return 0.5 * (k0**2 * e0**2 + k1**2 * e1**2)


def regularizer_softmax(mu0, mu1, x1, overlap: str = "linear"):
    """(<mu0,x>-1)^2 (<mu1,x>-1)^2 + <mu0,mu1> per sample.

    With ``overlap="squared"`` the last term is <mu0,mu1>^2.
    """
    mu0, mu1, x1 = (np.asarray(v, float) for v in (mu0, mu1, x1))
    if overlap not in ("linear", "squared"):
        raise ConfigurationError(f"unknown overlap form {overlap!r}")
    ip = float(mu0 @ mu1)
    out = (x1 @ mu0 - 1) ** 2 * (x1 @ mu1 - 1) ** 2 + (ip * ip if overlap == "squared" else ip)
    return float(out) if np.ndim(out) == 0 else out


# oracle predictor ---------------------------------------------------------------

def oracle_mean_factor(L: int, sigma: float, lam: float) -> float:
    """E[T(X)_1 | Z_1 = c] = factor * mu*_c when the heads are the centroids."""
    return lam / L * ((L + 1) + 2 * (L + 3) * sigma**2)


def oracle_unbiasing_lambda(L: int, sigma: float) -> float:
    return L / ((L + 1) + 2 * (L + 3) * sigma**2)


def oracle_second_moment(sigma: float, d: int, L: int, lam: float) -> float:
    """E[|T(X)_1|^2 | Z_1 = c] for oracle heads."""
    s2 = sigma**2
    return (4 * lam**2 / L**2 * (1 + s2 * (d + 16) + 8 * s2**2 * (d + 7) + 8 * s2**3 * (d + 4))
            + 2 * lam**2 * (L - 1) / L**2 * (3 + s2 * (d + 28) + 4 * s2**2 * (d + 16) + 4 * s2**3 * (d + 10))
            + lam**2 * (L - 1) * (L - 2) / L**2 * (1 + 6 * s2 + 12 * s2**2 + 8 * s2**3))


def oracle_variance(sigma: float, d: int, L: int, lam: float) -> float:
    """Trace of Var[T(X)_1 | Z_1 = c] for oracle heads."""
    return oracle_second_moment(sigma, d, L, lam) - oracle_mean_factor(L, sigma, lam) ** 2


def oracle_risk(sigma: float, d: int, L: int, lam: float) -> float:
    """Finite-L risk of the oracle predictor.

    The (L-1)/L^2 quadratic piece uses 4 sigma^4 (d+4); with that value the
    quadratic pieces add up to oracle_second_moment, as they must.
    """
    s2 = sigma**2
    c2 = lambda n: 1 + s2 * (d + n)
    i0 = 4 * lam / L * (c2(4) + 2 * s2 * c2(2))
    ii0 = 4 * lam**2 / L**2 * (1 + s2 * (d + 16) + 8 * s2**2 * (d + 7) + 8 * s2**3 * (d + 4))
    iii0 = 4 * lam**2 * (L - 1) / L**2 * (1 + 10 * s2 + 24 * s2**2 + 16 * s2**3)
    i = 2 * lam * (L - 1) / L * (1 + 4 * s2 + 4 * s2**2)
    ii = 2 * lam**2 * (L - 1) / L**2 * (1 + s2 * (d + 8) + 4 * s2**2 * (d + 4) + 4 * s2**3 * (d + 2))
    iii = lam**2 * (L - 1) * (L - 2) / L**2 * (1 + 6 * s2 + 12 * s2**2 + 8 * s2**3)
    return 1 + d * s2 - i0 + ii0 + iii0 - i + ii + iii


@dataclass(frozen=True)
class OracleLimits:
    risk_limit: float
    variance_limit: float


def oracle_asymptotics(sigma: float, d: int, lam: float) -> OracleLimits:
    """L -> infinity limits of the oracle risk and conditional variance."""
    s2 = sigma**2
    risk = (1 + d * s2) - lam * (2 + 8 * s2 + 8 * s2**2) + lam**2 * (1 + 6 * s2 + 12 * s2**2 + 8 * s2**3)
    var = 2 * lam**2 * s2 * (1 + 2 * s2) ** 2
    return OracleLimits(risk, var)


def oracle_optimal_lambda(sigma: float) -> float:
    s2 = sigma**2
    return (1 + 4 * s2 + 4 * s2**2) / (1 + 6 * s2 + 12 * s2**2 + 8 * s2**3)


# in-context layer ---------------------------------------------------------------

@dataclass(frozen=True)
class CtxStatistics:
    mean_factor: float
    unbiasing_lambda: float
    asymptotic_risk: float
    optimal_lambda: float
    optimal_asymptotic_risk: float
    asymptotic_variance: float
    risk: float
    second_moment: float
    variance: float


def _ctx_cubic(s2, d):
    return 2 * (s2 + 0.5) ** 3 + (d - 2) * s2**3


def ctx_statistics(sigma: float, d: int, L: int, lam: float) -> CtxStatistics:
    """Moments of the parameter-free layer on in-context data."""
    s2 = sigma**2
    base = (1 + (d + 2) * s2) + (L - 1) * (0.5 + s2)
    mean_factor = 2 * lam / L * base
    unbias = L / 2 / base
    cubic = _ctx_cubic(s2, d)
    second = (4 * lam**2 / L**2 * (1 + 3 * (d + 4) * s2 + 3 * (d + 2) * (d + 4) * s2**2 + d * (d + 2) * (d + 4) * s2**3)
              + 12 * lam**2 / L**2 * (L - 1) * (0.5 + (d + 8) / 2 * s2 + 3 * (d + 2) * s2**2 + d * (d + 2) * s2**3)
              + 8 * lam**2 / L**2 * (L - 1) * (L - 2) / 2 * cubic)
    risk = (1 + s2 * d - 4 * lam / L * (1 + 2 * (d + 2) * s2 + d * (d + 2) * s2**2)
            - 4 * lam / L * (L - 1) * (0.5 + 2 * s2 + d * s2**2) + second)
    lin = 1 + 4 * s2 + 2 * d * s2**2
    asym = (1 + s2 * d) - 2 * lam * lin + 4 * lam**2 * cubic
    opt = lin / (4 * cubic)
    opt_risk = s2 * (d - 2) * (1 + 2 * s2) / (1 + 6 * s2 + 12 * s2**2 + 4 * d * s2**3)
    return CtxStatistics(
        mean_factor=mean_factor,
        unbiasing_lambda=unbias,
        asymptotic_risk=asym,
        optimal_lambda=opt,
        optimal_asymptotic_risk=opt_risk,
        asymptotic_variance=2 * lam**2 * s2 * lin,
        risk=risk,
        second_moment=second,
        variance=second - mean_factor**2,
    )


# critical points of the Dirac risk --------------------------------------------------

@dataclass
class CriticalFamily:
    name: str
    kind: str  # "local max", "strict saddle", "saddle", "global min"
    description: str
    points: np.ndarray  # (n, 4) in (k0, k1, e0, e1)
    risk: np.ndarray


def critical_points_dirac(L: int, n_points: int = 8) -> list[CriticalFamily]:
    """Critical point families of the Dirac risk at lambda = (L+1)/(L+3).

    Coordinates are ordered (kappa0, kappa1, eta0, eta1).
    """
    lam = lambda_star_degenerate(L)
    t = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    c, s = np.cos(t), np.sin(t)
    z = np.zeros_like(t)
    r = np.sqrt((L + 3) / (2 * (L + 1)))
    fams = [
        ("origin", "local max", "(0, 0, 0, 0)", np.zeros((1, 4))),
        ("head0-circle", "strict saddle", "(k0, 0, e0, 0), k0^2 + e0^2 = 1", np.stack([c, z, s, z], 1)),
        ("head1-circle", "strict saddle", "(0, k1, 0, e1), k1^2 + e1^2 = 1", np.stack([z, c, z, s], 1)),
        ("shared-circle", "saddle", "(k0, k1, k1, k0), k0^2 + k1^2 = (L+3)/(2(L+1))",
         np.stack([r * c, r * s, r * s, r * c], 1)),
        ("shared-circle-flip", "saddle", "(k0, k1, -k1, -k0), k0^2 + k1^2 = (L+3)/(2(L+1))",
         np.stack([r * c, r * s, -r * s, -r * c], 1)),
        ("minima", "global min", "k0^2 + e0^2 = 1, k1^2 + e1^2 = 1, k0 e1 + k1 e0 = 0",
         np.concatenate([np.stack([c, c, s, -s], 1), np.stack([c, -c, s, s], 1)])),
    ]
    out = []
    for name, kind, desc, pts in fams:
        risk = np.array([exact_risk_dirac(p, lam, L) for p in pts])
        out.append(CriticalFamily(name, kind, desc, pts, risk))
    return out
