"""Gaussian moment identities and the helper polynomials p0..p3.

All identities are for G ~ N(0, sigma^2 I_d) and X = mu* + G with a unit
centre mu*. The helpers are polynomials in inner products, sigma^2 and d.
A generic Monte-Carlo estimator with standard errors lives here too and
serves as the oracle for every closed form in the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._rng import as_generator, spawn
from .errors import AttnClustError, DomainError


def _unit(v, name, tol=1e-12):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise DomainError(f"{name} must have unit norm")
    return v


@dataclass
class MomentContext:
    sigma: float
    d: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None


_NEEDS = {1: "", 2: "a", 3: "a", 4: "ab", 5: "ab", 6: "abc", 7: "ab", 8: "ab"}


def isserlis_identity(idx: int, ctx: MomentContext):
    """Closed-form value of moment identity `idx` (1..8).

    1  E|G|^2                         = s2 d
    2  E<a,G>                         = 0
    3  E<a,G> G                       = s2 a            (a vector)
    4  E<a,G><b,G>                    = s2 <a,b>
    5  E<a,G>^2<b,G>^2                = s4 (|a|^2|b|^2 + 2<a,b>^2)
    6  E<a,G><b,G>^2<c,G>             = s4 (|b|^2<a,c> + 2<a,b><b,c>)
    7  E<a,G><b,G>|G|^2               = s4 (d+2) <a,b>
    8  E<a,G>^2<b,G>^2|G|^2           = s6 (d+4)(|a|^2|b|^2 + 2<a,b>^2)
    """
    if idx not in _NEEDS:
        raise AttnClustError(f"unknown identity {idx}")
    vecs = {}
    for name in _NEEDS[idx]:
        v = getattr(ctx, name)
        if v is None:
            raise AttnClustError(f"identity {idx} needs vector {name!r}")
        vecs[name] = np.asarray(v, dtype=float)
    s2 = ctx.sigma**2
    d = ctx.d
    a, b, c = vecs.get("a"), vecs.get("b"), vecs.get("c")
    if idx == 1:
        return s2 * d
    if idx == 2:
        return 0.0
    if idx == 3:
        return s2 * a
    if idx == 4:
        return s2 * (a @ b)
    if idx == 5:
        return s2**2 * ((a @ a) * (b @ b) + 2 * (a @ b) ** 2)
    if idx == 6:
        return s2**2 * ((b @ b) * (a @ c) + 2 * (a @ b) * (b @ c))
    if idx == 7:
        return s2**2 * (d + 2) * (a @ b)
    return s2**3 * (d + 4) * ((a @ a) * (b @ b) + 2 * (a @ b) ** 2)


def isserlis_integrand(idx: int, ctx: MomentContext, G: np.ndarray) -> np.ndarray:
    """Per-sample quantity whose mean is identity `idx`; G has shape (n, d)."""
    a, b, c = ctx.a, ctx.b, ctx.c
    if idx == 1:
        return np.einsum("nd,nd->n", G, G)
    ga = G @ a if a is not None else None
    if idx == 2:
        return ga
    if idx == 3:
        return ga[:, None] * G
    gb = G @ b
    if idx == 4:
        return ga * gb
    if idx == 5:
        return ga**2 * gb**2
    if idx == 6:
        return ga * gb**2 * (G @ c)
    sq = np.einsum("nd,nd->n", G, G)
    if idx == 7:
        return ga * gb * sq
    return ga**2 * gb**2 * sq


def lemma_i0(a, mu_star, sigma: float, d: int) -> float:
    """E[<X,a>^2 |X|^2] for X ~ N(mu*, sigma^2 I)."""
    s2 = sigma**2
    m = mu_star @ a
    return m**2 * (1 + s2 * (d + 4)) + s2 * (a @ a) * (1 + s2 * (d + 2))


def lemma_i(a, mu_star_1, mu_star_2, sigma: float) -> float:
    """E[<X1,a><X2,a><X1,X2>] for independent X_i ~ N(mu*_i, sigma^2 I)."""
    s2 = sigma**2
    m1, m2 = mu_star_1 @ a, mu_star_2 @ a
    return (mu_star_1 @ mu_star_2) * m1 * m2 + s2 * (m1**2 + m2**2) + s2**2 * (a @ a)


def p0(mu_a, mu_b, mu_star, sigma: float, d: int) -> float:
    """E[<X,a>^2 <X,b>^2 |X|^2] for X ~ N(mu*, sigma^2 I)."""
    mu_star = _unit(mu_star, "mu_star")
    a, b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    s2 = sigma**2
    ma, mb, ab = mu_star @ a, mu_star @ b, a @ b
    na, nb = a @ a, b @ b
    return (
        ma**2 * mb**2
        + s2 * (mb**2 * na + 4 * ma * mb * ab + ma**2 * nb)
        + s2 * (d + 8) * ma**2 * mb**2
        + s2**2 * (na * nb + 2 * ab**2 + (d + 6) * (na * mb**2 + nb * ma**2))
        + 4 * s2**2 * (d + 6) * ma * mb * ab
        + s2**3 * (d + 4) * (na * nb + 2 * ab**2)
    )


def p1_0(mu_a, mu_b, mu_star, mu_c, sigma: float, d: int | None = None) -> float:
    """E[<X,a>^2 <X,b> <X,c>] for X ~ N(mu*, sigma^2 I); c is any vector."""
    mu_star = _unit(mu_star, "mu_star")
    a, b, c = (np.asarray(v, float) for v in (mu_a, mu_b, mu_c))
    s2 = sigma**2
    ma, mb, mc = mu_star @ a, mu_star @ b, mu_star @ c
    return (
        ma**2 * mb * mc
        + s2 * ((a @ a) * mb * mc + 2 * ma * (mc * (a @ b) + mb * (a @ c)))
        + s2 * ma**2 * (b @ c)
        + s2**2 * ((a @ a) * (b @ c) + 2 * (a @ b) * (a @ c))
    )


def p1(mu_a, mu_b, mu_star_1, mu_star_2, sigma: float, d: int | None = None) -> float:
    """E[<X1,a>^2 <X1,b> <X2,b> <X1,X2>], X1, X2 independent around mu*_1, mu*_2."""
    mu_star_2 = _unit(mu_star_2, "mu_star_2")
    b = np.asarray(mu_b, float)
    return (mu_star_2 @ b) * p1_0(mu_a, b, mu_star_1, mu_star_2, sigma) + sigma**2 * p1_0(
        mu_a, b, mu_star_1, b, sigma
    )


def p2_0(mu_a, mu_b, mu_star, sigma: float) -> float:
    """E[<X,a><X,b>] for X ~ N(mu*, sigma^2 I)."""
    mu_star = _unit(mu_star, "mu_star")
    a, b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    return (mu_star @ a) * (mu_star @ b) + sigma**2 * (a @ b)


def p2_1(mu_a, mu_b, mu_star, sigma: float, d: int) -> float:
    """E[<X,a><X,b>|X|^2] for X ~ N(mu*, sigma^2 I)."""
    mu_star = _unit(mu_star, "mu_star")
    a, b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    s2 = sigma**2
    mm = (mu_star @ a) * (mu_star @ b)
    return mm + s2 * ((d + 4) * mm + a @ b) + s2**2 * (d + 2) * (a @ b)


def p2(mu_a, mu_b, mu_star_1, mu_star_2, sigma: float, d: int) -> float:
    """E[<X1,a><X2,a><X1,b><X2,b>|X2|^2] = p2_0(mu*_1) p2_1(mu*_2)."""
    return p2_0(mu_a, mu_b, mu_star_1, sigma) * p2_1(mu_a, mu_b, mu_star_2, sigma, d)


p3_0 = p2_0


def p3_1(mu_a, mu_b, mu_star_2, mu_star_3, sigma: float) -> float:
    """E[<X2,a><X3,b><X2,X3>] for independent X2, X3 around mu*_2, mu*_3."""
    s2_, s3_ = _unit(mu_star_2, "mu_star_2"), _unit(mu_star_3, "mu_star_3")
    a, b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    s2 = sigma**2
    return (
        (s2_ @ a) * (s3_ @ b) * (s2_ @ s3_)
        + s2 * ((s2_ @ a) * (s2_ @ b) + (s3_ @ a) * (s3_ @ b))
        + s2**2 * (a @ b)
    )


def p3(mu_a, mu_b, mu_star_1, mu_star_2, mu_star_3, sigma: float, d: int | None = None) -> float:
    """E[<X1,a><X2,a><X1,b><X3,b><X2,X3>] = p3_0(mu*_1) p3_1(mu*_2, mu*_3)."""
    return p3_0(mu_a, mu_b, mu_star_1, sigma) * p3_1(mu_a, mu_b, mu_star_2, mu_star_3, sigma)


# Monte-Carlo oracle ---------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    mean: float | np.ndarray
    se: float | np.ndarray
    n: int

    def within(self, target, k: float = 4.0) -> bool:
        """True when |mean - target| <= k * se in every coordinate."""
        return bool(np.all(np.abs(np.asarray(self.mean) - target) <= k * np.asarray(self.se)))

    def zscore(self, target):
        se = np.asarray(self.se, dtype=float)
        diff = np.asarray(self.mean) - target
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))


def mc_estimate(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    rng=None,
    chunk: int = 100_000,
) -> MCEstimate:
    """Mean and standard error of per-sample values from `sampler(rng, m)`.

    The work is cut into fixed chunks, each with its own spawned stream,
    and chunk statistics are merged in chunk order (Chan's update), so the
    result does not depend on how chunks would be scheduled.
    """
    if n < 1:
        raise AttnClustError("n must be positive")
    sizes = [chunk] * (n // chunk) + ([n % chunk] if n % chunk else [])
    streams = spawn(rng, len(sizes))
    count, mean, m2 = 0, None, None
    for m, gen in zip(sizes, streams):
        vals = np.asarray(sampler(gen, m), dtype=float)
        cm = vals.mean(axis=0)
        cm2 = ((vals - cm) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = m, cm, cm2
            continue
        tot = count + m
        delta = cm - mean
        mean = mean + delta * (m / tot)
        m2 = m2 + cm2 + delta**2 * (count * m / tot)
        count = tot
    var = m2 / (count - 1) if count > 1 else np.zeros_like(m2)
    se = np.sqrt(var / count)
    if np.ndim(mean) == 0:
        return MCEstimate(float(mean), float(se), count)
    return MCEstimate(mean, se, count)


def gaussian_sampler(mu_star, sigma: float, fn: Callable[[np.ndarray], np.ndarray]):
    """Sampler for `fn(X)` with rows X ~ N(mu*, sigma^2 I)."""
    mu_star = np.asarray(mu_star, float)

    def draw(rng, m):
        return fn(mu_star + sigma * rng.standard_normal((m, mu_star.size)))

    return draw


def gaussian_tuple_sampler(centres, sigma: float, fn: Callable[..., np.ndarray]):
    """Sampler for `fn(X1, ..., Xk)` with independent rows X_i ~ N(centre_i, sigma^2 I)."""
    centres = [np.asarray(c, float) for c in centres]

    def draw(rng, m):
        xs = [c + sigma * rng.standard_normal((m, c.size)) for c in centres]
        return fn(*xs)

    return draw


def _rowdot(x, y):
    return np.einsum("nd,nd->n", x, y)


def p_integrand(name: str, vecs: dict):
    """Per-sample integrand of a p-function, for use with gaussian_tuple_sampler.

    Returns (fn, centre names) where centre names say which starred vector
    each token is drawn around.
    """
    a, b = vecs["a"], vecs["b"]
    if name == "p0":
        return (lambda X: (X @ a) ** 2 * (X @ b) ** 2 * _rowdot(X, X)), ["s"]
    if name == "p1_0":
        c = vecs["c"]
        return (lambda X: (X @ a) ** 2 * (X @ b) * (X @ c)), ["s"]
    if name == "p1":
        return (lambda X1, X2: (X1 @ a) ** 2 * (X1 @ b) * (X2 @ b) * _rowdot(X1, X2)), ["s1", "s2"]
    if name == "p2_0":
        return (lambda X: (X @ a) * (X @ b)), ["s"]
    if name == "p2_1":
        return (lambda X: (X @ a) * (X @ b) * _rowdot(X, X)), ["s"]
    if name == "p2":
        return (lambda X1, X2: (X1 @ a) * (X2 @ a) * (X1 @ b) * (X2 @ b) * _rowdot(X2, X2)), ["s1", "s2"]
    if name == "p3_1":
        return (lambda X2, X3: (X2 @ a) * (X3 @ b) * _rowdot(X2, X3)), ["s2", "s3"]
    if name == "p3":
        return (
            lambda X1, X2, X3: (X1 @ a) * (X2 @ a) * (X1 @ b) * (X3 @ b) * _rowdot(X2, X3)
        ), ["s1", "s2", "s3"]
    raise AttnClustError(f"unknown p-function {name!r}")
