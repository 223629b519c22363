"""Centroid-recovery distances that ignore head order and, optionally, sign."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError

MAX_HEADS = 8


@lru_cache(maxsize=None)
def _perms(K):
    return np.array(list(itertools.permutations(range(K))), dtype=int)


@lru_cache(maxsize=None)
def _signs(K):
    return np.array(list(itertools.product((1.0, -1.0), repeat=K)))


def _pair(estimated, truth):
    est = np.atleast_2d(np.asarray(estimated, float))
    tru = np.atleast_2d(np.asarray(truth, float))
    if est.shape != tru.shape:
        raise DimensionError(f"shape mismatch: {est.shape} vs {tru.shape}")
    if len(est) > MAX_HEADS:
        raise DimensionError(f"exhaustive matching supports at most {MAX_HEADS} heads")
    return est, tru


def _search(est, tru, signed):
    # |a - s b|^2 = |a|^2 + |b|^2 - 2 s <a, b>, so only the cross Gram matters
    K = len(est)
    P = _perms(K)
    gram = est @ tru.T  # gram[j, i] = <est_j, tru_i>
    base = np.sum(est**2) + np.sum(tru**2)
    cross = gram[P, np.arange(K)]  # (n_perm, K): <est_{pi(i)}, tru_i>
    if signed:
        S = np.ones((1, K))
    else:
        S = _signs(K)
    vals = base - 2 * np.einsum("pk,sk->ps", cross, S)
    p, s = np.unravel_index(np.argmin(vals), vals.shape)
    # recompute the winner directly; the Gram form cancels badly near zero
    diff = est[P[p]] - S[s][:, None] * tru
    return math.sqrt(float(np.sum(diff * diff))), tuple(int(i) for i in P[p]), tuple(int(x) for x in S[s])


def dist_up_to_sign_perm(estimated, truth, return_witness: bool = False):
    """min over permutations pi and signs s of sqrt(sum_i |est_{pi(i)} - s_i truth_i|^2)."""
    est, tru = _pair(estimated, truth)
    dist, perm, signs = _search(est, tru, signed=False)
    return (dist, perm, signs) if return_witness else dist


def dist_signed(estimated, truth) -> float:
    """Like dist_up_to_sign_perm but sign flips are not forgiven."""
    est, tru = _pair(estimated, truth)
    return _search(est, tru, signed=True)[0]


def minimal_rmse(estimated, truth, d: int | None = None) -> float:
    est, _ = _pair(estimated, truth)
    d = est.shape[1] if d is None else d
    return dist_up_to_sign_perm(estimated, truth) / math.sqrt(d)


@dataclass(frozen=True)
class RecoveryReport:
    distance_up_to_sign_perm: float
    signed_distance: float
    minimal_rmse: float
    best_permutation: tuple
    best_signs: tuple


def recovery_report(estimated, truth) -> RecoveryReport:
    est, tru = _pair(estimated, truth)
    dist, perm, signs = _search(est, tru, signed=False)
    return RecoveryReport(dist, _search(est, tru, signed=True)[0], dist / math.sqrt(est.shape[1]), perm, signs)
