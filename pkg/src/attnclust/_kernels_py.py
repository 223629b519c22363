"""Numpy reference implementation of the batch loss/gradient kernels.

Both functions return the batch mean of the per-sample objective and its
gradient. The compiled module in _kernels.pyx mirrors them exactly.
"""
from __future__ import annotations

import numpy as np

REG_FORMS = {"pairwise": 0, "product": 1}
OVERLAP_FORMS = {"linear": 0, "squared": 1}


def linear_loss_grad(X, H, lam, rho=0.0, form=0):
    """Objective |X1 - T^lin(X)_1|^2 + rho * r(X1) over a batch (n, L, d).

    Returns (loss, grad) with grad of shape (K, d).
    """
    X = np.asarray(X, dtype=float)
    H = np.asarray(H, dtype=float)
    n, L, _ = X.shape
    c = 2.0 * lam / L
    x1 = X[:, 0, :]
    S = X @ H.T  # (n, L, K)
    a = S[:, 0, :]  # (n, K)
    w = c * np.einsum("nk,nlk->nl", a, S)
    r = x1 - np.einsum("nl,nld->nd", w, X)
    q = np.einsum("nd,nld->nl", r, X)
    qs = np.einsum("nl,nlk->nk", q, S)  # sum_k q_k S_kh
    qx = np.einsum("nl,nld->nd", q, X)  # sum_k q_k X_k
    loss = np.einsum("nd,nd->n", r, r)
    coef_x1 = -2.0 * c * qs
    coef_qx = -2.0 * c * a
    if rho > 0:
        a2 = a * a
        if form == 0:
            tot = a2.sum(axis=1, keepdims=True)
            loss = loss + rho * 0.5 * (tot[:, 0] ** 2 - (a2 * a2).sum(axis=1))
            coef_x1 = coef_x1 + 2.0 * rho * a * (tot - a2)
        else:
            K = a.shape[1]
            others = np.stack([np.prod(np.delete(a2, h, axis=1), axis=1) for h in range(K)], axis=1)
            loss = loss + rho * np.prod(a2, axis=1)
            coef_x1 = coef_x1 + 2.0 * rho * a * others
    grad = np.einsum("nk,nd->kd", coef_x1, x1) + np.einsum("nk,nd->kd", coef_qx, qx)
    return float(loss.mean()), grad / n


def softmax_loss_grad(X, M, lam, psi, rho0=0.0, overlap=0):
    """Objective |X1 - T^soft(X)_1|^2 + rho0 * r0 for the shaped two-head predictor.

    r0 = (<mu0,X1>-1)^2 (<mu1,X1>-1)^2 + <mu0,mu1>, or with <mu0,mu1>^2 as
    the overlap term when `overlap` is 1.
    Returns (loss, grad_mu (2, d), grad_lam, grad_psi).
    """
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    n, L, _ = X.shape
    x1 = X[:, 0, :]
    xbar = X.mean(axis=1)
    S = X @ M.T  # (n, L, 2)
    a = S[:, 0, :]
    z = lam * a[:, None, :] * S
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    r = x1 - np.einsum("nlh,nld->nd", p, X) + psi * xbar
    q = np.einsum("nd,nld->nl", r, X)
    qbar = np.einsum("nlh,nl->nh", p, q)
    delta = -2.0 * p * (q[:, :, None] - qbar[:, None, :])  # (n, L, 2)
    ds = np.einsum("nlh,nlh->nh", delta, S)
    dx = np.einsum("nlh,nld->nhd", delta, X)
    g_mu = lam * (np.einsum("nh,nd->hd", ds, x1) + np.einsum("nh,nhd->hd", a, dx))
    g_lam = float(np.einsum("nh,nh->", ds, a))
    g_psi = float(2.0 * np.einsum("nd,nd->", r, xbar))
    loss = np.einsum("nd,nd->n", r, r)
    if rho0 > 0:
        u0, u1 = a[:, 0] - 1.0, a[:, 1] - 1.0
        loss = loss + rho0 * u0**2 * u1**2
        g_mu[0] += rho0 * np.einsum("n,nd->d", 2.0 * u0 * u1**2, x1)
        g_mu[1] += rho0 * np.einsum("n,nd->d", 2.0 * u1 * u0**2, x1)
    g_mu /= n
    total = float(loss.mean())
    if rho0 > 0:
        ip = float(M[0] @ M[1])
        scale = 2.0 * ip if overlap else 1.0
        total += rho0 * (ip * ip if overlap else ip)
        g_mu[0] += rho0 * scale * M[1]
        g_mu[1] += rho0 * scale * M[0]
    return total, g_mu, g_lam / n, g_psi / n
