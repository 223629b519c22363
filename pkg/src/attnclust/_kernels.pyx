# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled batch loss/gradient kernels; see _kernels_py for the reference."""
import numpy as np
from libc.math cimport exp


def linear_loss_grad(X, H, double lam, double rho=0.0, int form=0):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] h = np.ascontiguousarray(H, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], d = x.shape[2], K = h.shape[0]
    cdef Py_ssize_t i, k, j, m, g
    cdef double c = 2.0 * lam / L, loss = 0.0, acc, tot, prod
    grad_arr = np.zeros((K, d))
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] S = np.empty((L, K))
    cdef double[::1] w = np.empty(L), q = np.empty(L), r = np.empty(d)
    cdef double[::1] qx = np.empty(d), qs = np.empty(K), a2 = np.empty(K), cx = np.empty(K)

    for i in range(n):
        for k in range(L):
            for m in range(K):
                acc = 0.0
                for j in range(d):
                    acc += x[i, k, j] * h[m, j]
                S[k, m] = acc
        for k in range(L):
            acc = 0.0
            for m in range(K):
                acc += S[0, m] * S[k, m]
            w[k] = c * acc
        for j in range(d):
            acc = x[i, 0, j]
            for k in range(L):
                acc -= w[k] * x[i, k, j]
            r[j] = acc
        for k in range(L):
            acc = 0.0
            for j in range(d):
                acc += r[j] * x[i, k, j]
            q[k] = acc
        for j in range(d):
            acc = 0.0
            for k in range(L):
                acc += q[k] * x[i, k, j]
            qx[j] = acc
            loss += r[j] * r[j]
        for m in range(K):
            acc = 0.0
            for k in range(L):
                acc += q[k] * S[k, m]
            qs[m] = acc
            cx[m] = -2.0 * c * acc
        if rho > 0:
            tot = 0.0
            for m in range(K):
                a2[m] = S[0, m] * S[0, m]
                tot += a2[m]
            if form == 0:
                acc = 0.0
                for m in range(K):
                    acc += a2[m] * a2[m]
                    cx[m] += 2.0 * rho * S[0, m] * (tot - a2[m])
                loss += rho * 0.5 * (tot * tot - acc)
            else:
                prod = 1.0
                for m in range(K):
                    prod *= a2[m]
                loss += rho * prod
                for m in range(K):
                    acc = 1.0
                    for g in range(K):
                        if g != m:
                            acc *= a2[g]
                    cx[m] += 2.0 * rho * S[0, m] * acc
        for m in range(K):
            for j in range(d):
                grad[m, j] += cx[m] * x[i, 0, j] - 2.0 * c * S[0, m] * qx[j]

    for m in range(K):
        for j in range(d):
            grad[m, j] /= n
    return loss / n, grad_arr


def softmax_loss_grad(X, M, double lam, double psi, double rho0=0.0, int overlap=0):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] mu = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t i, k, j, m
    cdef double loss = 0.0, g_lam = 0.0, g_psi = 0.0, acc, zmax, tot, u0, u1, dl, scale
    g_arr = np.zeros((2, d))
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] S = np.empty((L, 2)), p = np.empty((L, 2))
    cdef double[::1] q = np.empty(L), r = np.empty(d), xbar = np.empty(d)
    cdef double qbar[2]
    cdef double ds[2]
    cdef double[:, ::1] dx = np.empty((2, d))

    for i in range(n):
        for j in range(d):
            acc = 0.0
            for k in range(L):
                acc += x[i, k, j]
            xbar[j] = acc / L
        for k in range(L):
            for m in range(2):
                acc = 0.0
                for j in range(d):
                    acc += x[i, k, j] * mu[m, j]
                S[k, m] = acc
        for m in range(2):
            zmax = lam * S[0, m] * S[0, m]
            for k in range(1, L):
                acc = lam * S[0, m] * S[k, m]
                if acc > zmax:
                    zmax = acc
            tot = 0.0
            for k in range(L):
                p[k, m] = exp(lam * S[0, m] * S[k, m] - zmax)
                tot += p[k, m]
            for k in range(L):
                p[k, m] /= tot
        for j in range(d):
            acc = x[i, 0, j] + psi * xbar[j]
            for k in range(L):
                acc -= (p[k, 0] + p[k, 1]) * x[i, k, j]
            r[j] = acc
            loss += acc * acc
            g_psi += 2.0 * acc * xbar[j]
        for k in range(L):
            acc = 0.0
            for j in range(d):
                acc += r[j] * x[i, k, j]
            q[k] = acc
        for m in range(2):
            acc = 0.0
            for k in range(L):
                acc += p[k, m] * q[k]
            qbar[m] = acc
            ds[m] = 0.0
            for j in range(d):
                dx[m, j] = 0.0
            for k in range(L):
                dl = -2.0 * p[k, m] * (q[k] - qbar[m])
                ds[m] += dl * S[k, m]
                for j in range(d):
                    dx[m, j] += dl * x[i, k, j]
            g_lam += ds[m] * S[0, m]
            for j in range(d):
                g[m, j] += lam * (ds[m] * x[i, 0, j] + S[0, m] * dx[m, j])
        if rho0 > 0:
            u0 = S[0, 0] - 1.0
            u1 = S[0, 1] - 1.0
            loss += rho0 * u0 * u0 * u1 * u1
            for j in range(d):
                g[0, j] += rho0 * 2.0 * u0 * u1 * u1 * x[i, 0, j]
                g[1, j] += rho0 * 2.0 * u1 * u0 * u0 * x[i, 0, j]

    for m in range(2):
        for j in range(d):
            g[m, j] /= n
    loss /= n
    if rho0 > 0:
        acc = 0.0
        for j in range(d):
            acc += mu[0, j] * mu[1, j]
        scale = 2.0 * acc if overlap else 1.0
        for j in range(d):
            g[0, j] += rho0 * scale * mu[1, j]
            g[1, j] += rho0 * scale * mu[0, j]
        loss += rho0 * (acc * acc if overlap else acc)
    return loss, g_arr, g_lam / n, g_psi / n
