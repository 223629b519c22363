"""Backend selection for the batch gradient kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable ATTNCLUST_PURE is set to a nonempty value other
than "0", the numpy implementation is used. Both expose the same
functions and agree to rounding.

The compiled linear kernel is a plain loop nest; above a few dozen
dimensions numpy's BLAS-backed contractions win, so wide problems are
routed to numpy even when the extension is present.
"""
from __future__ import annotations

import os

from . import _kernels_py as pure
from ._kernels_py import OVERLAP_FORMS, REG_FORMS

compiled = None
if os.environ.get("ATTNCLUST_PURE", "") in ("", "0"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

BACKEND = "compiled" if compiled is not None else "python"
WIDE_DIM = 32


def linear_loss_grad(X, H, lam, rho=0.0, form=0):
    if compiled is not None and X.shape[-1] <= WIDE_DIM:
        return compiled.linear_loss_grad(X, H, lam, rho, form)
    return pure.linear_loss_grad(X, H, lam, rho, form)


def softmax_loss_grad(X, M, lam, psi, rho0=0.0, overlap=0):
    if compiled is not None:
        return compiled.softmax_loss_grad(X, M, lam, psi, rho0, overlap)
    return pure.softmax_loss_grad(X, M, lam, psi, rho0, overlap)


__all__ = ["BACKEND", "OVERLAP_FORMS", "REG_FORMS", "WIDE_DIM", "compiled", "pure",
           "linear_loss_grad", "softmax_loss_grad"]
