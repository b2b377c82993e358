"""Sparse SPD solvers used by the forward problems."""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kvdot.errors import ConfigurationError, NumericalError

RTOL = 1e-10


def pcg(A, b, x0=None, rtol=RTOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for a sparse SPD matrix.

    Stops when ``||b - A x|| <= rtol * ||b||``. Raises :class:`NumericalError`
    if that is not reached within ``maxiter`` (default ``20 * n``) iterations.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = 20 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(r) / bnorm
    if res <= rtol:
        return x
    raise NumericalError(f"PCG stalled after {maxiter} iterations, relative residual {res:.3e}", res)


class SPDSolver:
    """Reusable solver for one SPD matrix.

    ``method`` is ``"direct"`` (sparse LU), ``"cg"`` (Jacobi PCG) or
    ``"dense"`` (Cholesky, only sensible for small systems).
    """

    def __init__(self, A, method="direct"):
        self.A = sp.csc_matrix(A)
        self.method = method
        if method == "direct":
            self._lu = spla.splu(self.A)
        elif method == "dense":
            self._chol = scipy.linalg.cho_factor(self.A.toarray())
        elif method != "cg":
            raise ConfigurationError(f"unknown solver method {method!r}")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] == 0:
            return b.copy()
        if self.method == "direct":
            x = self._lu.solve(b)
        elif self.method == "dense":
            x = scipy.linalg.cho_solve(self._chol, b)
        else:
            x = pcg(self.A, b)
        bnorm = np.linalg.norm(b)
        if bnorm > 0.0:
            res = np.linalg.norm(b - self.A @ x) / bnorm
            if not res <= RTOL:
                raise NumericalError(f"{self.method} solve: relative residual {res:.3e}", res)
        return x
