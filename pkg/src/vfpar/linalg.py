"""Least-squares helpers built on pivoted QR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import RankDeficiencyError


@dataclass
class LstsqResult:
    x: np.ndarray
    r: np.ndarray          # upper-triangular factor, columns in pivoted order
    perm: np.ndarray       # column permutation applied before factoring

    def unscaled_covariance(self):
        """``(A^T A)^{-1}`` from the triangular factor, in original column order."""
        q = self.r.shape[0]
        rinv = linalg.solve_triangular(self.r, np.eye(q))
        cov_p = rinv @ rinv.T
        inv = np.empty_like(cov_p)
        inv[np.ix_(self.perm, self.perm)] = cov_p
        return 0.5 * (inv + inv.T)


def lstsq_qr(a, b, rcond=None, labels=None):
    """Solve ``min ||a x - b||`` by column-pivoted Householder QR.

    Raises :class:`RankDeficiencyError` naming the columns judged
    dependent, using the usual ``max(m, n) * eps * |R_00|`` threshold.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    if m < n:
        raise RankDeficiencyError(range(m, n), f"{m} equations for {n} unknowns")
    q, r, perm = linalg.qr(a, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(r))
    tol = (rcond if rcond is not None else max(m, n) * np.finfo(float).eps) * (diag[0] if n else 0)
    if n and (diag[0] == 0 or np.any(diag <= tol)):
        bad = perm[diag <= tol] if diag[0] else perm
        names = [labels[i] for i in bad] if labels is not None else bad.tolist()
        raise RankDeficiencyError(names)
    z = linalg.solve_triangular(r, q.T @ b, check_finite=False)
    x = np.empty_like(z)
    x[perm] = z
    return LstsqResult(x, r, perm)
