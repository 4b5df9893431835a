"""Cyclic Jacobi eigendecomposition for small dense symmetric matrices."""

from __future__ import annotations

import math

import numpy as np

OFF_TOL = 1e-14
MAX_SWEEPS = 100


class ConvergenceError(RuntimeError):
    pass


def jacobi_eigh(x: np.ndarray, tol: float = OFF_TOL, max_sweeps: int = MAX_SWEEPS
                ) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of symmetric ``x``.

    Sweeps rotate every off-diagonal pair in row order until the
    off-diagonal Frobenius mass falls below ``tol * ||x||_F``.  Each
    eigenvector is signed so that its first entry of largest magnitude is
    positive.
    """
    a = np.array(x, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    a = (a + a.T) / 2.0
    n = a.shape[0]
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    target = tol * norm
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a[~np.eye(n, dtype=bool)]))
        if off <= target or norm == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # a <- J^T a J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"no convergence after {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for k in range(n):
        col = v[:, k]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            v[:, k] = -col
    return w, v
