"""Small dense symmetric eigen-solvers: power iteration and cyclic Jacobi.

These back the spectral gap and the Lipschitz-constant computations. numpy is
used for array arithmetic only; the eigen-solvers themselves are here so the
tests can compare them against ``numpy.linalg.eigvalsh`` as an independent
oracle.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def _start_vector(size: int) -> np.ndarray:
    # Fixed pseudo-random start; dense so it is never orthogonal to a
    # structured eigenvector by accident.
    x = np.random.default_rng(0x5EED).standard_normal(size)
    return x / np.linalg.norm(x)


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    size: int,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    start: np.ndarray | None = None,
) -> tuple[float, bool]:
    """Dominant eigenvalue of a symmetric positive semidefinite operator.

    Args:
        apply: Function computing ``S @ x`` for the operator ``S``.
        size: Dimension of ``x``.
        tol: Stop once the residual ``||S x - theta x||`` drops below
            ``tol * max(1, theta)``.
        max_iter: Iteration cap.
        start: Optional unit start vector.

    Returns:
        ``(theta, converged)`` where ``theta`` is the Rayleigh quotient at exit.
    """
    x = _start_vector(size) if start is None else np.asarray(start, dtype=float)
    theta = 0.0
    for _ in range(max_iter):
        y = apply(x)
        theta = float(x @ y)
        if np.linalg.norm(y - theta * x) <= tol * max(1.0, abs(theta)):
            return theta, True
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, True
        x = y / norm
    return theta, False


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Returned in ascending order.
    """
    a = np.array(a, dtype=float, copy=True)
    m = a.shape[0]
    if m == 1:
        return a.diagonal().copy()
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
    return np.sort(a.diagonal())


def largest_eigenvalue_psd(s: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix (power iteration, Jacobi fallback)."""
    s = np.asarray(s, dtype=float)
    theta, converged = power_iteration(lambda x: s @ x, s.shape[0], tol=tol, max_iter=max_iter)
    if converged:
        return theta
    return float(jacobi_eigenvalues(s)[-1])
