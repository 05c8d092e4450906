"""Bound-constrained BFGS with backtracking line search."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np


class QuasiNewtonResult(NamedTuple):
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int
    projected_grad_max: float


def _projected(g, x, lower):
    if lower is None:
        return g
    at_bound = (x <= lower + 1e-12) & (g > 0)
    return np.where(at_bound, 0.0, g)


def minimize_bfgs(fun: Callable, grad: Callable, x0, lower=None, max_iter: int = 2000, gtol: float = 1e-9,
                  max_halvings: int = 60, ftol: float = 1e-15, accept_gtol: float = 1e-6) -> QuasiNewtonResult:
    """
    Minimize ``fun`` by BFGS with simple lower bounds.

    ``fun`` may return ``inf`` (or NaN) for inadmissible points, e.g. a
    non-positive-definite model covariance; the line search then halves the
    step.  Lower bounds are enforced by projection, and variables held at a
    bound with an outward gradient are frozen for that iteration.
    Convergence means the max-abs projected gradient is below ``gtol``, or
    below ``accept_gtol`` once a step improves ``fun`` by no more than
    ``ftol`` relative to its magnitude (rounding-level progress).
    """
    lo = None if lower is None else np.asarray(lower, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    if lo is not None:
        x = np.maximum(x, lo)
    f = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    g = grad(x)
    n = x.size
    H = np.eye(n)
    first = True
    it = 0
    for it in range(1, max_iter + 1):
        pg = _projected(g, x, lo)
        if np.max(np.abs(pg)) < gtol:
            return QuasiNewtonResult(x, f, g, True, it - 1, float(np.max(np.abs(pg))))
        free = pg != 0
        d = np.zeros(n)
        d[free] = -H[np.ix_(free, free)] @ g[free]
        slope = g @ d
        if slope >= 0:
            H = np.eye(n)
            d = -pg
            slope = g @ d
        step = 1.0
        for _ in range(max_halvings):
            xn = x + step * d
            if lo is not None:
                xn = np.maximum(xn, lo)
            fn = fun(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * (g @ (xn - x)):
                break
            step *= 0.5
        else:
            pgmax = float(np.max(np.abs(pg)))
            return QuasiNewtonResult(x, f, g, pgmax < 1e-6, it, pgmax)
        gn = grad(xn)
        s = xn - x
        y = gn - g
        sy = s @ y
        if sy > 1e-16 * max(1.0, np.linalg.norm(s) * np.linalg.norm(y)):
            if first:
                H = np.eye(n) * (sy / (y @ y))
                first = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        stalled = f - fn <= ftol * (abs(f) + 1.0)
        x, f, g = xn, fn, gn
        if stalled:
            pgmax = float(np.max(np.abs(_projected(g, x, lo))))
            if pgmax < accept_gtol:
                return QuasiNewtonResult(x, f, g, True, it, pgmax)
    pg = _projected(g, x, lo)
    return QuasiNewtonResult(x, f, g, bool(np.max(np.abs(pg)) < gtol), it, float(np.max(np.abs(pg))))
