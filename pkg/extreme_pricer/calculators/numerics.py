"""Finite-difference derivatives and the simplex driver used by the fitters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

# Stand-in for log(0) so a simplex search never sees -inf.
LOG_SENTINEL = -1e300


def number_or_nan(value) -> float:
    """Float from a JSON value; ``None`` (a written NaN) reads back as NaN."""
    return float("nan") if value is None else float(value)


def relative_steps(x: Sequence[float], scale: float) -> np.ndarray:
    """Per-coordinate step ``scale * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    return scale * np.maximum(1.0, np.abs(x))


def central_gradient(fun: Callable, x: Sequence[float], steps: np.ndarray) -> np.ndarray:
    """Central-difference derivatives of ``fun`` at ``x``.

    ``fun`` may return a scalar or an array; the derivative index is the
    last axis of the result.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for i, h in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def central_hessian(fun: Callable, x: Sequence[float], steps: np.ndarray) -> np.ndarray:
    """Hessian of a scalar function by nested central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    hess = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            val = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    message: str


def simplex_minimize(
    fun: Callable[[np.ndarray], float],
    x0: Sequence[float],
    steps: Optional[Sequence[float]] = None,
    max_iter: int = 2000,
    rel_tol: float = 1e-8,
    x_tol: float = 1e-4,
) -> SimplexResult:
    """Nelder-Mead search stopping on a relative function-value spread.

    ``steps`` sets the initial simplex edge along each coordinate. The run
    counts as converged only when scipy reports success, i.e. the iteration
    and evaluation limits were not hit.
    """
    x0 = np.asarray(x0, dtype=float)
    if steps is None:
        steps = np.where(x0 != 0.0, 0.05 * np.abs(x0), 0.00025)
    simplex = np.vstack([x0] + [x0 + np.eye(x0.size)[i] * steps[i] for i in range(x0.size)])

    f0 = float(fun(x0))
    fatol = rel_tol * max(1.0, abs(f0)) if np.isfinite(f0) else rel_tol
    res = optimize.minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "maxiter": max_iter,
            "maxfev": 4 * max_iter,
            "fatol": fatol,
            "xatol": x_tol,
        },
    )
    logger.debug("simplex: %s after %d iterations (f=%.6g)", res.message, res.nit, res.fun)
    return SimplexResult(
        x=np.asarray(res.x, dtype=float),
        fun=float(res.fun),
        iterations=int(res.nit),
        evaluations=int(res.nfev),
        converged=bool(res.success),
        message=str(res.message),
    )


__all__ = [
    "LOG_SENTINEL",
    "number_or_nan",
    "relative_steps",
    "central_gradient",
    "central_hessian",
    "SimplexResult",
    "simplex_minimize",
]
