"""Generalized Extreme Value (GEV) distribution utilities.

This module evaluates, samples, inverts and fits the three-parameter GEV law
of block maxima

    G(m) = exp{-(1 + xi (m - mu) / sigma)_+^(-1/xi)}

with location ``mu``, scale ``sigma`` and shape ``xi``.  Shapes with
``|xi| < GUMBEL_SWITCH`` are treated as the Gumbel limit
``exp(-exp(-(m - mu) / sigma))`` to avoid cancellation near zero.  Fits may
carry a linear trend on the location, ``mu = mu1 + mu2 * t``, where ``t`` is
the year centred at the mean year of the fitting sample.

The transforms :func:`to_unit_frechet` and :func:`from_unit_frechet` move
data between a fitted margin and the unit-Fréchet scale ``exp(-1/z)`` used by
the spatial dependence models.

Example
-------

>>> unit = GevParams(mu=1.0, sigma=1.0, xi=1.0)
>>> round(gev_cdf(1.0, unit), 6)
0.367879
>>> round(return_level(unit, 2.0), 6)
1.442695
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..errors import ConfigError, DomainError, FitError
from .numerics import LOG_SENTINEL, central_hessian, number_or_nan, relative_steps, simplex_minimize

logger = logging.getLogger(__name__)

GUMBEL_SWITCH = 1e-8
EULER_GAMMA = 0.5772
DEFAULT_MIN_MAXIMA = 20
MAX_STEP_HALVINGS = 30

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class GevParams:
    """Location, scale and shape of a GEV margin."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not all(np.isfinite([self.mu, self.sigma, self.xi])):
            raise DomainError(f"GEV parameters must be finite, got {self}")
        if self.sigma <= 0:
            raise DomainError(f"GEV scale must be positive, got sigma={self.sigma}")

    @property
    def is_gumbel(self) -> bool:
        return abs(self.xi) < GUMBEL_SWITCH

    @property
    def upper_bound(self) -> float:
        """Upper end of the support (``inf`` unless ``xi < 0``)."""
        if self.xi <= -GUMBEL_SWITCH:
            return self.mu - self.sigma / self.xi
        return float("inf")

    @property
    def lower_bound(self) -> float:
        """Lower end of the support (``-inf`` unless ``xi > 0``)."""
        if self.xi >= GUMBEL_SWITCH:
            return self.mu - self.sigma / self.xi
        return float("-inf")


UNIT_FRECHET = GevParams(mu=1.0, sigma=1.0, xi=1.0)

# Phoenix airport 2011 summer-maximum margin.  The location is back-solved
# from the flat-contract premiums at strikes 114 and 118 using the published
# scale and shape; both strikes give the same location to 4e-4 degrees F.
PHOENIX_2011 = GevParams(mu=114.6924, sigma=1.931, xi=-0.090)


@dataclass(frozen=True)
class TrendSpec:
    """Optional linear time trend on the GEV location.

    ``center`` is the mean year of the fitting sample; it is filled in by
    :func:`fit_gev` and reused to code prediction years.
    """

    enabled: bool = False
    center: Optional[float] = None

    def code(self, year: ArrayLike) -> np.ndarray:
        if self.center is None:
            raise ConfigError("trend centre is unknown; fit the model first")
        return np.asarray(year, dtype=float) - self.center


@dataclass(frozen=True)
class FittedGev:
    """Maximum-likelihood GEV fit with optional location trend."""

    mu1: float
    mu2: float
    sigma: float
    xi: float
    std_errors: Dict[str, float]
    loglik: float
    n: int
    trend: TrendSpec = field(default_factory=TrendSpec)
    converged: bool = True
    iterations: int = 0
    message: str = ""

    def location(self, year: Optional[ArrayLike] = None) -> np.ndarray:
        if not self.trend.enabled:
            return np.asarray(self.mu1, dtype=float)
        if year is None:
            raise ConfigError("a prediction year is required for a trended margin")
        return self.mu1 + self.mu2 * self.trend.code(year)

    def params(self, year: Optional[float] = None) -> GevParams:
        """GEV parameters in force for ``year`` (ignored without a trend)."""
        return GevParams(mu=float(self.location(year)), sigma=self.sigma, xi=self.xi)

    @property
    def mu2_zscore(self) -> Optional[float]:
        """Wald statistic of the trend slope."""
        if not self.trend.enabled:
            return None
        se = self.std_errors.get("mu2", float("nan"))
        if not se > 0:
            return None
        return self.mu2 / se

    @property
    def mu2_pvalue(self) -> Optional[float]:
        """Two-sided Wald p-value for the trend slope."""
        z = self.mu2_zscore
        return None if z is None else float(2.0 * stats.norm.sf(abs(z)))

    def to_dict(self) -> Dict:
        return {
            "mu1": self.mu1,
            "mu2": self.mu2,
            "sigma": self.sigma,
            "xi": self.xi,
            "std_errors": dict(self.std_errors),
            "loglik": self.loglik,
            "n": self.n,
            "trend": {"enabled": self.trend.enabled, "center": self.trend.center},
            "mu2_zscore": self.mu2_zscore,
            "mu2_pvalue": self.mu2_pvalue,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FittedGev":
        trend = data.get("trend", {}) or {}
        return cls(
            mu1=float(data["mu1"]),
            mu2=float(data.get("mu2", 0.0)),
            sigma=float(data["sigma"]),
            xi=float(data["xi"]),
            std_errors={k: number_or_nan(v) for k, v in data.get("std_errors", {}).items()},
            loglik=number_or_nan(data.get("loglik")),
            n=int(data.get("n", 0)),
            trend=TrendSpec(bool(trend.get("enabled", False)), trend.get("center")),
            converged=bool(data.get("converged", True)),
            iterations=int(data.get("iterations", 0)),
        )

    @classmethod
    def fixed(cls, params: GevParams) -> "FittedGev":
        """Wrap known parameters as an untrended 'fit' (used by simulations)."""
        return cls(params.mu, 0.0, params.sigma, params.xi, {}, float("nan"), 0)


def _out(values: np.ndarray, like) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(like) == 0 else values


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise DomainError("GEV arguments must be finite")


def _reduced(m: np.ndarray, params: GevParams) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``z = (m - mu) / sigma`` and ``1 + xi z``."""
    z = (m - params.mu) / params.sigma
    return z, 1.0 + params.xi * z


def gev_cdf(m: ArrayLike, params: GevParams) -> Union[float, np.ndarray]:
    """Distribution function G(m)."""
    arr = np.asarray(m, dtype=float)
    _check_finite(arr)
    z, t = _reduced(arr, params)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if params.is_gumbel:
            out = np.exp(-np.exp(-z))
        else:
            inside = np.exp(-np.power(np.where(t > 0, t, 1.0), -1.0 / params.xi))
            outside = 0.0 if params.xi > 0 else 1.0
            out = np.where(t > 0, inside, outside)
    return _out(out, m)


def _gev_logpdf(m: np.ndarray, mu: np.ndarray, sigma: float, xi: float) -> np.ndarray:
    z = (m - mu) / sigma
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if abs(xi) < GUMBEL_SWITCH:
            return -np.log(sigma) - z - np.exp(-z)
        t = 1.0 + xi * z
        safe = np.where(t > 0, t, 1.0)
        logt = np.log(safe)
        val = -np.log(sigma) - (1.0 / xi + 1.0) * logt - np.exp(-logt / xi)
        return np.where(t > 0, val, -np.inf)


def gev_pdf(m: ArrayLike, params: GevParams) -> Union[float, np.ndarray]:
    """Density g(m); zero outside the support."""
    arr = np.asarray(m, dtype=float)
    _check_finite(arr)
    out = np.exp(_gev_logpdf(arr, params.mu, params.sigma, params.xi))
    return _out(out, m)


def gev_quantile(p: ArrayLike, params: GevParams) -> Union[float, np.ndarray]:
    """Inverse of :func:`gev_cdf` for ``0 < p < 1``."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("quantile probabilities must lie strictly inside (0, 1)")
    y = -np.log(arr)
    if params.is_gumbel:
        out = params.mu - params.sigma * np.log(y)
    else:
        out = params.mu + params.sigma * np.expm1(-params.xi * np.log(y)) / params.xi
    return _out(out, p)


def gev_sample(params: GevParams, n: int, seed: Optional[int] = None) -> np.ndarray:
    """Draw ``n`` maxima by inversion of a seeded uniform stream."""
    if n < 1:
        raise DomainError(f"sample size must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    u = np.clip(rng.random(n), np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return np.asarray(gev_quantile(u, params))


def to_unit_frechet(y: ArrayLike, params: GevParams) -> Union[float, np.ndarray]:
    """Map GEV(mu, sigma, xi) values onto the unit-Fréchet scale."""
    arr = np.asarray(y, dtype=float)
    _check_finite(arr)
    z, t = _reduced(arr, params)
    if params.is_gumbel:
        return _out(np.exp(z), y)
    if np.any(t <= 0):
        raise DomainError(
            f"value outside the GEV support (bound {params.mu - params.sigma / params.xi:.6g})"
        )
    return _out(np.exp(np.log(t) / params.xi), y)


def from_unit_frechet(u: ArrayLike, params: GevParams) -> Union[float, np.ndarray]:
    """Inverse of :func:`to_unit_frechet`."""
    arr = np.asarray(u, dtype=float)
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise DomainError("unit-Fréchet values must be positive and finite")
    logu = np.log(arr)
    if params.is_gumbel:
        out = params.mu + params.sigma * logu
    else:
        out = params.mu + params.sigma * np.expm1(params.xi * logu) / params.xi
    return _out(out, u)


def return_level(params: GevParams, period_years: ArrayLike) -> Union[float, np.ndarray]:
    """Level exceeded on average once every ``period_years`` blocks."""
    T = np.asarray(period_years, dtype=float)
    if not np.all(T > 1.0):
        raise DomainError("return periods must exceed 1")
    out = np.asarray(gev_quantile(1.0 - 1.0 / T, params))
    return _out(out, period_years)


def _negloglik(theta: np.ndarray, values: np.ndarray, t: Optional[np.ndarray]) -> float:
    """Negative log-likelihood in natural coordinates (mu1[, mu2], sigma, xi)."""
    if t is None:
        mu, sigma, xi = theta
    else:
        mu1, mu2, sigma, xi = theta
        mu = mu1 + mu2 * t
    if not sigma > 0:
        return -LOG_SENTINEL
    ll = _gev_logpdf(values, mu, sigma, xi)
    if not np.all(np.isfinite(ll)):
        return -LOG_SENTINEL
    return float(-np.sum(ll))


def _observed_information(
    theta: np.ndarray, values: np.ndarray, t: Optional[np.ndarray], best: Optional[Dict] = None
) -> np.ndarray:
    """Hessian of the negative log-likelihood at ``theta``.

    Steps start at ``1e-4 * max(1, |theta|)`` and are halved until no
    evaluation falls outside the GEV support.
    """
    if _negloglik(theta, values, t) >= -LOG_SENTINEL:
        raise FitError("estimate lies outside the GEV support", best=best)
    left = []

    def fun(x):
        val = _negloglik(x, values, t)
        if val >= -LOG_SENTINEL:
            left.append(x)
        return val

    steps = relative_steps(theta, 1e-4)
    for _ in range(MAX_STEP_HALVINGS):
        left.clear()
        hess = central_hessian(fun, theta, steps)
        if not left:
            return hess
        steps = 0.5 * steps
    raise FitError("Hessian steps keep leaving the GEV support at the estimate", best=best)


def fit_gev(
    maxima: Sequence[Tuple[float, float]],
    trend: Union[TrendSpec, bool] = False,
    min_points: int = DEFAULT_MIN_MAXIMA,
    strict: bool = True,
) -> FittedGev:
    """Fit a GEV to ``(year, value)`` block maxima by maximum likelihood.

    Parameters
    ----------
    maxima : sequence of (year, value)
        Block maxima; pairs with a missing (NaN) value are ignored.
    trend : TrendSpec or bool
        Fit ``mu = mu1 + mu2 * t`` with ``t`` the centred year.
    min_points : int
        Minimum number of non-missing maxima.
    strict : bool
        Raise :class:`FitError` when the simplex hits its iteration limit.
        With ``strict=False`` the best point is returned with
        ``converged=False``.

    Returns
    -------
    FittedGev
        Estimates, standard errors from the inverse numerical Hessian, the
        maximized log-likelihood and the trend coding used.
    """
    if isinstance(trend, bool):
        trend = TrendSpec(enabled=trend)
    pairs = np.asarray(list(maxima), dtype=float).reshape(-1, 2)
    pairs = pairs[np.isfinite(pairs[:, 1])]
    years, values = pairs[:, 0], pairs[:, 1]
    n = values.size
    if n < min_points:
        raise FitError(f"need at least {min_points} block maxima, got {n}", diagnostics={"n": n})
    if np.ptp(values) == 0:
        raise FitError("block maxima are constant; the GEV scale is not identifiable",
                       diagnostics={"n": n})

    sigma0 = np.sqrt(6.0 * np.var(values)) / np.pi
    mu0 = np.mean(values) - EULER_GAMMA * sigma0
    t = None
    if trend.enabled:
        if np.ptp(years) == 0:
            raise FitError("a trend needs more than one distinct year")
        trend = TrendSpec(enabled=True, center=float(np.mean(years)))
        t = trend.code(years)
        x0 = np.array([mu0, 0.0, np.log(sigma0), 0.1])
        steps = np.array([0.5 * sigma0, 0.1 * sigma0 / np.max(np.abs(t)), 0.1, 0.05])
    else:
        trend = TrendSpec(enabled=False)
        x0 = np.array([mu0, np.log(sigma0), 0.1])
        steps = np.array([0.5 * sigma0, 0.1, 0.05])

    def objective(x):
        natural = x.copy()
        natural[-2] = np.exp(x[-2])
        return _negloglik(natural, values, t)

    res = simplex_minimize(objective, x0, steps=steps)
    theta = res.x.copy()
    theta[-2] = np.exp(theta[-2])
    names = ["mu1", "mu2", "sigma", "xi"] if t is not None else ["mu1", "sigma", "xi"]
    if not np.isfinite(res.fun) or res.fun >= -LOG_SENTINEL:
        raise FitError("GEV likelihood optimization failed", best=dict(zip(names, theta)),
                       diagnostics={"message": res.message})
    if not res.converged:
        if strict:
            raise FitError(f"GEV fit did not converge: {res.message}",
                           best=dict(zip(names, theta)),
                           diagnostics={"iterations": res.iterations})
        logger.warning("GEV fit stopped before convergence: %s", res.message)

    hess = _observed_information(theta, values, t, best=dict(zip(names, theta)))
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise FitError("observed information is singular", best=dict(zip(names, theta))) from exc
    diag = np.diag(cov)
    if not np.all(np.isfinite(diag)) or np.any(diag < 0):
        raise FitError("observed information is not positive definite at the optimum",
                       best=dict(zip(names, theta)))
    ses = dict(zip(names, np.sqrt(diag).tolist()))

    est = dict(zip(names, theta.tolist()))
    return FittedGev(
        mu1=est["mu1"],
        mu2=est.get("mu2", 0.0),
        sigma=est["sigma"],
        xi=est["xi"],
        std_errors=ses,
        loglik=-res.fun,
        n=int(n),
        trend=trend,
        converged=res.converged,
        iterations=res.iterations,
        message=res.message,
    )


def transform_observed(maxima: Sequence[Tuple[float, float]], fit: FittedGev) -> np.ndarray:
    """Unit-Fréchet values of observed ``(year, value)`` maxima under ``fit``."""
    pairs = np.asarray(list(maxima), dtype=float).reshape(-1, 2)
    mus = np.broadcast_to(fit.location(pairs[:, 0] if fit.trend.enabled else None), pairs[:, 0].shape)
    out = np.empty(pairs.shape[0])
    for i, (mu, value) in enumerate(zip(mus, pairs[:, 1])):
        out[i] = to_unit_frechet(value, GevParams(float(mu), fit.sigma, fit.xi))
    return out


__all__ = [
    "GUMBEL_SWITCH",
    "GevParams",
    "TrendSpec",
    "FittedGev",
    "UNIT_FRECHET",
    "PHOENIX_2011",
    "gev_cdf",
    "gev_pdf",
    "gev_quantile",
    "gev_sample",
    "to_unit_frechet",
    "from_unit_frechet",
    "return_level",
    "fit_gev",
    "transform_observed",
]
