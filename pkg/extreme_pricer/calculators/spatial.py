"""Spatial dependence of extremes: correlation families and the Schlather process.

The Schlather (extremal Gaussian) process builds a max-stable field with
unit-Fréchet margins from a Poisson point process and replicated standard
Gaussian fields ``Y_i``:

    Z(x) = max_i w_i max(0, Y_i(x)),   w_i = 1 / (delta * Gamma_i),

where ``Gamma_i`` are the arrival times of a unit-rate Poisson process and
``delta = E max(0, Y) = 1/sqrt(2 pi)``.  Dependence is controlled by the
correlation function ``rho(h)`` of ``Y``, taken from the Whittle-Matérn,
Cauchy or powered-exponential families with the nugget fixed at 1.

For unit-Fréchet ``z1, z2`` and ``u = 1/z1``, ``v = 1/z2`` the bivariate
distribution function is ``exp(-V)`` with

    V = (u + v + sqrt(u^2 + v^2 - 2 rho u v)) / 2,

which is the usual Schlather form rewritten in reciprocal coordinates.

Example
-------

>>> model = CorrelationModel("cauchy", c2=1.0, nu=1.0)
>>> correlation(model, 1.0)
0.5
>>> round(schlather_bivariate_cdf(1.0, 1.0, 0.0), 5)
0.18139
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special
from scipy.spatial.distance import cdist

from ..errors import ConfigError, DomainError, NumericalError, ShapeError
from .gev import FittedGev, from_unit_frechet, to_unit_frechet

logger = logging.getLogger(__name__)

FAMILIES = ("whittle-matern", "cauchy", "powered-exponential")

DELTA = 1.0 / np.sqrt(2.0 * np.pi)
TRUNCATION = 3.5
MAX_SPECTRAL_POINTS = 10_000
JITTER_START = 1e-10
JITTER_MAX = 1e-6

_BLOCK = 32
_CHUNK = 2048

UNIT_FRECHET_SCALE = "unit-frechet"
NATIVE_SCALE = "native"


@dataclass(frozen=True)
class CorrelationModel:
    """Correlation of the underlying Gaussian process (nugget ``c1`` fixed at 1)."""

    family: str
    c2: float
    nu: float
    c1: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown correlation family '{self.family}', expected one of {FAMILIES}")
        if self.c1 != 1.0:
            raise DomainError("the nugget c1 is fixed at 1")
        if not (np.isfinite(self.c2) and self.c2 > 0):
            raise DomainError(f"range c2 must be positive, got {self.c2}")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise DomainError(f"smooth nu must be positive, got {self.nu}")
        if self.family == "powered-exponential" and self.nu > 2:
            raise DomainError(f"powered-exponential smooth must satisfy 0 < nu <= 2, got {self.nu}")


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Ordered planar site coordinates with optional labels."""

    coords: np.ndarray
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if coords.shape[0] < 1:
            raise ConfigError("a site set needs at least one site")
        if not np.all(np.isfinite(coords)):
            raise ConfigError("site coordinates must be finite")
        labels = tuple(str(x) for x in self.labels) or tuple(f"site{k + 1}" for k in range(coords.shape[0]))
        if len(labels) != coords.shape[0]:
            raise ShapeError(f"{len(labels)} labels for {coords.shape[0]} sites")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def distances(self) -> np.ndarray:
        """Euclidean distance matrix."""
        return cdist(self.coords, self.coords)

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Index arrays ``(i, j)`` of all pairs ``i < j`` in row-major order."""
        return np.triu_indices(len(self), k=1)

    def pair_distances(self) -> np.ndarray:
        i, j = self.pairs()
        return np.linalg.norm(self.coords[i] - self.coords[j], axis=1)

    def subset(self, keys: Sequence[Union[int, str]]) -> "SiteSet":
        idx = [self.labels.index(k) if isinstance(k, str) else int(k) for k in keys]
        return SiteSet(self.coords[idx], tuple(self.labels[i] for i in idx))

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "SiteSet":
        """Build from a table with ``site, x, y`` columns."""
        missing = {"site", "x", "y"} - set(df.columns)
        if missing:
            raise ConfigError(f"site table is missing columns {sorted(missing)}")
        return cls(df[["x", "y"]].to_numpy(dtype=float), tuple(df["site"].astype(str)))


@dataclass(frozen=True, eq=False)
class EventMatrix:
    """``I`` simulated (or observed) events at ``K`` sites."""

    values: np.ndarray
    scale: str
    sites: Optional[SiteSet] = None
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] < 1:
            raise ConfigError("an event matrix needs at least one row")
        if self.scale not in (UNIT_FRECHET_SCALE, NATIVE_SCALE):
            raise ConfigError(f"unknown event scale '{self.scale}'")
        if self.sites is not None and len(self.sites) != values.shape[1]:
            raise ShapeError(f"{values.shape[1]} event columns for {len(self.sites)} sites")
        if self.scale == UNIT_FRECHET_SCALE and not np.all(values > 0):
            raise DomainError("unit-Fréchet events must be positive")
        object.__setattr__(self, "values", values)

    @property
    def n_events(self) -> int:
        return self.values.shape[0]

    @property
    def n_sites(self) -> int:
        return self.values.shape[1]

    def labels(self) -> Tuple[str, ...]:
        if self.sites is not None:
            return self.sites.labels
        return tuple(f"site{k + 1}" for k in range(self.n_sites))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.labels()))

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path


def correlation_values(family: str, c2: float, nu: float, h: np.ndarray) -> np.ndarray:
    """Family formula without parameter validation (used for finite differences)."""
    x = np.asarray(h, dtype=float) / c2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        if family == "whittle-matern":
            val = 2.0 ** (1.0 - nu) / special.gamma(nu) * np.power(x, nu) * special.kv(nu, x)
            val = np.where(x > 0, np.nan_to_num(val, nan=0.0), 1.0)
            return np.clip(val, 0.0, 1.0)
        if family == "cauchy":
            return np.power(1.0 + x * x, -nu)
        return np.exp(-np.power(x, nu))


def correlation(model: CorrelationModel, h) -> Union[float, np.ndarray]:
    """Correlation ``rho(h)`` of the Gaussian process at distance ``h``."""
    arr = np.asarray(h, dtype=float)
    if not np.all(arr >= 0):
        raise DomainError("distances must be nonnegative")
    val = correlation_values(model.family, model.c2, model.nu, arr)
    return float(val) if np.ndim(h) == 0 else val


def theta_from_correlation(rho) -> Union[float, np.ndarray]:
    """Extremal coefficient ``1 + sqrt((1 - rho) / 2)`` of a Schlather pair."""
    rho = np.asarray(rho, dtype=float)
    out = 1.0 + np.sqrt(np.clip((1.0 - rho) / 2.0, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def extremal_coefficient(model: CorrelationModel, h) -> Union[float, np.ndarray]:
    """Pairwise extremal coefficient ``theta(h)`` in [1, 2]."""
    return theta_from_correlation(correlation(model, h))


def empirical_extremal_coefficient(z1: Sequence[float], z2: Sequence[float]) -> float:
    """F-madogram estimate of the extremal coefficient of two unit-Fréchet columns."""
    f1 = np.exp(-1.0 / np.asarray(z1, dtype=float))
    f2 = np.exp(-1.0 / np.asarray(z2, dtype=float))
    mado = 0.5 * np.mean(np.abs(f1 - f2))
    return float((1.0 + 2.0 * mado) / (1.0 - 2.0 * mado))


def _check_bivariate(z1, z2, rho):
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise DomainError("bivariate arguments must be finite")
    if not (np.all(z1 > 0) and np.all(z2 > 0)):
        raise DomainError("bivariate arguments must be positive")
    if not np.all(np.abs(rho) <= 1.0):
        raise DomainError("correlation must lie in [-1, 1]")
    return z1, z2, rho


def _exponent(u, v, rho):
    d2 = np.clip(u * u + v * v - 2.0 * rho * u * v, 0.0, None)
    d = np.sqrt(d2)
    return 0.5 * (u + v + d), d


def schlather_bivariate_cdf(z1, z2, rho) -> Union[float, np.ndarray]:
    """P(Z1 <= z1, Z2 <= z2) for a Schlather pair with Gaussian correlation ``rho``."""
    scalar = np.ndim(z1) == 0 and np.ndim(z2) == 0 and np.ndim(rho) == 0
    z1, z2, rho = _check_bivariate(z1, z2, rho)
    V, _ = _exponent(1.0 / z1, 1.0 / z2, rho)
    out = np.exp(-V)
    return float(out) if scalar else out


def schlather_bivariate_logpdf(z1, z2, rho) -> np.ndarray:
    """Log of the mixed partial derivative of the bivariate distribution function.

    With ``u = 1/z1``, ``v = 1/z2`` and ``D = sqrt(u^2 + v^2 - 2 rho u v)``:

        f = u^2 v^2 [ (1 + (u - rho v)/D)(1 + (v - rho u)/D) / 4
                      + (1 - rho^2) u v / (2 D^3) ] exp(-V).

    ``D = 0`` only occurs on the diagonal under complete dependence, where
    the pair has no density; ``-inf`` is returned there.
    """
    z1, z2, rho = _check_bivariate(z1, z2, rho)
    u, v = 1.0 / z1, 1.0 / z2
    V, d = _exponent(u, v, rho)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = 0.25 * (1.0 + (u - rho * v) / d) * (1.0 + (v - rho * u) / d)
        b = 0.5 * (1.0 - rho * rho) * u * v / d ** 3
        bracket = np.where(d > 0, a + b, 0.0)
        logf = 2.0 * np.log(u) + 2.0 * np.log(v) + np.log(bracket) - V
    return np.where(np.isnan(logf), -np.inf, logf)


def schlather_bivariate_pdf(z1, z2, rho) -> Union[float, np.ndarray]:
    """Bivariate Schlather density on unit-Fréchet margins."""
    scalar = np.ndim(z1) == 0 and np.ndim(z2) == 0 and np.ndim(rho) == 0
    out = np.exp(schlather_bivariate_logpdf(z1, z2, rho))
    return float(out) if scalar else out


def correlation_matrix(sites: SiteSet, model: CorrelationModel) -> np.ndarray:
    return np.asarray(correlation(model, sites.distances()))


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    jitter = JITTER_START
    eye = np.eye(cov.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            logger.debug("covariance factorization failed with jitter %.0e; escalating", jitter)
            jitter *= 10.0
    raise NumericalError(
        f"covariance matrix of {cov.shape[0]} sites is not positive definite even with jitter {JITTER_MAX:.0e}"
    )


class _FieldFactor:
    """Cholesky factor over distinct coordinates; coincident sites share a value."""

    def __init__(self, sites: SiteSet, model: CorrelationModel):
        unique, inverse = np.unique(sites.coords, axis=0, return_inverse=True)
        self.inverse = np.asarray(inverse).reshape(-1)
        self.n_unique = unique.shape[0]
        corr = np.asarray(correlation(model, cdist(unique, unique)))
        self.chol = _cholesky_with_jitter(corr)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        fields = rng.standard_normal((n, self.n_unique)) @ self.chol.T
        return fields[:, self.inverse]


def _event_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def gaussian_field_sample(sites: SiteSet, model: CorrelationModel, seed: Optional[int] = None) -> np.ndarray:
    """One zero-mean, unit-variance Gaussian vector with correlation ``rho(||x_i - x_j||)``."""
    factor = _FieldFactor(sites, model)
    return factor.draw(np.random.default_rng(seed), 1)[0]


def gaussian_field_samples(
    sites: SiteSet, model: CorrelationModel, n: int, seed: Optional[int] = None
) -> np.ndarray:
    """``n`` independent Gaussian vectors sharing one factorization."""
    factor = _FieldFactor(sites, model)
    return factor.draw(np.random.default_rng(seed), n)


def _simulate_event(rng: np.random.Generator, factor: _FieldFactor, n_sites: int,
                    truncation: float, max_points: int) -> np.ndarray:
    z = np.zeros(n_sites)
    arrival = 0.0
    drawn = 0
    while drawn < max_points:
        block = min(_BLOCK, max_points - drawn)
        gammas = arrival + np.cumsum(rng.standard_exponential(block))
        arrival = gammas[-1]
        w = 1.0 / (DELTA * gammas)
        contrib = w[:, None] * np.maximum(factor.draw(rng, block), 0.0)
        running = np.maximum.accumulate(np.vstack([z, contrib]), axis=0)
        # point i is skipped once w_i * C falls below the smallest Z so far;
        # w is decreasing and min Z nondecreasing, so all later points are too
        stop = np.flatnonzero(w * truncation < running[:-1].min(axis=1))
        if stop.size:
            return running[stop[0]]
        z = running[-1]
        drawn += block
    return z


def simulate_schlather(
    sites: SiteSet,
    model: CorrelationModel,
    n_events: int,
    seed: Optional[int] = None,
    workers: int = 1,
    truncation: float = TRUNCATION,
    max_points: int = MAX_SPECTRAL_POINTS,
) -> EventMatrix:
    """Simulate ``n_events`` Schlather events on the unit-Fréchet scale.

    Each event draws from its own generator seeded by ``(seed, event index)``,
    so the output does not depend on ``workers`` or on chunk scheduling.
    The Gaussian fields are truncated at ``truncation`` for the stopping
    rule, which makes the simulator approximate in the far tail.
    """
    if n_events < 1:
        raise DomainError(f"need at least one event, got {n_events}")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    factor = _FieldFactor(sites, model)
    k = len(sites)
    out = np.empty((n_events, k))

    def run(bounds):
        lo, hi = bounds
        for i in range(lo, hi):
            out[i] = _simulate_event(_event_rng(seed, i), factor, k, truncation, max_points)

    chunks = [(lo, min(lo + _CHUNK, n_events)) for lo in range(0, n_events, _CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))
    else:
        for chunk in chunks:
            run(chunk)

    # a row that never received a positive contribution is effectively +0
    out = np.maximum(out, np.finfo(float).tiny)
    logger.info("simulated %d Schlather events at %d sites (%s)", n_events, k, model.family)
    return EventMatrix(out, UNIT_FRECHET_SCALE, sites, seed,
                       meta={"family": model.family, "c2": model.c2, "nu": model.nu})


def _check_margins(events: EventMatrix, margins: Sequence[FittedGev], prediction_year) -> None:
    if len(margins) != events.n_sites:
        raise ShapeError(f"{len(margins)} margins for {events.n_sites} sites")
    if prediction_year is None and any(m.trend.enabled for m in margins):
        raise ConfigError("prediction_year is required when a margin carries a trend")


def to_native_scale(
    events: EventMatrix, margins: Sequence[FittedGev], prediction_year: Optional[float] = None
) -> EventMatrix:
    """Push unit-Fréchet events through each site's fitted GEV margin."""
    if events.scale != UNIT_FRECHET_SCALE:
        raise ConfigError("events are already on the native scale")
    _check_margins(events, margins, prediction_year)
    cols = [
        np.asarray(from_unit_frechet(events.values[:, k], m.params(prediction_year)))
        for k, m in enumerate(margins)
    ]
    return EventMatrix(np.column_stack(cols), NATIVE_SCALE, events.sites, events.seed, dict(events.meta))


def to_unit_frechet_scale(
    events: EventMatrix, margins: Sequence[FittedGev], prediction_year: Optional[float] = None
) -> EventMatrix:
    """Inverse of :func:`to_native_scale`."""
    if events.scale != NATIVE_SCALE:
        raise ConfigError("events are already on the unit-Fréchet scale")
    _check_margins(events, margins, prediction_year)
    cols = [
        np.asarray(to_unit_frechet(events.values[:, k], m.params(prediction_year)))
        for k, m in enumerate(margins)
    ]
    return EventMatrix(np.column_stack(cols), UNIT_FRECHET_SCALE, events.sites, events.seed, dict(events.meta))


__all__ = [
    "FAMILIES",
    "DELTA",
    "TRUNCATION",
    "CorrelationModel",
    "SiteSet",
    "EventMatrix",
    "correlation_values",
    "correlation",
    "theta_from_correlation",
    "extremal_coefficient",
    "empirical_extremal_coefficient",
    "schlather_bivariate_cdf",
    "schlather_bivariate_logpdf",
    "schlather_bivariate_pdf",
    "correlation_matrix",
    "gaussian_field_sample",
    "gaussian_field_samples",
    "simulate_schlather",
    "to_native_scale",
    "to_unit_frechet_scale",
]
