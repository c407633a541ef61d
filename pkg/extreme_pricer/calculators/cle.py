"""Pairwise composite-likelihood estimation of Schlather dependence parameters.

The composite log-likelihood sums bivariate log-densities over every site
pair and every replicate:

    l_C(theta) = sum_n sum_{i<j} log f(z_ni, z_nj; rho(||x_i - x_j||; theta)),

with ``theta = (c2, nu)``.  The maximizer is found by simplex search in
log coordinates (logistic for the powered-exponential smooth, which is
capped at 2).  Uncertainty uses the sandwich ``H^-1 J H^-1`` where ``H`` is
minus the summed Hessian of the pair terms and ``J`` the summed outer
product of their scores.  Model comparison uses

    CLIC = -2 l_C(theta_hat) - tr(J H^-1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import ConfigError, DomainError, FitError, NumericalError, ShapeError
from .numerics import (
    LOG_SENTINEL,
    central_gradient,
    central_hessian,
    number_or_nan,
    relative_steps,
    simplex_minimize,
)
from .spatial import (
    FAMILIES,
    NATIVE_SCALE,
    CorrelationModel,
    EventMatrix,
    SiteSet,
    correlation_values,
    schlather_bivariate_logpdf,
)

logger = logging.getLogger(__name__)

MIN_PAIR_TERMS = 10
MAX_CONDITION = 1e12
SCORE_GROUPINGS = ("term", "replicate")
SANDWICH_MODES = ("require", "try", "skip")


@dataclass(frozen=True, eq=False)
class CompositeFit:
    """Maximum composite likelihood estimate with sandwich uncertainty."""

    family: str
    c2: float
    nu: float
    H: np.ndarray
    J: np.ndarray
    covariance: np.ndarray
    std_errors: Dict[str, float]
    loglik: float
    n_pairs: int
    n_replicates: int
    iterations: int = 0
    converged: bool = True
    score_grouping: str = "term"
    sandwich_error: str = ""

    @property
    def theta_hat(self) -> Tuple[float, float]:
        return (self.c2, self.nu)

    @property
    def has_sandwich(self) -> bool:
        """True when ``H``, ``J`` and the covariance were computed."""
        return not self.sandwich_error and bool(np.all(np.isfinite(self.H)))

    @property
    def model(self) -> CorrelationModel:
        return CorrelationModel(self.family, self.c2, self.nu)

    def to_dict(self) -> Dict:
        return {
            "family": self.family,
            "c2": self.c2,
            "nu": self.nu,
            "std_errors": dict(self.std_errors),
            "H": self.H.tolist(),
            "J": self.J.tolist(),
            "covariance": self.covariance.tolist(),
            "loglik": self.loglik,
            "n_pairs": self.n_pairs,
            "n_replicates": self.n_replicates,
            "iterations": self.iterations,
            "converged": self.converged,
            "score_grouping": self.score_grouping,
            "sandwich_error": self.sandwich_error,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CompositeFit":
        return cls(
            family=data["family"],
            c2=float(data["c2"]),
            nu=float(data["nu"]),
            H=np.asarray(data.get("H", np.full((2, 2), np.nan)), dtype=float),
            J=np.asarray(data.get("J", np.full((2, 2), np.nan)), dtype=float),
            covariance=np.asarray(data.get("covariance", np.full((2, 2), np.nan)), dtype=float),
            std_errors={k: number_or_nan(v) for k, v in data.get("std_errors", {}).items()},
            loglik=number_or_nan(data.get("loglik")),
            n_pairs=int(data.get("n_pairs", 0)),
            n_replicates=int(data.get("n_replicates", 0)),
            iterations=int(data.get("iterations", 0)),
            converged=bool(data.get("converged", True)),
            score_grouping=data.get("score_grouping", "term"),
            sandwich_error=str(data.get("sandwich_error", "")),
        )


@dataclass(frozen=True)
class ClicScore:
    value: float
    penalty: float
    fit: CompositeFit


class _PairData:
    """Replicate values split into the two members of every site pair."""

    def __init__(self, data: Union[EventMatrix, np.ndarray], sites: SiteSet):
        if isinstance(data, EventMatrix):
            if data.scale == NATIVE_SCALE:
                raise ConfigError("composite likelihood needs unit-Fréchet data, got native-scale events")
            values = data.values
        else:
            values = np.atleast_2d(np.asarray(data, dtype=float))
        if values.shape[1] != len(sites):
            raise ShapeError(f"{values.shape[1]} data columns for {len(sites)} sites")
        if len(sites) < 2:
            raise ConfigError("composite likelihood needs at least two sites")
        if values.shape[0] < 1:
            raise ConfigError("composite likelihood needs at least one replicate")
        if not np.all(values > 0) or not np.all(np.isfinite(values)):
            raise DomainError("unit-Fréchet data must be positive and finite")
        i, j = sites.pairs()
        self.z1 = values[:, i]
        self.z2 = values[:, j]
        self.h = sites.pair_distances()
        self.n_replicates = values.shape[0]
        self.n_pairs = self.h.size

    def terms(self, family: str, c2: float, nu: float) -> np.ndarray:
        rho = correlation_values(family, c2, nu, self.h)
        return schlather_bivariate_logpdf(self.z1, self.z2, rho[None, :])

    def loglik(self, family: str, c2: float, nu: float) -> float:
        terms = self.terms(family, c2, nu)
        if not np.all(np.isfinite(terms)):
            return LOG_SENTINEL
        return float(np.sum(terms))


def pairwise_terms(data: Union[EventMatrix, np.ndarray], sites: SiteSet, model: CorrelationModel) -> np.ndarray:
    """Matrix of ``log f`` values, one row per replicate and one column per pair."""
    return _PairData(data, sites).terms(model.family, model.c2, model.nu)


def pairwise_loglik(data: Union[EventMatrix, np.ndarray], sites: SiteSet, model: CorrelationModel) -> float:
    """Composite log-likelihood; non-finite terms collapse to ``LOG_SENTINEL``."""
    return _PairData(data, sites).loglik(model.family, model.c2, model.nu)


def _natural(eta: np.ndarray, family: str) -> Tuple[float, float]:
    c2 = float(np.exp(eta[0]))
    if family == "powered-exponential":
        nu = float(2.0 / (1.0 + np.exp(-eta[1])))
    else:
        nu = float(np.exp(eta[1]))
    return c2, nu


def _working(c2: float, nu: float, family: str) -> np.ndarray:
    if family == "powered-exponential":
        nu = min(max(nu, 1e-6), 2.0 - 1e-6)
        return np.array([np.log(c2), np.log(nu / (2.0 - nu))])
    return np.array([np.log(c2), np.log(nu)])


def _sandwich(pairs: _PairData, family: str, theta: np.ndarray, score_grouping: str):
    if score_grouping not in SCORE_GROUPINGS:
        raise ConfigError(f"score grouping must be one of {SCORE_GROUPINGS}")

    def total(x):
        return pairs.loglik(family, x[0], x[1])

    def terms(x):
        return pairs.terms(family, x[0], x[1])

    H = -central_hessian(total, theta, relative_steps(theta, 1e-4))
    scores = central_gradient(terms, theta, relative_steps(theta, 1e-5))
    if score_grouping == "term":
        J = np.einsum("npa,npb->ab", scores, scores)
    else:
        per_rep = scores.sum(axis=1)
        J = per_rep.T @ per_rep
    J = 0.5 * (J + J.T)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(J))):
        raise NumericalError("non-finite derivatives of the composite likelihood at the estimate")
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"composite Hessian is singular (condition number {cond:.3g})")
    Hinv = np.linalg.inv(H)
    cov = Hinv @ J @ Hinv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return H, J, cov, se


def sandwich_variance(
    data: Union[EventMatrix, np.ndarray],
    sites: SiteSet,
    family: str,
    theta_hat: Sequence[float],
    score_grouping: str = "term",
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(H, J, covariance, standard errors)`` at ``theta_hat = (c2, nu)``.

    Scores use central differences with step ``1e-5 * max(1, |theta|)``,
    the Hessian nested central differences with step ``1e-4 * max(1, |theta|)``.
    """
    return _sandwich(_PairData(data, sites), family, np.asarray(theta_hat, dtype=float), score_grouping)


def _default_init(sites: SiteSet, family: str) -> Tuple[float, float]:
    h = sites.pair_distances()
    c2 = float(np.median(h[h > 0])) if np.any(h > 0) else 1.0
    return c2, 1.0


def fit_maxstable(
    data: Union[EventMatrix, np.ndarray],
    sites: SiteSet,
    family: str,
    init: Optional[Tuple[float, float]] = None,
    score_grouping: str = "term",
    max_iter: int = 2000,
    sandwich: str = "require",
) -> CompositeFit:
    """Maximum composite likelihood fit of a Schlather model.

    Parameters
    ----------
    data : EventMatrix or array
        ``N x K`` replicates on the unit-Fréchet scale.
    sites : SiteSet
        Coordinates of the ``K`` columns.
    family : str
        One of :data:`~extreme_pricer.calculators.spatial.FAMILIES`.
    init : (c2, nu), optional
        Starting point; defaults to the median pair distance and ``nu = 1``.
    sandwich : {"require", "try", "skip"}
        With ``"try"`` a singular composite Hessian leaves NaN matrices and
        the reason in ``CompositeFit.sandwich_error`` instead of raising;
        ``"skip"`` returns the point estimate only.

    Raises
    ------
    FitError
        If the simplex does not converge; ``best`` holds the last ``(c2, nu)``.
    NumericalError
        If ``sandwich="require"`` and the composite Hessian is singular.
    """
    if family not in FAMILIES:
        raise DomainError(f"unknown correlation family '{family}'")
    if sandwich not in SANDWICH_MODES:
        raise ConfigError(f"sandwich must be one of {SANDWICH_MODES}")
    pairs = _PairData(data, sites)
    if pairs.n_pairs * pairs.n_replicates < MIN_PAIR_TERMS:
        raise ConfigError(
            f"only {pairs.n_pairs * pairs.n_replicates} pair terms; need at least {MIN_PAIR_TERMS}"
        )
    c2_0, nu_0 = init if init is not None else _default_init(sites, family)
    x0 = _working(float(c2_0), float(nu_0), family)

    def objective(eta):
        c2, nu = _natural(eta, family)
        if not (np.isfinite(c2) and c2 > 0 and np.isfinite(nu) and nu > 0):
            return -LOG_SENTINEL
        return -pairs.loglik(family, c2, nu)

    res = simplex_minimize(objective, x0, steps=np.array([0.3, 0.3]), max_iter=max_iter)
    c2_hat, nu_hat = _natural(res.x, family)
    if not res.converged or res.fun >= -LOG_SENTINEL:
        raise FitError(
            f"composite likelihood fit ({family}) did not converge: {res.message}",
            best=(c2_hat, nu_hat),
            diagnostics={"iterations": res.iterations},
        )
    theta = np.array([c2_hat, nu_hat])
    sandwich_error = ""
    if sandwich == "skip":
        H = J = cov = np.full((2, 2), np.nan)
        se = np.full(2, np.nan)
        sandwich_error = "not computed"
    else:
        try:
            H, J, cov, se = _sandwich(pairs, family, theta, score_grouping)
        except NumericalError as exc:
            if sandwich == "require":
                raise
            logger.warning("%s fit at c2=%.4g nu=%.4g has no sandwich: %s", family, c2_hat, nu_hat, exc)
            H = J = cov = np.full((2, 2), np.nan)
            se = np.full(2, np.nan)
            sandwich_error = str(exc)
    logger.info("%s fit: c2=%.4g nu=%.4g after %d iterations", family, c2_hat, nu_hat, res.iterations)
    return CompositeFit(
        family=family,
        c2=c2_hat,
        nu=nu_hat,
        H=H,
        J=J,
        covariance=cov,
        std_errors={"c2": float(se[0]), "nu": float(se[1])},
        loglik=-res.fun,
        n_pairs=pairs.n_pairs,
        n_replicates=pairs.n_replicates,
        iterations=res.iterations,
        converged=True,
        score_grouping=score_grouping,
        sandwich_error=sandwich_error,
    )


def clic(fit: CompositeFit) -> ClicScore:
    """Composite likelihood information criterion, lower is better.

    The penalty ``tr(J H^-1)`` is subtracted once; ``ClicScore.penalty``
    keeps it so the ``+2 tr`` convention can be recomputed as
    ``value + 3 * penalty``.
    """
    if not fit.has_sandwich:
        raise NumericalError(f"{fit.family} fit has no sandwich matrices: {fit.sandwich_error or 'NaN'}")
    cond = np.linalg.cond(fit.H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"composite Hessian is singular (condition number {cond:.3g})")
    penalty = float(np.trace(fit.J @ np.linalg.inv(fit.H)))
    return ClicScore(value=-2.0 * fit.loglik - penalty, penalty=penalty, fit=fit)


def model_select(
    data: Union[EventMatrix, np.ndarray],
    sites: SiteSet,
    families: Sequence[str],
    init: Optional[Tuple[float, float]] = None,
    score_grouping: str = "term",
) -> Tuple[CompositeFit, pd.DataFrame]:
    """Fit each family and keep the lowest CLIC.

    Ties go to the fit that needed fewer simplex iterations, then to the
    earlier family in ``families``.  Families that fail are listed in the
    score table with their error and skipped.
    """
    if not families:
        raise ConfigError("model selection needs at least one family")
    rows: List[Dict] = []
    scored = []
    for order, family in enumerate(families):
        try:
            fit = fit_maxstable(data, sites, family, init=init, score_grouping=score_grouping)
            score = clic(fit)
        except (FitError, NumericalError) as exc:
            logger.warning("%s fit failed: %s", family, exc)
            rows.append({"family": family, "error": str(exc)})
            continue
        scored.append((score.value, fit.iterations, order, len(rows), fit))
        rows.append({
            "family": family,
            "c2": fit.c2,
            "nu": fit.nu,
            "se_c2": fit.std_errors["c2"],
            "se_nu": fit.std_errors["nu"],
            "loglik": fit.loglik,
            "penalty": score.penalty,
            "clic": score.value,
            "iterations": fit.iterations,
            "error": "",
        })
    if not scored:
        raise FitError("every correlation family failed to fit",
                       diagnostics={r["family"]: r["error"] for r in rows})
    _, _, _, best_row, best = min(scored, key=lambda s: (s[0], s[1], s[2]))
    table = pd.DataFrame(rows, columns=[
        "family", "c2", "nu", "se_c2", "se_nu", "loglik", "penalty", "clic", "iterations", "error",
    ])
    table["selected"] = table.index == best_row
    return best, table


__all__ = [
    "SANDWICH_MODES",
    "CompositeFit",
    "ClicScore",
    "pairwise_terms",
    "pairwise_loglik",
    "sandwich_variance",
    "fit_maxstable",
    "clic",
    "model_select",
]
