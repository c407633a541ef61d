"""Weather-derivative payoffs, premiums and portfolio risk loads.

Contracts pay on the native-scale event value ``m`` at their site:

* flat:          ``alpha * 1{m >= s}``
* proportional:  ``beta * (m - s) * 1{m >= s}``
* capped:        ``beta * min(m - s, t - s) * 1{m >= s}``

Pure premiums are expected payments.  A book of contracts is priced from
an ``I x K`` matrix of simulated native-scale events; variances and
covariances use plug-in ``1/I`` denominators.  The covariance-share risk
load of contract ``K``

    R(L_K) = lambda * (var(L_K) + 2 sum_j a_{j,K} cov(L_j, L_K)),
    a_{j,K} = E(L_K) / (E(L_j) + E(L_K)),

is renewal-additive: the loads sum to ``lambda * var(sum_k L_k)``.

Example
-------

>>> spec = PayoffSpec.capped(beta=300, strike=105, limit=110)
>>> payoff(spec, 112.0)
1500.0
>>> round(risk_loaded_premium(223.89, 618160 - 223.89 ** 2, 0.0001), 2)
280.69
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import integrate

from ..errors import ConfigError, DegenerateShareError, DomainError, ShapeError
from .gev import GevParams, gev_cdf, gev_pdf
from .spatial import UNIT_FRECHET_SCALE, EventMatrix

logger = logging.getLogger(__name__)

PAYOFF_KINDS = ("flat", "proportional", "capped")
RISK_MEASURES = ("variance", "stdev")
MIN_DRAWS = 1_000


@dataclass(frozen=True)
class PayoffSpec:
    """One contract; ``limit`` is ``inf`` unless the layer is capped."""

    kind: str
    strike: float
    alpha: float = 0.0
    beta: float = 0.0
    limit: float = math.inf
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise DomainError(f"unknown payoff type '{self.kind}', expected one of {PAYOFF_KINDS}")
        if not math.isfinite(self.strike):
            raise DomainError("strike must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("payment rates alpha and beta must be nonnegative")
        if self.kind == "capped" and not self.limit >= self.strike:
            raise DomainError(f"limit {self.limit} is below strike {self.strike}")

    @classmethod
    def flat(cls, alpha: float, strike: float, label: Optional[str] = None) -> "PayoffSpec":
        return cls("flat", float(strike), alpha=float(alpha), label=label)

    @classmethod
    def proportional(cls, beta: float, strike: float, label: Optional[str] = None) -> "PayoffSpec":
        return cls("proportional", float(strike), beta=float(beta), label=label)

    @classmethod
    def capped(cls, beta: float, strike: float, limit: float, label: Optional[str] = None) -> "PayoffSpec":
        return cls("capped", float(strike), beta=float(beta), limit=float(limit), label=label)

    def to_dict(self) -> Dict:
        out = {"type": self.kind, "strike": self.strike, "label": self.label}
        if self.kind == "flat":
            out["alpha"] = self.alpha
        else:
            out["beta"] = self.beta
        if self.kind == "capped":
            out["limit"] = self.limit if math.isfinite(self.limit) else "inf"
        return out


def payoff(spec: PayoffSpec, m) -> Union[float, np.ndarray]:
    """Payment for native event value(s) ``m``; the strike is inclusive."""
    arr = np.asarray(m, dtype=float)
    hit = arr >= spec.strike
    if spec.kind == "flat":
        out = np.where(hit, spec.alpha, 0.0)
    else:
        excess = arr - spec.strike
        if spec.kind == "capped":
            excess = np.minimum(excess, spec.limit - spec.strike)
        out = np.where(hit, spec.beta * excess, 0.0)
    return float(out) if out.ndim == 0 else out


def _native_values(events: Union[EventMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(events, EventMatrix):
        if events.scale == UNIT_FRECHET_SCALE:
            raise ConfigError("contracts pay on native-scale events; transform the simulation first")
        return events.values
    return np.atleast_2d(np.asarray(events, dtype=float))


def payment_matrix(events: Union[EventMatrix, np.ndarray], specs: Sequence[PayoffSpec]) -> np.ndarray:
    """``I x K`` payments, one contract per event column."""
    values = _native_values(events)
    if values.shape[1] != len(specs):
        raise ShapeError(f"{len(specs)} contracts for {values.shape[1]} event columns")
    if values.shape[0] < 1:
        raise ConfigError("no events to price")
    return np.column_stack([payoff(spec, values[:, k]) for k, spec in enumerate(specs)])


@dataclass(frozen=True)
class MomentEstimate:
    """First and second payment moments with Monte Carlo standard errors.

    ``n_draws`` is 0 for closed-form or quadrature values.
    """

    first: float
    second: float
    se_first: float = 0.0
    se_second: float = 0.0
    n_draws: int = 0

    @property
    def variance(self) -> float:
        return self.second - self.first ** 2

    def to_dict(self) -> Dict:
        return {
            "first": self.first,
            "second": self.second,
            "se_first": self.se_first,
            "se_second": self.se_second,
            "n_draws": self.n_draws,
            "variance": self.variance,
        }


def pure_premium_flat(params: GevParams, alpha: float, strike: float) -> MomentEstimate:
    """Closed-form moments of a flat contract: ``alpha^d (1 - G(s))``."""
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    p = 1.0 - float(gev_cdf(strike, params))
    return MomentEstimate(first=alpha * p, second=alpha * alpha * p)


def quadrature_moments(params: GevParams, spec: PayoffSpec) -> MomentEstimate:
    """Payment moments by numerical integration against the GEV density."""
    if spec.kind == "flat":
        return pure_premium_flat(params, spec.alpha, spec.strike)
    lo = max(spec.strike, params.lower_bound)
    hi = min(spec.limit, params.upper_bound)
    tail = 0.0
    if math.isfinite(spec.limit) and spec.limit < params.upper_bound:
        tail = 1.0 - float(gev_cdf(spec.limit, params))
    cap = spec.beta * (spec.limit - spec.strike)

    moments = []
    for d in (1, 2):
        if hi > lo:
            body, _ = integrate.quad(
                lambda m: (spec.beta * (m - spec.strike)) ** d * float(gev_pdf(m, params)),
                lo, hi, limit=200,
            )
        else:
            body = 0.0
        moments.append(body + (cap ** d * tail if tail > 0 else 0.0))
    return MomentEstimate(first=moments[0], second=moments[1])


def mc_moments(values: Sequence[float], spec: PayoffSpec, min_draws: int = MIN_DRAWS) -> MomentEstimate:
    """Sample moments of the payment over simulated native values.

    Standard errors are ``sd(L^d) / sqrt(I)`` with plug-in standard deviations.
    """
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ConfigError("no draws to average")
    if arr.size < min_draws:
        logger.warning("only %d draws for Monte Carlo moments (floor %d)", arr.size, min_draws)
    pay = np.asarray(payoff(spec, arr)).reshape(-1)
    sq = pay * pay
    root_n = np.sqrt(arr.size)
    return MomentEstimate(
        first=float(np.mean(pay)),
        second=float(np.mean(sq)),
        se_first=float(np.std(pay) / root_n),
        se_second=float(np.std(sq) / root_n),
        n_draws=int(arr.size),
    )


def risk_loaded_premium(expected: float, variance: float, lam: float, method: str = "variance") -> float:
    """``E + lambda * var`` or, with ``method="stdev"``, ``E + lambda * sd``."""
    if method not in RISK_MEASURES:
        raise ConfigError(f"risk measure must be one of {RISK_MEASURES}")
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if variance < 0:
        raise DomainError(f"variance must be nonnegative, got {variance}")
    load = variance if method == "variance" else math.sqrt(variance)
    return float(expected + lam * load)


def _covariance(pay: np.ndarray) -> np.ndarray:
    centred = pay - pay.mean(axis=0)
    cov = centred.T @ centred / pay.shape[0]
    return 0.5 * (cov + cov.T)


def payment_covariance(events: Union[EventMatrix, np.ndarray], specs: Sequence[PayoffSpec]) -> np.ndarray:
    """Plug-in ``K x K`` covariance of contract payments."""
    return _covariance(payment_matrix(events, specs))


def portfolio_variance(events: Union[EventMatrix, np.ndarray], specs: Sequence[PayoffSpec]) -> float:
    """Plug-in variance of the total payment per event."""
    return float(np.var(payment_matrix(events, specs).sum(axis=1)))


@dataclass(frozen=True)
class MarginalVariance:
    """Variance added by the newest contract, by two routes.

    ``difference`` is ``var(sum_1^K) - var(sum_1^{K-1})`` and
    ``decomposition`` is ``var(L_K) + 2 sum_{j<K} cov(L_j, L_K)``.
    """

    difference: float
    decomposition: float

    @property
    def value(self) -> float:
        return self.difference


def _resolve_index(k: Optional[int], n: int) -> int:
    if n < 1:
        raise ConfigError("at least one contract is required")
    if k is None:
        return n - 1
    if not -n <= k < n:
        raise ShapeError(f"contract index {k} out of range for {n} contracts")
    return k % n


def marginal_variance(
    events: Union[EventMatrix, np.ndarray], specs: Sequence[PayoffSpec], k: Optional[int] = None
) -> MarginalVariance:
    """Marginal variance of contract ``k`` (default: the last) added to contracts ``0..k-1``."""
    pay = payment_matrix(events, specs)
    k = _resolve_index(k, pay.shape[1])
    book = pay[:, : k + 1]
    with_k = float(np.var(book.sum(axis=1)))
    without_k = float(np.var(book[:, :k].sum(axis=1))) if k > 0 else 0.0
    cov = _covariance(book)
    decomposition = float(cov[k, k] + 2.0 * cov[:k, k].sum())
    return MarginalVariance(difference=with_k - without_k, decomposition=decomposition)


def covariance_shares(means: Sequence[float], strict: bool = False) -> np.ndarray:
    """Matrix ``A`` with ``A[j, k] = E(L_k) / (E(L_j) + E(L_k))``.

    ``A[j, k] + A[k, j] == 1`` exactly and the diagonal is 0.5.  A pair with
    both expected losses zero gets 0.5 each with a warning, or raises
    :class:`DegenerateShareError` when ``strict``.
    """
    m = np.asarray(means, dtype=float).reshape(-1)
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise DomainError("expected losses must be finite and nonnegative")
    n = m.size
    shares = np.full((n, n), 0.5)
    for j in range(n):
        for k in range(j + 1, n):
            total = m[j] + m[k]
            if total == 0.0:
                if strict:
                    raise DegenerateShareError(f"contracts {j} and {k} both have zero expected loss")
                logger.warning("contracts %d and %d both have zero expected loss; splitting evenly", j, k)
                a = 0.5
            else:
                a = m[k] / total
            shares[j, k] = a
            shares[k, j] = 1.0 - a
    return shares


def _share_loads(means: np.ndarray, cov: np.ndarray, lam: float, strict: bool = False) -> np.ndarray:
    shares = covariance_shares(means, strict=strict)
    return 2.0 * lam * np.sum(shares * cov, axis=0)


def covariance_share_risk_load(
    events: Union[EventMatrix, np.ndarray],
    specs: Sequence[PayoffSpec],
    lam: float,
    k: Optional[int] = None,
    strict: bool = False,
) -> float:
    """Risk load of contract ``k`` against the rest of the book."""
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    pay = payment_matrix(events, specs)
    k = _resolve_index(k, pay.shape[1])
    return float(_share_loads(pay.mean(axis=0), _covariance(pay), lam, strict)[k])


def covariance_share_load_from_moments(
    means: Sequence[float], cov_column: Sequence[float], lam: float, k: Optional[int] = None
) -> float:
    """Risk load of contract ``k`` from summary statistics.

    ``cov_column[j]`` is ``cov(L_j, L_k)``, so ``cov_column[k]`` is ``var(L_k)``.
    """
    m = np.asarray(means, dtype=float).reshape(-1)
    c = np.asarray(cov_column, dtype=float).reshape(-1)
    if m.size != c.size:
        raise ShapeError(f"{m.size} means for {c.size} covariances")
    k = _resolve_index(k, m.size)
    shares = covariance_shares(m)[:, k]
    return float(2.0 * lam * np.sum(shares * c))


def marginal_variance_loads(
    events: Union[EventMatrix, np.ndarray], specs: Sequence[PayoffSpec], lam: float
) -> np.ndarray:
    """Loads ``lambda * MV_k`` charging each contract as if it were written last.

    Each covariance is charged in full to both contracts, so these loads sum
    to more than ``lambda * var(total)`` whenever payments correlate
    positively.
    """
    pay = payment_matrix(events, specs)
    total = pay.sum(axis=1)
    full = np.var(total)
    return np.array([lam * (full - np.var(total - pay[:, k])) for k in range(pay.shape[1])])


@dataclass(frozen=True, eq=False)
class PortfolioReport:
    labels: List[str]
    specs: List[PayoffSpec]
    means: np.ndarray
    se_means: np.ndarray
    variances: np.ndarray
    covariance: np.ndarray
    shares: np.ndarray
    risk_loads: np.ndarray
    premiums: np.ndarray
    portfolio_variance: float
    marginal_variance: float
    lam: float
    method: str
    n_events: int
    preview: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def newest(self) -> int:
        return len(self.labels) - 1

    def to_dict(self) -> Dict:
        k = self.newest
        return {
            "labels": list(self.labels),
            "contracts": [s.to_dict() for s in self.specs],
            "lambda": self.lam,
            "risk_measure": self.method,
            "n_events": self.n_events,
            "means": self.means.tolist(),
            "se_means": self.se_means.tolist(),
            "variances": self.variances.tolist(),
            "covariance": self.covariance.tolist(),
            "shares_vs_newest": self.shares[:, k].tolist(),
            "risk_loads": self.risk_loads.tolist(),
            "premiums": self.premiums.tolist(),
            "portfolio_variance": self.portfolio_variance,
            "marginal_variance": self.marginal_variance,
        }

    def to_frame(self) -> pd.DataFrame:
        """Table of event previews, moments and covariances against the newest contract."""
        k = self.newest
        rows = [(f"event {i + 1}", row) for i, row in enumerate(self.preview)]
        rows += [
            ("mean", self.means),
            ("variance", self.variances),
            (f"cov with {self.labels[k]}", self.covariance[:, k]),
            (f"share a(j,{self.labels[k]})", self.shares[:, k]),
            ("risk load", self.risk_loads),
            ("premium", self.premiums),
        ]
        frame = pd.DataFrame([r for _, r in rows], columns=self.labels)
        frame.insert(0, "row", [name for name, _ in rows])
        return frame


def price_portfolio(
    events: Union[EventMatrix, np.ndarray],
    specs: Sequence[PayoffSpec],
    lam: float,
    method: str = "variance",
    preview_rows: int = 5,
) -> PortfolioReport:
    """Price every contract in the book in one pass.

    With ``method="variance"`` the loads are covariance-share loads; with
    ``"stdev"`` each contract is loaded by ``lambda * sd(L_k)`` on its own.
    """
    if method not in RISK_MEASURES:
        raise ConfigError(f"risk measure must be one of {RISK_MEASURES}")
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    pay = payment_matrix(events, specs)
    n = pay.shape[0]
    if n < MIN_DRAWS:
        logger.warning("pricing from only %d events (floor %d)", n, MIN_DRAWS)
    means = pay.mean(axis=0)
    cov = _covariance(pay)
    variances = np.diag(cov).copy()
    shares = covariance_shares(means)
    if method == "variance":
        loads = _share_loads(means, cov, lam)
    else:
        loads = lam * np.sqrt(np.clip(variances, 0.0, None))
    total = pay.sum(axis=1)
    k = pay.shape[1] - 1
    mv = float(np.var(total) - np.var(total - pay[:, k])) if k > 0 else float(variances[0])

    if isinstance(events, EventMatrix):
        labels = list(events.labels())
    else:
        labels = [f"L{j + 1}" for j in range(pay.shape[1])]
    labels = [spec.label or lab for spec, lab in zip(specs, labels)]
    logger.info("priced %d contracts from %d events", len(specs), n)
    return PortfolioReport(
        labels=labels,
        specs=list(specs),
        means=means,
        se_means=pay.std(axis=0) / np.sqrt(n),
        variances=variances,
        covariance=cov,
        shares=shares,
        risk_loads=loads,
        premiums=means + loads,
        portfolio_variance=float(np.var(total)),
        marginal_variance=mv,
        lam=float(lam),
        method=method,
        n_events=n,
        preview=pay[:preview_rows].copy(),
    )


__all__ = [
    "PAYOFF_KINDS",
    "RISK_MEASURES",
    "PayoffSpec",
    "payoff",
    "payment_matrix",
    "MomentEstimate",
    "pure_premium_flat",
    "quadrature_moments",
    "mc_moments",
    "risk_loaded_premium",
    "payment_covariance",
    "portfolio_variance",
    "MarginalVariance",
    "marginal_variance",
    "covariance_shares",
    "covariance_share_risk_load",
    "covariance_share_load_from_moments",
    "marginal_variance_loads",
    "PortfolioReport",
    "price_portfolio",
]
