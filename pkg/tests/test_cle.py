"""Tests for pairwise composite likelihood fitting and CLIC model selection."""

import math
import os
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from extreme_pricer.calculators import cle, spatial
from extreme_pricer.calculators.gev import fit_gev, transform_observed
from extreme_pricer.calculators.numerics import central_gradient
from extreme_pricer.calculators.station_data import block_maxima_by_station, parse_station_csv
from extreme_pricer.components.config import load_sites
from extreme_pricer.errors import ConfigError, FitError, NumericalError, ShapeError

TRUTH = spatial.CorrelationModel("cauchy", c2=2.0, nu=1.0)


def _sites() -> spatial.SiteSet:
    return spatial.SiteSet(np.array([
        [0.0, 0.0], [1.0, 0.5], [2.5, 0.0], [0.5, 2.0], [3.0, 3.0], [1.5, 4.0],
    ]))


def _events(n: int = 300, seed: int = 7) -> spatial.EventMatrix:
    return spatial.simulate_schlather(_sites(), TRUTH, n, seed=seed)


def _fake_fit(family: str, loglik: float = -10.0, iterations: int = 50) -> cle.CompositeFit:
    eye = np.eye(2)
    return cle.CompositeFit(
        family=family, c2=1.0, nu=1.0, H=2.0 * eye, J=4.0 * eye, covariance=eye,
        std_errors={"c2": 1.0, "nu": 1.0}, loglik=loglik, n_pairs=15, n_replicates=10,
        iterations=iterations,
    )


def test_loglik_sums_pair_log_densities():
    """The composite log-likelihood adds one log density per pair and replicate."""
    events = _events(20)
    sites = _sites()
    rho = spatial.correlation(TRUTH, sites.distances())
    expected = 0.0
    for n in range(events.n_events):
        for i in range(len(sites)):
            for j in range(i + 1, len(sites)):
                expected += float(spatial.schlather_bivariate_logpdf(
                    events.values[n, i], events.values[n, j], rho[i, j]))
    assert cle.pairwise_loglik(events, sites, TRUTH) == pytest.approx(expected, rel=1e-12)
    assert cle.pairwise_terms(events, sites, TRUTH).shape == (20, 15)


def test_loglik_input_checks():
    """Native-scale data, single sites and column mismatches are rejected."""
    events = _events(20)
    native = spatial.EventMatrix(events.values, spatial.NATIVE_SCALE)
    with pytest.raises(ConfigError):
        cle.pairwise_loglik(native, _sites(), TRUTH)
    with pytest.raises(ShapeError):
        cle.pairwise_loglik(events.values[:, :3], _sites(), TRUTH)
    with pytest.raises(ConfigError):
        cle.pairwise_loglik(events.values[:, :1], _sites().subset([0]), TRUTH)


def test_fit_reaches_at_least_the_true_likelihood():
    """The composite MLE beats the generating parameters and carries sandwich errors."""
    events = _events()
    sites = _sites()
    fit = cle.fit_maxstable(events, sites, "cauchy")
    assert fit.converged
    assert fit.loglik >= cle.pairwise_loglik(events, sites, TRUTH) - 1e-6
    assert fit.c2 > 0 and fit.nu > 0
    assert fit.n_pairs == 15 and fit.n_replicates == 300
    assert np.allclose(fit.covariance, fit.covariance.T)
    assert all(np.isfinite(se) and se > 0 for se in fit.std_errors.values())
    # dependence at a typical distance is recovered
    h = float(np.median(sites.pair_distances()))
    fitted = spatial.extremal_coefficient(fit.model, h)
    assert fitted == pytest.approx(spatial.extremal_coefficient(TRUTH, h), abs=0.1)


def test_sandwich_matches_fit():
    """Recomputing the sandwich at the estimate reproduces the stored matrices."""
    events = _events()
    sites = _sites()
    fit = cle.fit_maxstable(events, sites, "cauchy")
    H, J, cov, se = cle.sandwich_variance(events, sites, "cauchy", fit.theta_hat)
    assert np.allclose(H, fit.H)
    assert np.allclose(J, fit.J)
    assert np.allclose(cov, np.linalg.inv(H) @ J @ np.linalg.inv(H))
    assert np.allclose(se, np.sqrt(np.diag(cov)))
    _, J_rep, _, _ = cle.sandwich_variance(events, sites, "cauchy", fit.theta_hat, score_grouping="replicate")
    assert np.all(np.linalg.eigvalsh(J_rep) >= -1e-8 * np.abs(J_rep).max())
    with pytest.raises(ConfigError):
        cle.sandwich_variance(events, sites, "cauchy", fit.theta_hat, score_grouping="site")


def test_too_few_pair_terms():
    """Fewer than ten pair terms cannot support a fit."""
    events = spatial.EventMatrix(np.ones((4, 2)), spatial.UNIT_FRECHET_SCALE)
    with pytest.raises(ConfigError):
        cle.fit_maxstable(events, _sites().subset([0, 1]), "cauchy")


def test_clic_formula():
    """CLIC is -2 l - tr(J H^-1)."""
    score = cle.clic(_fake_fit("cauchy"))
    assert score.penalty == pytest.approx(4.0)
    assert score.value == pytest.approx(16.0)
    assert score.value + 3.0 * score.penalty == pytest.approx(28.0)


def test_clic_singular_hessian():
    """A singular composite Hessian raises NumericalError."""
    fit = _fake_fit("cauchy")
    singular = cle.CompositeFit(
        family="cauchy", c2=1.0, nu=1.0, H=np.zeros((2, 2)), J=fit.J, covariance=fit.covariance,
        std_errors=fit.std_errors, loglik=fit.loglik, n_pairs=15, n_replicates=10,
    )
    with pytest.raises(NumericalError):
        cle.clic(singular)


def test_model_select_tie_breaks(monkeypatch):
    """Equal CLIC goes to fewer iterations, then to the earlier family."""
    iterations = {"whittle-matern": 80, "cauchy": 40, "powered-exponential": 40}
    monkeypatch.setattr(cle, "fit_maxstable",
                        lambda data, sites, family, **kw: _fake_fit(family, iterations=iterations[family]))
    best, table = cle.model_select(None, None, spatial.FAMILIES)
    assert best.family == "cauchy"
    assert list(table["family"]) == list(spatial.FAMILIES)
    assert list(table["selected"]) == [False, True, False]


def test_model_select_skips_failures(monkeypatch):
    """A family that fails is reported in the table and not selected."""
    def fake(data, sites, family, **kw):
        if family == "whittle-matern":
            raise FitError("no convergence")
        return _fake_fit(family, loglik=-10.0 if family == "cauchy" else -20.0)

    monkeypatch.setattr(cle, "fit_maxstable", fake)
    best, table = cle.model_select(None, None, spatial.FAMILIES)
    assert best.family == "cauchy"
    failed = table[table["family"] == "whittle-matern"].iloc[0]
    assert "no convergence" in failed["error"]
    assert math.isnan(failed["clic"])


def test_model_select_all_fail(monkeypatch):
    """If no family fits, model selection raises FitError."""
    def fake(data, sites, family, **kw):
        raise FitError(f"{family} failed")

    monkeypatch.setattr(cle, "fit_maxstable", fake)
    with pytest.raises(FitError):
        cle.model_select(None, None, ["cauchy", "whittle-matern"])
    with pytest.raises(ConfigError):
        cle.model_select(None, None, [])


def test_from_dict_fills_missing_matrices():
    """A fit read from a short record gets NaN matrices."""
    fit = cle.CompositeFit.from_dict({"family": "cauchy", "c2": 2.0, "nu": 0.5, "loglik": None})
    assert fit.model == spatial.CorrelationModel("cauchy", 2.0, 0.5)
    assert math.isnan(fit.loglik)
    assert np.all(np.isnan(fit.H))


@pytest.mark.slow
def test_model_select_on_simulated_data():
    """Every family fits simulated data and the selection is recorded."""
    best, table = cle.model_select(_events(400, seed=3), _sites(), spatial.FAMILIES)
    assert best.family in spatial.FAMILIES
    assert int(table["selected"].sum()) == 1


@pytest.mark.skipif(not os.environ.get("EXTREME_PRICER_MIDWEST_DIR"),
                    reason="set EXTREME_PRICER_MIDWEST_DIR to a directory of station CSVs and sites.csv")
def test_midwest_dependence_fit():
    """Observed Midwest maxima support a composite likelihood fit."""
    root = Path(os.environ["EXTREME_PRICER_MIDWEST_DIR"])
    sites = load_sites(root / "sites.csv")
    records = [r for path in sorted(root.glob("*.csv")) if path.name != "sites.csv"
               for r in parse_station_csv(path)]
    maxima = block_maxima_by_station(records)
    common = sorted(set.intersection(*(set(maxima[s].years) for s in sites.labels)))
    columns = []
    for label in sites.labels:
        pairs = [p for p in maxima[label].pairs() if p[0] in common]
        columns.append(transform_observed(pairs, fit_gev(pairs)))
    best, _ = cle.model_select(np.column_stack(columns), sites, spatial.FAMILIES)
    assert best.c2 > 0


def _singular_sandwich(*args, **kwargs):
    raise NumericalError("composite Hessian is singular (condition number 1e+16)")


def _two_sites() -> spatial.SiteSet:
    return spatial.SiteSet(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_sandwich_try_keeps_point_estimate(monkeypatch):
    """With sandwich="try" a singular Hessian leaves NaN uncertainty instead of raising."""
    monkeypatch.setattr(cle, "_sandwich", _singular_sandwich)
    events, sites = _events(), _sites()
    fit = cle.fit_maxstable(events, sites, "cauchy", sandwich="try")
    assert not fit.has_sandwich
    assert "singular" in fit.sandwich_error
    assert fit.c2 > 0 and fit.nu > 0
    assert all(math.isnan(se) for se in fit.std_errors.values())
    assert cle.CompositeFit.from_dict(fit.to_dict()).sandwich_error == fit.sandwich_error
    with pytest.raises(NumericalError):
        cle.clic(fit)
    with pytest.raises(NumericalError):
        cle.fit_maxstable(events, sites, "cauchy")


def test_sandwich_skip_never_differentiates(monkeypatch):
    """sandwich="skip" returns the estimate without computing H or J."""
    def forbidden(*args, **kwargs):
        raise AssertionError("sandwich computed")

    monkeypatch.setattr(cle, "_sandwich", forbidden)
    fit = cle.fit_maxstable(_events(), _sites(), "cauchy", sandwich="skip")
    assert fit.sandwich_error == "not computed"
    assert np.all(np.isnan(fit.covariance))
    with pytest.raises(ConfigError):
        cle.fit_maxstable(_events(), _sites(), "cauchy", sandwich="maybe")


def test_model_select_flags_one_row_for_repeated_family(monkeypatch):
    """A family listed twice is fitted twice but only the winning row is selected."""
    monkeypatch.setattr(cle, "fit_maxstable", lambda data, sites, family, **kw: _fake_fit(family))
    best, table = cle.model_select(None, None, ["cauchy", "cauchy", "whittle-matern"])
    assert best.family == "cauchy"
    assert list(table["selected"]) == [True, False, False]


def test_loglik_and_fit_ignore_site_order():
    """Permuting columns and coordinates together leaves the likelihood and the fit unchanged."""
    events, sites = _events(), _sites()
    order = [4, 2, 0, 5, 1, 3]
    shuffled_events = spatial.EventMatrix(events.values[:, order], events.scale)
    shuffled_sites = sites.subset(order)
    assert cle.pairwise_loglik(shuffled_events, shuffled_sites, TRUTH) == pytest.approx(
        cle.pairwise_loglik(events, sites, TRUTH), rel=1e-12)
    fit = cle.fit_maxstable(events, sites, "cauchy")
    again = cle.fit_maxstable(shuffled_events, shuffled_sites, "cauchy")
    assert again.c2 == pytest.approx(fit.c2, rel=1e-6)
    assert again.nu == pytest.approx(fit.nu, rel=1e-6)
    assert cle.clic(again).value == pytest.approx(cle.clic(fit).value, rel=1e-6)


def test_two_sites_reduce_to_the_bivariate_likelihood():
    """At K=2 the composite fit reaches the bivariate maximum likelihood correlation."""
    sites = _two_sites()
    events = spatial.simulate_schlather(sites, TRUTH, 500, seed=11)
    z1, z2 = events.values[:, 0], events.values[:, 1]
    rho_true = spatial.correlation(TRUTH, 1.0)
    assert cle.pairwise_loglik(events, sites, TRUTH) == pytest.approx(
        float(np.sum(spatial.schlather_bivariate_logpdf(z1, z2, rho_true))), rel=1e-12)

    best = optimize.minimize_scalar(
        lambda r: -float(np.sum(spatial.schlather_bivariate_logpdf(z1, z2, r))),
        bounds=(0.01, 0.999), method="bounded", options={"xatol": 1e-8},
    )
    # only rho(1) is identified with one pair, so any point on the ridge will do
    try:
        fit = cle.fit_maxstable(events, sites, "cauchy", sandwich="skip")
        c2, nu, loglik = fit.c2, fit.nu, fit.loglik
    except FitError as exc:
        c2, nu = exc.best
        loglik = cle.pairwise_loglik(events, sites, spatial.CorrelationModel("cauchy", c2, nu))
    rho_hat = spatial.correlation_values("cauchy", c2, nu, np.array([1.0]))[0]
    assert rho_hat == pytest.approx(best.x, abs=5e-3)
    assert loglik == pytest.approx(-best.fun, rel=1e-6)


def test_fit_satisfies_first_order_condition():
    """The composite gradient vanishes at the estimate and neighbouring points score lower."""
    events, sites = _events(), _sites()
    fit = cle.fit_maxstable(events, sites, "cauchy")
    pairs = cle._PairData(events, sites)

    def loglik(theta):
        return pairs.loglik("cauchy", theta[0], theta[1])

    theta = np.array(fit.theta_hat)
    shifted = 1.2 * theta
    steps = 1e-5 * np.maximum(1.0, np.abs(theta))
    grad_hat = np.linalg.norm(central_gradient(loglik, theta, steps))
    grad_off = np.linalg.norm(central_gradient(loglik, shifted, steps))
    assert grad_hat < 0.05 * grad_off

    eta = cle._working(fit.c2, fit.nu, "cauchy")
    for axis in range(2):
        for sign in (-1.0, 1.0):
            moved = eta.copy()
            moved[axis] += sign * 0.05
            assert loglik(cle._natural(moved, "cauchy")) < fit.loglik


@pytest.mark.slow
def test_standard_errors_shrink_with_more_replicates():
    """Doubling the replicates from 100 to 200 shrinks both standard errors in most seeded runs."""
    shrunk = {"c2": 0, "nu": 0}
    for seed in range(10):
        events = _events(200, seed=100 + seed)
        half = spatial.EventMatrix(events.values[:100], events.scale)
        small = cle.fit_maxstable(half, _sites(), "cauchy")
        large = cle.fit_maxstable(events, _sites(), "cauchy")
        for name in shrunk:
            shrunk[name] += large.std_errors[name] < small.std_errors[name]
    assert shrunk["c2"] >= 8 and shrunk["nu"] >= 8


@pytest.mark.slow
def test_model_select_recovers_generating_family():
    """Powered-exponential data beat the Cauchy family on CLIC in most seeded runs."""
    truth = spatial.CorrelationModel("powered-exponential", c2=2.0, nu=1.0)
    rng = np.random.default_rng(5)
    hits = 0
    for seed in range(10):
        sites = spatial.SiteSet(rng.uniform(0.0, 10.0, size=(15, 2)))
        events = spatial.simulate_schlather(sites, truth, 250, seed=seed)
        best, _ = cle.model_select(events, sites, ["powered-exponential", "cauchy"])
        hits += best.family == "powered-exponential"
    assert hits >= 7
