from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import typer

from .calculators.cle import CompositeFit, model_select
from .calculators.gev import FittedGev, fit_gev, transform_observed
from .calculators.pricing import price_portfolio
from .calculators.spatial import EventMatrix, simulate_schlather, to_native_scale
from .calculators.station_data import (
    acf,
    block_maxima_by_station,
    gof_tables,
    parse_station_csv,
    trend_test,
)
from .calculators.study import run_study
from .components.config import RunConfig, load_run_config, load_study_config
from .components.reports import read_json, write_csv, write_json
from .errors import ConfigError, DataError, ExtremePricerError

logger = logging.getLogger(__name__)

app = typer.Typer(help="Price spatially dependent weather derivatives from max-stable models.")

MAX_ACF_LAG = 20

ConfigOption = typer.Option(..., "--config", "-c", help="JSON config file.")
OutOption = typer.Option(Path("outputs"), "--out", "-o", help="Output directory.")
SeedOption = typer.Option(None, "--seed", help="Override the config's master seed.")


def _setup_logging(level: str, verbose: bool, quiet: bool) -> None:
    log_level = level.upper()
    if verbose:
        log_level = "DEBUG"
    if quiet:
        log_level = "ERROR"
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format="%(levelname)s | %(message)s",
    )


def _guarded(action: Callable[[], None]) -> None:
    try:
        action()
    except ExtremePricerError as exc:
        logger.error("%s", exc)
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=exc.exit_code)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose logging."),
    quiet: bool = typer.Option(False, "--quiet", help="Quiet logging."),
    log_level: str = typer.Option("INFO", help="Log level (DEBUG, INFO, WARNING, ERROR)."),
) -> None:
    _setup_logging(log_level, verbose, quiet)


# ---------------------------------------------------------------------------
# Margins
# ---------------------------------------------------------------------------


def _fit_margins(cfg: RunConfig, out: Path) -> None:
    if not cfg.stations:
        raise ConfigError("the config lists no station files")
    records = [r for path in cfg.stations for r in parse_station_csv(path)]
    by_station = block_maxima_by_station(records, cfg.window, cfg.completeness)
    errors: Dict[str, ExtremePricerError] = {}
    for station, maxima in by_station.items():
        try:
            fit = fit_gev(maxima.pairs(), trend=cfg.trend, min_points=cfg.min_maxima)
            payload = {
                "station": station,
                "fit": fit.to_dict(),
                "maxima": maxima.pairs(),
                "dropped_years": list(maxima.dropped),
            }
            try:
                trend = trend_test(maxima)
                payload["trend_test"] = {"slope": trend.slope, "pvalue": trend.pvalue}
            except DataError as exc:
                logger.info("station %s: no trend test (%s)", station, exc)
            write_json(payload, out / "fits" / f"{station}.json")

            tables = gof_tables(fit, maxima)
            write_csv(tables.pp, out / "gof" / f"{station}_pp.csv")
            write_csv(tables.qq, out / "gof" / f"{station}_qq.csv")
            write_csv(tables.return_levels, out / "gof" / f"{station}_return_levels.csv")
            lags = min(MAX_ACF_LAG, len(maxima) - 1)
            write_csv(acf(maxima.maxima, lags).to_frame(), out / "gof" / f"{station}_acf.csv")
        except ExtremePricerError as exc:
            logger.error("station %s: %s", station, exc)
            errors[station] = exc
    logger.info("fitted %d of %d stations", len(by_station) - len(errors), len(by_station))
    if errors:
        write_json({s: f"{type(e).__name__}: {e}" for s, e in errors.items()}, out / "fit_errors.json")
        first = next(iter(errors.values()))
        raise type(first)(f"{len(errors)} station fit(s) failed: {', '.join(errors)}")


@app.command("fit-gev")
def fit_gev_cmd(
    config: Path = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Fit a GEV margin per station and write fits plus diagnostic plot data."""
    _guarded(lambda: _fit_margins(load_run_config(config, seed), out))
    typer.echo(f"Margins written to {out}")


# ---------------------------------------------------------------------------
# Dependence
# ---------------------------------------------------------------------------


def _load_margin(fits_dir: Path, label: str) -> Tuple[FittedGev, List[Tuple[float, float]]]:
    path = fits_dir / f"{label}.json"
    data = read_json(path)
    try:
        return FittedGev.from_dict(data["fit"]), [(float(y), float(v)) for y, v in data["maxima"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed margin fit ({type(exc).__name__}: {exc})") from exc


def _load_dependence(path: Path) -> CompositeFit:
    try:
        return CompositeFit.from_dict(read_json(path)["selected"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed dependence fit ({type(exc).__name__}: {exc})") from exc


def _fits_dir(cfg: RunConfig, out: Path) -> Path:
    path = cfg.fits_dir or out / "fits"
    if not path.exists():
        raise ConfigError(f"no margin fits at {path}; run fit-gev first")
    return path


def _fit_dependence(cfg: RunConfig, out: Path) -> None:
    sites = cfg.site_set()
    fits_dir = _fits_dir(cfg, out)
    margins = [_load_margin(fits_dir, label) for label in sites.labels]
    common = sorted(set.intersection(*(set(y for y, _ in pairs) for _, pairs in margins)))
    if not common:
        raise DataError("the stations share no year of block maxima")
    logger.info("%d common years across %d sites", len(common), len(sites))
    columns = []
    for fit, pairs in margins:
        lookup = dict(pairs)
        columns.append(transform_observed([(y, lookup[y]) for y in common], fit))
    best, table = model_select(np.column_stack(columns), sites, cfg.families)
    write_csv(table, out / "clic_table.csv")
    write_json(
        {"selected": best.to_dict(), "years": common, "sites": list(sites.labels)},
        out / "spatial_fit.json",
    )


@app.command("fit-spatial")
def fit_spatial_cmd(
    config: Path = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Select and fit the Schlather dependence model by composite likelihood."""
    _guarded(lambda: _fit_dependence(load_run_config(config, seed), out))
    typer.echo(f"Dependence fit written to {out}")


# ---------------------------------------------------------------------------
# Simulation and pricing
# ---------------------------------------------------------------------------


def _simulate_events(cfg: RunConfig, out: Path, require_contracts: bool) -> EventMatrix:
    sites = cfg.site_set()
    if cfg.contracts:
        missing = [c.site for c in cfg.contracts if c.site not in sites.labels]
        if missing:
            raise ConfigError(f"contract sites {missing} are not in the site table")
        sites = sites.subset([c.site for c in cfg.contracts])
    elif require_contracts:
        raise ConfigError("the config lists no contracts")
    fits_dir = _fits_dir(cfg, out)
    margins = [_load_margin(fits_dir, label)[0] for label in sites.labels]
    spatial_path = cfg.spatial_fit or out / "spatial_fit.json"
    model = _load_dependence(spatial_path).model
    events = simulate_schlather(sites, model, cfg.n_events, seed=cfg.seed, workers=cfg.workers)
    return to_native_scale(events, margins, cfg.prediction_year)


@app.command("simulate")
def simulate_cmd(
    config: Path = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Simulate native-scale events from the fitted model."""

    def action():
        cfg = load_run_config(config, seed)
        events = _simulate_events(cfg, out, require_contracts=False)
        write_csv(events.to_frame(), out / "events.csv")

    _guarded(action)
    typer.echo(f"Events written to {out / 'events.csv'}")


@app.command("price")
def price_cmd(
    config: Path = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Price the configured contracts with covariance-share risk loads."""

    def action():
        cfg = load_run_config(config, seed)
        events = _simulate_events(cfg, out, require_contracts=True)
        report = price_portfolio(events, cfg.specs(), cfg.lam, cfg.risk_measure)
        payload = report.to_dict()
        payload["seed"] = cfg.seed
        payload["model"] = dict(events.meta)
        write_json(payload, out / "portfolio.json")
        write_csv(report.to_frame(), out / "portfolio_table.csv")

    _guarded(action)
    typer.echo(f"Portfolio report written to {out}")


# ---------------------------------------------------------------------------
# Simulation study
# ---------------------------------------------------------------------------


@app.command("study")
def study_cmd(
    config: Path = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Compare spatial and independence estimates of a marginal variance."""

    def action():
        result = run_study(load_study_config(config, seed))
        write_csv(result.records, out / "study_records.csv")
        write_csv(result.summary, out / "study_summary.csv")
        write_csv(result.mape_table().reset_index(), out / "study_mape.csv")
        write_csv(result.failures, out / "study_failures.csv")
        write_json(result.metadata, out / "study_metadata.json")

    _guarded(action)
    typer.echo(f"Study results written to {out}")


__all__ = ["app"]
