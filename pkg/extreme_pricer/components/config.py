"""JSON run and study configuration.

Relative paths in a config resolve against the directory of the config
file.  Every optional field has its default here; see
``extreme_pricer/data/sample_run.json`` and ``sample_study.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from ..calculators.pricing import RISK_MEASURES, PayoffSpec
from ..calculators.spatial import FAMILIES, SiteSet
from ..calculators.station_data import DEFAULT_COMPLETENESS, SeasonWindow
from ..calculators.study import DEFAULT_SCENARIOS, StudyConfig
from ..errors import ConfigError, DomainError

DEFAULT_SEED = 20110101


@dataclass(frozen=True)
class ContractConfig:
    site: str
    type: str
    strike: float
    alpha: float = 0.0
    beta: float = 0.0
    limit: float = math.inf

    def to_spec(self) -> PayoffSpec:
        try:
            return PayoffSpec(self.type, self.strike, self.alpha, self.beta, self.limit, label=self.site)
        except DomainError as exc:
            raise ConfigError(f"contract at {self.site}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    stations: Tuple[Path, ...] = ()
    sites: Optional[Path] = None
    trend: bool = False
    window: SeasonWindow = field(default_factory=SeasonWindow)
    completeness: float = DEFAULT_COMPLETENESS
    min_maxima: int = 20
    families: Tuple[str, ...] = FAMILIES
    contracts: Tuple[ContractConfig, ...] = ()
    lam: float = 0.0
    risk_measure: str = "variance"
    n_events: int = 100_000
    seed: int = DEFAULT_SEED
    prediction_year: Optional[float] = None
    workers: int = 1
    fits_dir: Optional[Path] = None
    spatial_fit: Optional[Path] = None

    def __post_init__(self):
        if self.n_events < 1:
            raise ConfigError(f"n_events must be at least 1, got {self.n_events}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.risk_measure not in RISK_MEASURES:
            raise ConfigError(f"risk_measure must be one of {RISK_MEASURES}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ConfigError(f"unknown correlation families {unknown}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for path in (*self.stations, self.sites, self.fits_dir, self.spatial_fit):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"referenced path does not exist: {path}")

    def specs(self) -> List[PayoffSpec]:
        return [c.to_spec() for c in self.contracts]

    def site_set(self) -> SiteSet:
        if self.sites is None:
            raise ConfigError("the config names no site table")
        return load_sites(self.sites)


def load_sites(path: Union[str, Path]) -> SiteSet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"site table not found: {path}")
    return SiteSet.from_frame(pd.read_csv(path, dtype={"site": str}))


def _read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _contract(raw: Dict[str, Any]) -> ContractConfig:
    try:
        limit = raw.get("limit", math.inf)
        return ContractConfig(
            site=str(raw["site"]),
            type=str(raw["type"]),
            strike=float(raw["strike"]),
            alpha=float(raw.get("alpha", 0.0)),
            beta=float(raw.get("beta", 0.0)),
            limit=math.inf if limit in (None, "inf") else float(limit),
        )
    except KeyError as exc:
        raise ConfigError(f"contract entry is missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad contract entry {raw}: {exc}") from exc


def load_run_config(path: Union[str, Path], seed: Optional[int] = None) -> RunConfig:
    """Parse a run config; ``seed`` overrides the file's master seed."""
    path = Path(path)
    raw = _read_json(path)
    base = path.parent
    known = {
        "stations", "sites", "trend", "window", "completeness", "min_maxima", "families",
        "contracts", "lambda", "risk_measure", "n_events", "seed", "prediction_year",
        "workers", "fits_dir", "spatial_fit",
    }
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown config fields {extra}")
    window = raw.get("window", {}) or {}
    try:
        return RunConfig(
            stations=tuple(_resolve(base, s) for s in raw.get("stations", [])),
            sites=_resolve(base, raw.get("sites")),
            trend=bool(raw.get("trend", False)),
            window=SeasonWindow(window.get("start", "06-01"), window.get("end", "08-31")),
            completeness=float(raw.get("completeness", DEFAULT_COMPLETENESS)),
            min_maxima=int(raw.get("min_maxima", 20)),
            families=tuple(raw.get("families", FAMILIES)),
            contracts=tuple(_contract(c) for c in raw.get("contracts", [])),
            lam=float(raw.get("lambda", 0.0)),
            risk_measure=str(raw.get("risk_measure", "variance")),
            n_events=int(raw.get("n_events", 100_000)),
            seed=int(seed if seed is not None else raw.get("seed", DEFAULT_SEED)),
            prediction_year=raw.get("prediction_year"),
            workers=int(raw.get("workers", 1)),
            fits_dir=_resolve(base, raw.get("fits_dir")),
            spatial_fit=_resolve(base, raw.get("spatial_fit")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_study_config(path: Union[str, Path], seed: Optional[int] = None) -> StudyConfig:
    raw = _read_json(path)
    try:
        return StudyConfig(
            grid_extent=float(raw.get("grid_extent", 10.0)),
            n_sites=int(raw.get("n_sites", 25)),
            n_derivative=int(raw.get("n_derivative", 4)),
            scenarios={str(k): float(v) for k, v in raw.get("scenarios", DEFAULT_SCENARIOS).items()},
            family=str(raw.get("family", "whittle-matern")),
            nu=float(raw.get("nu", 1.0)),
            years=tuple(int(y) for y in raw.get("years", (50, 100))),
            replicates=int(raw.get("replicates", 20)),
            oracle_draws=int(raw.get("oracle_draws", 100_000)),
            n_events=int(raw.get("n_events", 100_000)),
            strike=float(raw.get("strike", 112.0)),
            alpha=float(raw.get("alpha", 1.0)),
            seed=int(seed if seed is not None else raw.get("seed", DEFAULT_SEED)),
            workers=int(raw.get("workers", 1)),
            perfect_information=bool(raw.get("perfect_information", False)),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


__all__ = [
    "ContractConfig",
    "RunConfig",
    "load_sites",
    "load_run_config",
    "load_study_config",
]
