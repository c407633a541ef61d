"""Station daily records, seasonal block maxima and pre-fit diagnostics.

Input files are normalized CSVs with the header ``station,date,value``,
ISO dates and ``-9999`` for a missing reading.  A USHCN daily archive can be
brought into this shape with one pandas call per element, for example::

    df[["station", "date", "value"]].to_csv("phoenix.csv", index=False)

Example
-------

>>> window = SeasonWindow()
>>> window.length(2011), window.length(2012)
(92, 92)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.tsa.stattools import acf as _sm_acf

from ..errors import ConfigError, DataError
from .gev import FittedGev, from_unit_frechet, gev_cdf, gev_quantile, return_level, to_unit_frechet

logger = logging.getLogger(__name__)

MISSING_SENTINEL = -9999.0
COLUMNS = ("station", "date", "value")
DEFAULT_COMPLETENESS = 0.9
WHITE_NOISE_Z = 1.96


@dataclass(frozen=True)
class DailyRecord:
    station: str
    day: date
    value: float
    missing: bool = False


@dataclass(frozen=True)
class SeasonWindow:
    """Month-day range inside one calendar year, both ends inclusive."""

    start: str = "06-01"
    end: str = "08-31"

    def __post_init__(self):
        try:
            first, last = self._bounds(2001)
        except ValueError as exc:
            raise ConfigError(f"invalid season window {self.start}..{self.end}: {exc}") from exc
        if first > last:
            raise ConfigError(f"season window {self.start}..{self.end} must not wrap the year end")

    def _bounds(self, year: int) -> Tuple[date, date]:
        sm, sd = (int(x) for x in self.start.split("-"))
        em, ed = (int(x) for x in self.end.split("-"))
        return date(year, sm, sd), date(year, em, ed)

    def contains(self, day: date) -> bool:
        first, last = self._bounds(day.year)
        return first <= day <= last

    def length(self, year: int) -> int:
        first, last = self._bounds(year)
        return (last - first).days + 1


@dataclass(frozen=True)
class BlockMaxima:
    """Seasonal maxima of one station, years strictly increasing."""

    station: str
    years: Tuple[int, ...]
    maxima: Tuple[float, ...]
    days_present: Tuple[int, ...]
    window: SeasonWindow = field(default_factory=SeasonWindow)
    dropped: Tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.years)

    def pairs(self) -> List[Tuple[float, float]]:
        """``(year, maximum)`` pairs as accepted by :func:`fit_gev`."""
        return [(float(y), float(m)) for y, m in zip(self.years, self.maxima)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"year": self.years, "maximum": self.maxima, "days_present": self.days_present}
        )


def parse_station_csv(path: Union[str, Path]) -> List[DailyRecord]:
    """Read a normalized station file.

    Raises :class:`ConfigError` for a missing file and :class:`DataError`
    for unknown columns or a malformed row; row errors name the file line.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"station file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    cols = [c.strip() for c in df.columns]
    unknown = sorted(set(cols) - set(COLUMNS))
    missing = sorted(set(COLUMNS) - set(cols))
    if unknown or missing:
        raise DataError(f"{path}: unknown columns {unknown}, missing columns {missing}", line=1)
    df.columns = cols

    stations = df["station"].str.strip()
    days = pd.to_datetime(df["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    values = pd.to_numeric(df["value"].str.strip(), errors="coerce").to_numpy(dtype=float)
    checks = [
        (stations.eq("").to_numpy(), lambda i: "empty station id"),
        (days.isna().to_numpy(), lambda i: f"invalid date '{df['date'].iloc[i]}'"),
        (~np.isfinite(values), lambda i: f"non-numeric value '{df['value'].iloc[i]}'"),
    ]
    bad = np.logical_or.reduce([mask for mask, _ in checks])
    if bad.any():
        # first offending row, reported with its first failing field
        pos = int(np.argmax(bad))
        message = next(describe(pos) for mask, describe in checks if mask[pos])
        raise DataError(message, line=pos + 2)

    missing = values == MISSING_SENTINEL
    records = [
        DailyRecord(s, d, float("nan"), missing=True) if m else DailyRecord(s, d, float(v))
        for s, d, v, m in zip(stations, days.dt.date, values, missing)
    ]
    logger.debug("read %d records from %s", len(records), path)
    return records


def _frame(records: Iterable[DailyRecord]) -> pd.DataFrame:
    df = pd.DataFrame(
        [(r.station, r.day, r.value, r.missing) for r in records],
        columns=["station", "day", "value", "missing"],
    )
    return df


def block_maxima(
    records: Sequence[DailyRecord],
    window: Optional[SeasonWindow] = None,
    completeness: float = DEFAULT_COMPLETENESS,
    station: Optional[str] = None,
) -> BlockMaxima:
    """Per-year maximum over the present in-window days of one station.

    Years whose present-day fraction is below ``completeness`` are dropped
    and listed in ``BlockMaxima.dropped``.
    """
    window = window or SeasonWindow()
    if not 0.0 <= completeness <= 1.0:
        raise ConfigError(f"completeness must lie in [0, 1], got {completeness}")
    df = _frame(records)
    if df.empty:
        raise DataError("no daily records")
    stations = sorted(df["station"].unique())
    if station is None:
        if len(stations) > 1:
            raise ConfigError(f"records hold {len(stations)} stations; choose one")
        station = stations[0]
    df = df[df["station"] == station]
    if df.empty:
        raise DataError(f"no records for station {station}")
    if df["day"].duplicated().any():
        dup = df.loc[df["day"].duplicated(), "day"].iloc[0]
        raise DataError(f"station {station} has more than one reading on {dup}")

    df = df[df["day"].map(window.contains)]
    df = df.assign(year=df["day"].map(lambda d: d.year))
    seen = sorted(int(y) for y in df["year"].unique())
    grouped = df[~df["missing"]].groupby("year")["value"].agg(["max", "count"])

    years, maxima, present, dropped = [], [], [], []
    for year in seen:
        count = int(grouped.loc[year, "count"]) if year in grouped.index else 0
        frac = count / window.length(year)
        if count == 0 or frac < completeness:
            dropped.append(int(year))
            logger.info("station %s: dropping %d (%.0f%% of season present)", station, year, 100 * frac)
            continue
        years.append(year)
        maxima.append(float(grouped.loc[year, "max"]))
        present.append(count)
    if not years:
        raise DataError(f"station {station} has no usable years")
    return BlockMaxima(station, tuple(years), tuple(maxima), tuple(present), window, tuple(dropped))


def block_maxima_by_station(
    records: Sequence[DailyRecord],
    window: Optional[SeasonWindow] = None,
    completeness: float = DEFAULT_COMPLETENESS,
) -> Dict[str, BlockMaxima]:
    """:func:`block_maxima` for every station, keyed by station id."""
    stations = sorted({r.station for r in records})
    if not stations:
        raise DataError("no daily records")
    return {s: block_maxima(records, window, completeness, station=s) for s in stations}


def _pairs(maxima) -> np.ndarray:
    if isinstance(maxima, BlockMaxima):
        maxima = maxima.pairs()
    return np.asarray(list(maxima), dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    pvalue: float
    stderr: float


def trend_test(maxima: Union[BlockMaxima, Sequence[Tuple[float, float]]]) -> TrendResult:
    """Least-squares slope of maximum on year with a two-sided t-test."""
    pairs = _pairs(maxima)
    if pairs.shape[0] < 3:
        raise DataError(f"a trend test needs at least 3 years, got {pairs.shape[0]}")
    if np.ptp(pairs[:, 0]) == 0:
        raise DataError("a trend test needs more than one distinct year")
    res = stats.linregress(pairs[:, 0], pairs[:, 1])
    return TrendResult(float(res.slope), float(res.intercept), float(res.pvalue), float(res.stderr))


@dataclass(frozen=True)
class AcfResult:
    values: np.ndarray
    band: float

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.values.size)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"lag": self.lags, "acf": self.values, "lower": -self.band, "upper": self.band}
        )


def acf(series: Sequence[float], max_lag: int) -> AcfResult:
    """Empirical autocorrelations up to ``max_lag`` with the white-noise band ``1.96/sqrt(n)``."""
    x = np.asarray(series, dtype=float).reshape(-1)
    x = x[np.isfinite(x)]
    n = x.size
    if max_lag < 0 or max_lag >= n:
        raise ConfigError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    if np.ptp(x) == 0:
        raise DataError("autocorrelation of a constant series is undefined")
    values = _sm_acf(x, nlags=max_lag, fft=False)
    return AcfResult(np.asarray(values, dtype=float), WHITE_NOISE_Z / np.sqrt(n))


@dataclass(frozen=True)
class GofTables:
    pp: pd.DataFrame
    qq: pd.DataFrame
    return_levels: pd.DataFrame
    reference_year: Optional[float] = None


def gof_tables(
    fit: FittedGev,
    maxima: Union[BlockMaxima, Sequence[Tuple[float, float]]],
    reference_year: Optional[float] = None,
    grid_points: int = 60,
) -> GofTables:
    """PP, QQ and return-level plot data for a fitted margin.

    A trended fit is compared after moving every maximum to the margin in
    force at ``reference_year`` (default: the trend centre).
    """
    pairs = _pairs(maxima)
    years, values = pairs[:, 0], pairs[:, 1]
    n = values.size
    if n < 1:
        raise DataError("no maxima to compare")
    if fit.trend.enabled:
        ref = fit.trend.center if reference_year is None else reference_year
        ref_params = fit.params(ref)
        standard = np.array([
            from_unit_frechet(to_unit_frechet(v, fit.params(y)), ref_params) for y, v in zip(years, values)
        ])
    else:
        ref = None
        ref_params = fit.params()
        standard = values
    ordered = np.sort(standard)
    plotting = np.arange(1, n + 1) / (n + 1.0)

    pp = pd.DataFrame({"empirical": plotting, "model": np.asarray(gev_cdf(ordered, ref_params))})
    qq = pd.DataFrame({"model": np.asarray(gev_quantile(plotting, ref_params)), "empirical": ordered})
    periods = np.geomspace(1.1, 1000.0, grid_points)
    rl = pd.DataFrame({"return_period": periods, "return_level": np.asarray(return_level(ref_params, periods))})
    return GofTables(pp, qq, rl, ref)


__all__ = [
    "MISSING_SENTINEL",
    "DailyRecord",
    "SeasonWindow",
    "BlockMaxima",
    "parse_station_csv",
    "block_maxima",
    "block_maxima_by_station",
    "TrendResult",
    "trend_test",
    "AcfResult",
    "acf",
    "GofTables",
    "gof_tables",
]
