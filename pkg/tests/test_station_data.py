"""Tests for station file parsing, seasonal block maxima and diagnostics."""

import math
import os
from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from extreme_pricer.calculators import station_data
from extreme_pricer.calculators.gev import FittedGev, GevParams, TrendSpec, fit_gev, gev_sample
from extreme_pricer.errors import ConfigError, DataError, FitError


def _season_rows(station: str, year: int, peak: float, skip: int = 0):
    """June-August rows whose maximum is ``peak`` on July 15."""
    rows = []
    day = date(year, 6, 1)
    while day <= date(year, 8, 31):
        value = peak if day == date(year, 7, 15) else peak - 5.0 - (day.day % 4)
        rows.append((station, day.isoformat(), value))
        day += timedelta(days=1)
    # drop the first ``skip`` days of the season
    return rows[skip:]


def _write(tmp_path, rows, name="station.csv"):
    path = tmp_path / name
    pd.DataFrame(rows, columns=["station", "date", "value"]).to_csv(path, index=False)
    return path


def test_parse_marks_missing_values(tmp_path):
    """The -9999 sentinel becomes a missing record."""
    path = _write(tmp_path, [("PHX", "2011-07-01", 110.0), ("PHX", "2011-07-02", -9999)])
    records = station_data.parse_station_csv(path)
    assert records[0] == station_data.DailyRecord("PHX", date(2011, 7, 1), 110.0)
    assert records[1].missing and math.isnan(records[1].value)


def test_parse_errors_name_the_line(tmp_path):
    """Malformed rows raise DataError with the file line number."""
    path = _write(tmp_path, [("PHX", "2011-07-01", 110.0), ("PHX", "2011-13-02", 111.0)])
    with pytest.raises(DataError) as err:
        station_data.parse_station_csv(path)
    assert err.value.line == 3
    bad_value = _write(tmp_path, [("PHX", "2011-07-01", "hot")], name="bad.csv")
    with pytest.raises(DataError) as err:
        station_data.parse_station_csv(bad_value)
    assert err.value.line == 2


def test_parse_rejects_unknown_columns(tmp_path):
    """An unexpected header is reported on line 1."""
    path = tmp_path / "odd.csv"
    path.write_text("station,date,value,flag\nPHX,2011-07-01,110,Q\n")
    with pytest.raises(DataError) as err:
        station_data.parse_station_csv(path)
    assert err.value.line == 1
    with pytest.raises(ConfigError):
        station_data.parse_station_csv(tmp_path / "absent.csv")


def test_season_window():
    """The default season is June through August inclusive."""
    window = station_data.SeasonWindow()
    assert window.length(2012) == 92
    assert window.contains(date(2011, 6, 1)) and window.contains(date(2011, 8, 31))
    assert not window.contains(date(2011, 9, 1))
    with pytest.raises(ConfigError):
        station_data.SeasonWindow("11-01", "02-28")
    with pytest.raises(ConfigError):
        station_data.SeasonWindow("06-31", "08-31")


def test_block_maxima_per_year(tmp_path):
    """Each complete season yields its peak; off-season readings are ignored."""
    rows = _season_rows("PHX", 2010, 112.0) + _season_rows("PHX", 2011, 118.0)
    rows.append(("PHX", "2011-05-20", 130.0))
    records = station_data.parse_station_csv(_write(tmp_path, rows))
    maxima = station_data.block_maxima(records)
    assert maxima.years == (2010, 2011)
    assert maxima.maxima == (112.0, 118.0)
    assert maxima.days_present == (92, 92)
    assert maxima.pairs() == [(2010.0, 112.0), (2011.0, 118.0)]
    assert list(maxima.to_frame().columns) == ["year", "maximum", "days_present"]


def test_incomplete_years_are_dropped(tmp_path):
    """Years below the completeness threshold are listed as dropped."""
    rows = (
        _season_rows("PHX", 2009, 111.0)
        + _season_rows("PHX", 2010, 112.0, skip=20)
        + [(s, d, -9999) for s, d, _ in _season_rows("PHX", 2011, 118.0)]
    )
    records = station_data.parse_station_csv(_write(tmp_path, rows))
    maxima = station_data.block_maxima(records)
    assert maxima.years == (2009,)
    assert maxima.dropped == (2010, 2011)
    relaxed = station_data.block_maxima(records, completeness=0.7)
    assert relaxed.years == (2009, 2010)
    with pytest.raises(DataError):
        station_data.block_maxima(records, completeness=1.0, station="NOPE")


def test_block_maxima_station_checks(tmp_path):
    """Several stations need a choice; duplicate dates are data errors."""
    rows = _season_rows("A", 2010, 100.0) + _season_rows("B", 2010, 101.0)
    records = station_data.parse_station_csv(_write(tmp_path, rows))
    with pytest.raises(ConfigError):
        station_data.block_maxima(records)
    by_station = station_data.block_maxima_by_station(records)
    assert sorted(by_station) == ["A", "B"]
    assert by_station["B"].maxima == (101.0,)

    dup = station_data.parse_station_csv(
        _write(tmp_path, _season_rows("A", 2010, 100.0) + [("A", "2010-07-01", 90.0)], name="dup.csv"))
    with pytest.raises(DataError):
        station_data.block_maxima(dup)


def test_trend_test():
    """A linear series has the expected slope and a tiny p-value."""
    pairs = [(float(y), 100.0 + 0.5 * (y - 1950) + (0.1 if y % 2 else -0.1)) for y in range(1950, 1990)]
    result = station_data.trend_test(pairs)
    assert result.slope == pytest.approx(0.5, abs=0.01)
    assert result.pvalue < 1e-10
    with pytest.raises(DataError):
        station_data.trend_test(pairs[:2])


def test_acf():
    """Autocorrelations start at 1 and carry the white-noise band."""
    result = station_data.acf([1.0, 2.0, 3.0, 4.0, 5.0], max_lag=2)
    assert result.values[0] == pytest.approx(1.0)
    assert result.values[1] == pytest.approx(0.4)
    assert result.band == pytest.approx(1.96 / math.sqrt(5))
    assert list(result.to_frame()["lag"]) == [0, 1, 2]
    with pytest.raises(DataError):
        station_data.acf([3.0, 3.0, 3.0], max_lag=1)
    with pytest.raises(ConfigError):
        station_data.acf([1.0, 2.0, 3.0], max_lag=3)


def test_gof_tables_untrended():
    """PP, QQ and return-level data for a stationary margin."""
    fit = FittedGev.fixed(GevParams(100.0, 2.0, -0.1))
    pairs = [(float(y), v) for y, v in enumerate([98.0, 99.5, 100.0, 101.0, 103.0])]
    tables = station_data.gof_tables(fit, pairs)
    assert len(tables.pp) == 5 and len(tables.qq) == 5
    assert np.all(np.diff(tables.pp["model"]) > 0)
    assert tables.pp["empirical"].iloc[0] == pytest.approx(1.0 / 6.0)
    assert list(tables.qq["empirical"]) == [98.0, 99.5, 100.0, 101.0, 103.0]
    assert len(tables.return_levels) == 60
    assert tables.return_levels["return_period"].iloc[-1] == pytest.approx(1000.0)
    assert tables.reference_year is None


def test_gof_tables_standardize_trended_fit():
    """Trended maxima are moved to the margin of the reference year."""
    fit = FittedGev(100.0, 0.5, 2.0, -0.1, {}, float("nan"), 3, TrendSpec(True, 2000.0))
    pairs = [(1998.0, 99.0), (2000.0, 100.0), (2002.0, 101.0)]
    tables = station_data.gof_tables(fit, pairs)
    assert tables.reference_year == 2000.0
    assert np.allclose(tables.qq["empirical"], 100.0)
    shifted = station_data.gof_tables(fit, pairs, reference_year=2010.0)
    assert np.allclose(shifted.qq["empirical"], 105.0)


@pytest.mark.skipif(not os.environ.get("EXTREME_PRICER_PHOENIX_CSV"),
                    reason="set EXTREME_PRICER_PHOENIX_CSV to a normalized Phoenix station file")
def test_phoenix_margin():
    """The Phoenix summer maxima give a bounded (negative shape) margin."""
    records = station_data.parse_station_csv(os.environ["EXTREME_PRICER_PHOENIX_CSV"])
    maxima = station_data.block_maxima(records)
    fit = fit_gev(maxima.pairs(), trend=True)
    assert fit.xi < 0
    assert fit.converged


def _many_rows(n_years: int = 60, first_year: int = 1950):
    rows = []
    for k in range(n_years):
        rows += _season_rows("PHX", first_year + k, 110.0 + (k % 7))
    return rows


def test_parse_handles_large_files_without_row_iteration(tmp_path, monkeypatch):
    """Parsing is column-wise and still reports the line of a bad row deep in the file."""
    def refuse(self):
        raise AssertionError("row-wise parsing")

    monkeypatch.setattr(pd.DataFrame, "iterrows", refuse)
    rows = _many_rows()
    records = station_data.parse_station_csv(_write(tmp_path, rows))
    assert len(records) == len(rows) == 60 * 92
    assert records[-1].day == date(2009, 8, 31)

    rows[4000] = ("PHX", "2001-02-30", 100.0)
    rows[4500] = ("PHX", "2002-07-01", "warm")
    with pytest.raises(DataError) as err:
        station_data.parse_station_csv(_write(tmp_path, rows, name="late.csv"))
    assert err.value.line == 4002
    assert "invalid date" in str(err.value)

    rows[4000] = ("", "2001-07-30", "warm")
    with pytest.raises(DataError) as err:
        station_data.parse_station_csv(_write(tmp_path, rows, name="blank.csv"))
    assert err.value.line == 4002
    assert "empty station" in str(err.value)


def test_block_maxima_ignore_record_order(tmp_path):
    """Shuffling the daily records leaves the seasonal maxima unchanged."""
    records = station_data.parse_station_csv(_write(tmp_path, _many_rows(10)))
    shuffled = list(records)
    np.random.default_rng(4).shuffle(shuffled)
    original = station_data.block_maxima(records)
    again = station_data.block_maxima(shuffled)
    assert again.years == original.years
    assert again.maxima == original.maxima
    assert again.days_present == original.days_present


def test_trend_test_ignores_a_level_shift():
    """Adding a constant to every maximum changes neither slope nor p-value."""
    rng = np.random.default_rng(12)
    years = np.arange(1950, 2010, dtype=float)
    values = 100.0 + 0.02 * (years - 1950) + rng.normal(0.0, 1.5, years.size)
    base = station_data.trend_test(list(zip(years, values)))
    shifted = station_data.trend_test(list(zip(years, values + 50.0)))
    assert shifted.slope == pytest.approx(base.slope, abs=1e-10)
    assert shifted.pvalue == pytest.approx(base.pvalue, abs=1e-10)


def test_trend_vanishes_under_permutation():
    """Permuting the maxima over the years destroys a strong trend in nearly every draw."""
    years = np.arange(1950, 2010, dtype=float)
    rng = np.random.default_rng(13)
    values = 100.0 + 0.2 * (years - 1950) + rng.normal(0.0, 1.0, years.size)
    assert station_data.trend_test(list(zip(years, values))).pvalue < 1e-10
    insignificant = sum(
        station_data.trend_test(list(zip(years, rng.permutation(values)))).pvalue > 0.01 for _ in range(100)
    )
    assert insignificant >= 95


def test_acf_of_alternating_series():
    """A series that flips sign every year has lag-one autocorrelation near -1."""
    result = station_data.acf([(-1.0) ** k for k in range(100)], max_lag=2)
    assert result.values[1] == pytest.approx(-1.0, abs=0.02)
    assert result.values[2] == pytest.approx(1.0, abs=0.03)
    assert result.band == pytest.approx(0.196)


def test_pp_table_within_kolmogorov_band():
    """Fitted margins stay inside the 95% Kolmogorov band of the PP plot in most samples."""
    truth = GevParams(100.0, 2.0, -0.1)
    n = 50
    inside = 0
    for seed in range(100):
        pairs = list(zip(range(n), gev_sample(truth, n, seed=500 + seed)))
        try:
            fit = fit_gev(pairs, strict=False)
        except FitError:
            continue
        pp = station_data.gof_tables(fit, pairs).pp
        inside += float(np.max(np.abs(pp["empirical"] - pp["model"]))) < 1.36 / math.sqrt(n)
    assert inside >= 90
