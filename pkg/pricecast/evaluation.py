#  Copyright 2024 SURF.
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#          http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
#

"""Forecast error metrics, baselines, seasonal reports and weekly forecast exports."""

from __future__ import annotations

from collections.abc import Sequence
from typing import Literal, Union

import numpy as np
import pandas as pd
import structlog
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict

from pricecast.data import (
    HOUR,
    WINDOW_LENGTH,
    NormStats,
    PriceSeries,
    Season,
    TimestampLike,
    WindowSample,
    denormalize,
    format_timestamp,
    normalize,
    stack_windows,
    to_utc_hour,
)
from pricecast.ex import ArgumentError, DataError, MetricError, ReportError
from pricecast.models import Model, model_predict_batch
from pricecast.tensor import Tensor

logger = structlog.get_logger(__name__)

MAPE_DENOMINATOR_GUARD = 1e-6
PERSISTENCE = "persistence"
FORECAST_HEADER = "timestamp,actual,predicted"

ArrayLike = Union[Sequence[float], Tensor]

# First month of each season's weekly comparison panel; winter falls in the year after the test year.
_SHOWCASE_MONTH = {Season.SPRING: (0, 4), Season.SUMMER: (0, 7), Season.FALL: (0, 10), Season.WINTER: (1, 1)}


def _pair(actual: ArrayLike, predicted: ArrayLike) -> tuple[Tensor, Tensor]:
    y = np.asarray(actual, dtype=np.float64)
    y_hat = np.asarray(predicted, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ArgumentError(f"actual and predicted must be equally long vectors, got {y.shape} and {y_hat.shape}")
    if not len(y):
        raise ArgumentError("Cannot compute a metric over zero prediction points")
    return y, y_hat


def mape(actual: ArrayLike, predicted: ArrayLike) -> float:
    """Mean absolute percentage error, in percent.

    >>> mape([100.0, 200.0], [110.0, 180.0])
    10.0
    """
    y, y_hat = _pair(actual, predicted)
    if (small := np.flatnonzero(np.abs(y) <= MAPE_DENOMINATOR_GUARD)).size:
        raise MetricError(f"MAPE is undefined: actual value {y[small[0]]} at index {small[0]} is (close to) zero")
    return float(np.mean(np.abs(y - y_hat) / y) * 100.0)


def rmse(actual: ArrayLike, predicted: ArrayLike) -> float:
    """Root mean square error, in price units.

    >>> round(rmse([0.0, 0.0], [3.0, 4.0]), 7)
    3.5355339
    """
    y, y_hat = _pair(actual, predicted)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


class MetricsRow(BaseModel):
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    season: Season
    model_name: str
    mape: float
    rmse: float
    n: int


class SummaryRow(BaseModel):
    """A row over all four seasons: the mean of the seasonal metrics, or the metrics of all test hours pooled."""

    model_config = ConfigDict(frozen=True, protected_namespaces=())

    kind: Literal["Average", "Pooled"]
    model_name: str
    mape: float
    rmse: float
    n: int


def metrics_row(season: Season, model_name: str, actual: ArrayLike, predicted: ArrayLike) -> MetricsRow:
    return MetricsRow(
        season=season, model_name=model_name, mape=mape(actual, predicted), rmse=rmse(actual, predicted), n=len(actual)
    )


def pooled_row(model_name: str, actual: ArrayLike, predicted: ArrayLike) -> SummaryRow:
    return SummaryRow(
        kind="Pooled", model_name=model_name, mape=mape(actual, predicted), rmse=rmse(actual, predicted), n=len(actual)
    )


def persistence_forecast(test_windows: Sequence[WindowSample], stats: NormStats) -> list[float]:
    """Predict every hour as the price of the hour before it (last element of the window, denormalised)."""
    return [denormalize(float(window.input[-1]), stats) for window in test_windows]


def actual_prices(test_windows: Sequence[WindowSample], stats: NormStats) -> list[float]:
    return [denormalize(window.target, stats) for window in test_windows]


def predict_windows(model: Model, test_windows: Sequence[WindowSample]) -> tuple[Tensor, Tensor]:
    """Denormalised actual and predicted prices for windows normalised with the model's own statistics."""
    if model.norm_stats is None:
        raise ArgumentError("Model has no normalisation statistics; it was never fitted to a season")
    if not test_windows:
        raise ArgumentError("No windows to predict")
    inputs, targets = stack_windows(test_windows)
    predicted = model_predict_batch(model, inputs)
    return denormalize(targets, model.norm_stats), denormalize(predicted, model.norm_stats)


def evaluate_model(
    model: Model, test_windows: Sequence[WindowSample], model_name: Union[str, None] = None
) -> MetricsRow:
    if model.meta is None or model.meta.season is None:
        raise ArgumentError("Model metadata does not name the season it was trained for")
    actual, predicted = predict_windows(model, test_windows)
    return metrics_row(model.meta.season, model_name or model.meta.architecture.value, actual, predicted)


class Report(BaseModel):
    rows: list[MetricsRow]
    averages: list[SummaryRow]
    pooled: list[SummaryRow] = []

    @property
    def model_names(self) -> list[str]:
        return [average.model_name for average in self.averages]

    def to_csv(self) -> str:
        lines = ["model,season,mape,rmse,n"]
        for name in self.model_names:
            own = (r for r in self.rows if r.model_name == name)
            seasonal = sorted(own, key=lambda r: list(Season).index(r.season))
            lines += [f"{name},{r.season.label},{r.mape:.2f},{r.rmse:.2f},{r.n}" for r in seasonal]
            summaries = [s for s in self.averages + self.pooled if s.model_name == name]
            lines += [f"{name},{s.kind},{s.mape:.2f},{s.rmse:.2f},{s.n}" for s in summaries]
        return "\n".join(lines) + "\n"

    def to_table(self, metric: Literal["mape", "rmse"]) -> str:
        """One metric as a season-by-model table with an Average row."""
        lines = ["\t".join(["season", *self.model_names])]
        for season in Season:
            cells = [
                f"{getattr(r, metric):.2f}"
                for name in self.model_names
                for r in self.rows
                if r.model_name == name and r.season == season
            ]
            lines.append("\t".join([season.label, *cells]))
        lines.append("\t".join(["Average", *(f"{getattr(a, metric):.2f}" for a in self.averages)]))
        return "\n".join(lines) + "\n"


def build_report(rows: Sequence[MetricsRow], pooled: Sequence[SummaryRow] = ()) -> Report:
    """Attach per-model averages (arithmetic mean over the four seasons) to the seasonal rows.

    >>> rows = [
    ...     MetricsRow(season=season, model_name="cnn", mape=mape_, rmse=rmse_, n=10)
    ...     for season, mape_, rmse_ in zip(Season, [5.36, 5.18, 5.38, 5.49], [2.19, 2.85, 3.03, 4.13])
    ... ]
    >>> print(build_report(rows).to_csv().splitlines()[-1])
    cnn,Average,5.35,3.05,40
    """
    names = list(dict.fromkeys(row.model_name for row in rows))
    averages = []
    for name in names:
        seasonal = [row for row in rows if row.model_name == name]
        seasons = [row.season for row in seasonal]
        if sorted(seasons) != sorted(Season) or len(seasons) != len(Season):
            missing = sorted(set(Season) - set(seasons))
            raise ReportError(f"{name} needs exactly one row per season (missing: {[s.label for s in missing]})")
        averages.append(
            SummaryRow(
                kind="Average",
                model_name=name,
                mape=float(np.mean([row.mape for row in seasonal])),
                rmse=float(np.mean([row.rmse for row in seasonal])),
                n=sum(row.n for row in seasonal),
            )
        )
    return Report(rows=list(rows), averages=averages, pooled=list(pooled))


def showcase_week_start(season: Season, test_year: int) -> pd.Timestamp:
    """First hour of the week shown for a season: April, July, October of the test year, January after it.

    >>> showcase_week_start(Season.WINTER, 2018)
    Timestamp('2019-01-01 00:00:00+0000', tz='UTC')
    """
    year_offset, month = _SHOWCASE_MONTH[season]
    return pd.Timestamp(year=test_year + year_offset, month=month, day=1, tz="UTC")


def emit_forecast_csv(model: Model, series: PriceSeries, start: TimestampLike, hours: int) -> str:
    """One-step-ahead forecasts for `hours` hours from `start`, each from the true preceding 23 hours."""
    if model.norm_stats is None:
        raise ArgumentError("Model has no normalisation statistics; it was never fitted to a season")
    if hours < 0:
        raise ArgumentError(f"hours must be >= 0, got {hours}")
    lines = [FORECAST_HEADER]
    if hours == 0:
        return FORECAST_HEADER + "\n"

    first_ts = to_utc_hour(start)
    first = series.position(first_ts - WINDOW_LENGTH * HOUR)
    last = series.position(first_ts + (hours - 1) * HOUR)
    if first is None or last is None:
        raise DataError(
            f"Price data must cover {format_timestamp(first_ts - WINDOW_LENGTH * HOUR)} up to "
            f"{format_timestamp(first_ts + (hours - 1) * HOUR)} to forecast {hours} hours"
        )
    values = series.values[first : last + 1]
    windows = sliding_window_view(normalize(values, model.norm_stats), WINDOW_LENGTH + 1)
    predicted = denormalize(model_predict_batch(model, windows[:, :WINDOW_LENGTH]), model.norm_stats)
    for offset, (actual, forecast) in enumerate(zip(values[WINDOW_LENGTH:].tolist(), predicted.tolist())):
        lines.append(f"{format_timestamp(first_ts + offset * HOUR)},{actual:.6f},{forecast:.6f}")
    logger.debug("Emitted forecast", start=format_timestamp(first_ts), hours=hours)
    return "\n".join(lines) + "\n"
