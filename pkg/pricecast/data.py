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

"""Hourly price ingestion, seasonal partitioning, sliding windows, normalisation and synthetic data.

The CSV contract is a `timestamp,price` header followed by `YYYY-MM-DDTHH:00:00Z,<price>` rows in UTC. Lines starting
with `#` are comments. Local time and daylight saving are the data supplier's concern.
"""

from __future__ import annotations

import math
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from datetime import datetime
from enum import StrEnum
from typing import NamedTuple, Union, overload

import numpy as np
import pandas as pd
import structlog
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import AwareDatetime, BaseModel, ConfigDict, model_validator

from pricecast.ex import ArgumentError, DataError, InvariantError, ParseError
from pricecast.tensor import Prng, Tensor

logger = structlog.get_logger(__name__)

WINDOW_LENGTH = 23
MAX_GAP_HOURS = 6
HOUR = pd.Timedelta(hours=1)
CSV_HEADER = "timestamp,price"
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:00:00Z"

_ROW = re.compile(r"^(\d{4}-\d{2}-\d{2}T\d{2}):00:00Z,([^,]+)$")

TimestampLike = Union[str, datetime, pd.Timestamp]


class Season(StrEnum):
    SPRING = "spring"
    SUMMER = "summer"
    FALL = "fall"
    WINTER = "winter"

    @property
    def label(self) -> str:
        return self.value.title()


# Index 0 is unused so the array can be indexed by month number directly.
_SEASON_BY_MONTH = np.array(
    [None]
    + [Season.WINTER] * 2
    + [Season.SPRING] * 3
    + [Season.SUMMER] * 3
    + [Season.FALL] * 3
    + [Season.WINTER],
    dtype=object,
)


def assign_season(timestamp: Union[datetime, pd.Timestamp]) -> Season:
    """Season of a timestamp by month: Mar-May spring, Jun-Aug summer, Sep-Nov fall, Dec-Feb winter.

    >>> assign_season(datetime(2018, 3, 1))
    <Season.SPRING: 'spring'>
    >>> assign_season(datetime(2018, 12, 15, 12))
    <Season.WINTER: 'winter'>
    """
    return _SEASON_BY_MONTH[timestamp.month]


def season_labels(index: pd.DatetimeIndex) -> np.ndarray:
    return _SEASON_BY_MONTH[index.month.to_numpy()]


def to_utc_hour(value: TimestampLike) -> pd.Timestamp:
    """Interpret `value` as a UTC timestamp on an exact hour boundary.

    >>> to_utc_hour("2018-04-01T00:00:00Z")
    Timestamp('2018-04-01 00:00:00+0000', tz='UTC')
    """
    try:
        ts = pd.Timestamp(value)
    except ValueError as e:
        raise ArgumentError(f"Not a timestamp: {value!r}") from e
    ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
    if ts != ts.floor("h"):
        raise ArgumentError(f"Timestamp {value!r} is not on an hour boundary")
    return ts


def format_timestamp(ts: pd.Timestamp) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


class PriceRecord(NamedTuple):
    timestamp: pd.Timestamp
    price: float


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Contiguous hourly prices in $/MWh, indexed by UTC hour.

    `interpolated` counts the hours that were filled in during ingestion.
    """

    prices: pd.Series
    interpolated: int = 0

    def __post_init__(self) -> None:
        index = self.prices.index
        if not isinstance(index, pd.DatetimeIndex) or str(index.tz) != "UTC":
            raise InvariantError("PriceSeries needs a UTC DatetimeIndex")
        if len(index) > 1 and not ((index[1:] - index[:-1]) == HOUR).all():
            raise InvariantError("PriceSeries timestamps must be consecutive hours")
        if not np.isfinite(self.prices.to_numpy()).all():
            raise InvariantError("PriceSeries contains non-finite prices")

    @classmethod
    def from_arrays(cls, index: pd.DatetimeIndex, values: Sequence[float], interpolated: int = 0) -> PriceSeries:
        return cls(pd.Series(np.asarray(values, dtype=np.float64), index=index, name="price"), interpolated)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def index(self) -> pd.DatetimeIndex:
        return self.prices.index

    @property
    def values(self) -> Tensor:
        return self.prices.to_numpy(dtype=np.float64)

    @property
    def start(self) -> pd.Timestamp:
        return self.index[0]

    @property
    def end(self) -> pd.Timestamp:
        """Last timestamp in the series (inclusive)."""
        return self.index[-1]

    def records(self) -> Iterator[PriceRecord]:
        for ts, price in zip(self.index, self.prices.tolist()):
            yield PriceRecord(ts, price)

    def slice(self, start: TimestampLike, end: TimestampLike) -> PriceSeries:
        """Hours in `[start, end)`."""
        index = self.index
        mask = (index >= to_utc_hour(start)) & (index < to_utc_hour(end))
        return PriceSeries(self.prices[mask])

    def position(self, timestamp: TimestampLike) -> Union[int, None]:
        ts = to_utc_hour(timestamp)
        if not len(self) or ts < self.start or ts > self.end:
            return None
        return int((ts - self.start) // HOUR)

    def to_csv(self) -> str:
        # repr() gives the shortest text that parses back to the same float
        lines = [CSV_HEADER] + [f"{format_timestamp(ts)},{price!r}" for ts, price in self.records()]
        return "\n".join(lines) + "\n"


def _parse_row(line: str, lineno: int) -> tuple[datetime, float]:
    if not (match := _ROW.match(line)):
        raise ParseError(f"malformed row {line!r}, expected 'YYYY-MM-DDTHH:00:00Z,<price>'", lineno)
    try:
        timestamp = datetime.strptime(match.group(1) + "+0000", "%Y-%m-%dT%H%z")
        price = float(match.group(2))
    except ValueError as e:
        raise ParseError(f"malformed row {line!r}: {e}", lineno) from e
    if not math.isfinite(price):
        raise ParseError(f"price must be finite, got {match.group(2)!r}", lineno)
    return timestamp, price


def parse_price_csv(text: Union[str, bytes]) -> PriceSeries:
    """Parse, sort and validate a price CSV and fill gaps of up to six hours by linear interpolation."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"input is not UTF-8: {e}") from e

    seen: dict[datetime, int] = {}
    prices: list[float] = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line.replace(" ", "") != CSV_HEADER:
                raise ParseError(f"expected header {CSV_HEADER!r}, got {line!r}", lineno)
            header_seen = True
            continue
        timestamp, price = _parse_row(line, lineno)
        if timestamp in seen:
            raise ParseError(f"duplicate timestamp {line.split(',')[0]} (first on line {seen[timestamp]})", lineno)
        seen[timestamp] = lineno
        prices.append(price)

    if not header_seen:
        raise ParseError(f"missing header {CSV_HEADER!r}")
    raw_series = pd.Series(prices, index=pd.DatetimeIndex(list(seen), tz="UTC"), dtype=np.float64).sort_index()
    return _repair_gaps(raw_series)


def _repair_gaps(raw: pd.Series) -> PriceSeries:
    if len(raw) < 2:
        return PriceSeries(raw.rename("price"))

    missing = ((raw.index[1:] - raw.index[:-1]) // HOUR).to_numpy() - 1
    worst = int(missing.argmax())
    if missing[worst] > MAX_GAP_HOURS:
        raise DataError(
            f"gap of {missing[worst]} missing hours after {format_timestamp(raw.index[worst])} "
            f"exceeds the {MAX_GAP_HOURS} hour repair limit"
        )
    full = raw.reindex(pd.date_range(raw.index[0], raw.index[-1], freq=HOUR))
    interpolated = int(full.isna().sum())
    series = PriceSeries(full.interpolate(method="linear").rename("price"), interpolated)
    logger.info("Ingested price series", records=len(series), interpolated=interpolated)
    return series


class NormStats(BaseModel):
    """Min-max normalisation statistics in $/MWh, taken from one season's training data.

    `source_end` is the latest timestamp whose price contributed to the statistics.
    """

    model_config = ConfigDict(frozen=True)

    min: float
    max: float
    source_end: Union[AwareDatetime, None] = None

    @property
    def span(self) -> float:
        if not self.max > self.min:
            raise DataError(f"Normalisation needs max > min, got min={self.min} max={self.max} (constant series?)")
        return self.max - self.min


@overload
def normalize(x: float, stats: NormStats) -> float: ...


@overload
def normalize(x: Tensor, stats: NormStats) -> Tensor: ...


def normalize(x: Union[float, Tensor], stats: NormStats) -> Union[float, Tensor]:
    """Map prices onto [0, 1] using training-set extremes.

    >>> normalize(5.0, NormStats(min=0.0, max=10.0))
    0.5
    """
    return (x - stats.min) / stats.span


@overload
def denormalize(x: float, stats: NormStats) -> float: ...


@overload
def denormalize(x: Tensor, stats: NormStats) -> Tensor: ...


def denormalize(x: Union[float, Tensor], stats: NormStats) -> Union[float, Tensor]:
    return x * stats.span + stats.min


@dataclass(frozen=True, eq=False)
class WindowSample:
    """Normalised prices of hours t-23 .. t-1 and the normalised price at hour t."""

    input: Tensor
    target: float
    target_time: pd.Timestamp


def stack_windows(samples: Sequence[WindowSample]) -> tuple[Tensor, Tensor]:
    """Stack samples into a `[N, 23]` input matrix and a `[N]` target vector."""
    if not samples:
        return np.zeros((0, WINDOW_LENGTH)), np.zeros(0)
    return np.stack([s.input for s in samples]), np.array([s.target for s in samples])


def _target_positions(series: PriceSeries, season: Season) -> np.ndarray:
    positions = np.arange(WINDOW_LENGTH, len(series))
    return positions[season_labels(series.index)[WINDOW_LENGTH:] == season]


def make_windows(series: PriceSeries, season: Season, stats: NormStats) -> list[WindowSample]:
    """One sample per hour t of `season` that has 23 hours of history in `series`.

    The history may reach into the previous season; the target hour decides the classification.
    """
    span = stats.span
    if len(series) <= WINDOW_LENGTH:
        return []
    normalized = (series.values - stats.min) / span
    windows = sliding_window_view(normalized, WINDOW_LENGTH + 1)
    index = series.index
    return [
        WindowSample(
            input=windows[t - WINDOW_LENGTH, :WINDOW_LENGTH].copy(),
            target=float(windows[t - WINDOW_LENGTH, WINDOW_LENGTH]),
            target_time=index[t],
        )
        for t in _target_positions(series, season)
    ]


def compute_norm_stats(series: PriceSeries, season: Season) -> NormStats:
    """Extremes over every price that feeds a `season` window of `series` (inputs and targets)."""
    targets = np.zeros(len(series), dtype=np.int64)
    targets[_target_positions(series, season)] = 1
    if not targets.any():
        raise DataError(f"No {season.label} training windows to compute normalisation statistics from")
    # position i feeds a window iff some target lies in [i, i + 23]
    covered = np.convolve(targets, np.ones(WINDOW_LENGTH + 1, dtype=np.int64))[WINDOW_LENGTH:] > 0
    values = series.values[covered]
    if not values.max() > values.min():
        raise DataError(f"{season.label} training prices are constant; cannot normalise")
    return NormStats(
        min=float(values.min()), max=float(values.max()), source_end=series.index[covered][-1].to_pydatetime()
    )


class PeriodBounds(BaseModel):
    """Target periods, end-exclusive. The default test period is Mar 2018 - Feb 2019 so winter is contiguous."""

    model_config = ConfigDict(frozen=True)

    train_start: AwareDatetime = datetime.fromisoformat("2015-01-01T00:00:00+00:00")
    train_end: AwareDatetime = datetime.fromisoformat("2018-01-01T00:00:00+00:00")
    test_start: AwareDatetime = datetime.fromisoformat("2018-03-01T00:00:00+00:00")
    test_end: AwareDatetime = datetime.fromisoformat("2019-03-01T00:00:00+00:00")

    @model_validator(mode="after")
    def check_order(self) -> PeriodBounds:
        if not self.train_start < self.train_end <= self.test_start < self.test_end:
            raise ValueError("periods must satisfy train_start < train_end <= test_start < test_end")
        return self

    @property
    def test_year(self) -> int:
        return self.test_start.year


def _has_targets(series: PriceSeries, start: pd.Timestamp) -> bool:
    return len(series) > WINDOW_LENGTH and series.end >= start and (series.index[WINDOW_LENGTH:] >= start).any()


def split_train_test(series: PriceSeries, bounds: PeriodBounds) -> tuple[PriceSeries, PriceSeries]:
    """Cut the train and test periods out of `series`, each with up to 23 lead-in hours of history."""
    lead_in = WINDOW_LENGTH * HOUR
    train = series.slice(pd.Timestamp(bounds.train_start) - lead_in, bounds.train_end)
    test = series.slice(pd.Timestamp(bounds.test_start) - lead_in, bounds.test_end)
    if not _has_targets(train, pd.Timestamp(bounds.train_start)):
        raise DataError(f"No training targets between {bounds.train_start} and {bounds.train_end}")
    if not _has_targets(test, pd.Timestamp(bounds.test_start)):
        raise DataError(f"No test targets between {bounds.test_start} and {bounds.test_end}")
    return train, test


@dataclass(frozen=True, eq=False)
class SeasonData:
    train: list[WindowSample]
    test: list[WindowSample]
    stats: NormStats


SeasonalDatasets = dict[Season, SeasonData]


def build_season(train_series: PriceSeries, test_series: PriceSeries, season: Season) -> SeasonData:
    stats = compute_norm_stats(train_series, season)
    train = make_windows(train_series, season, stats)
    test = make_windows(test_series, season, stats)
    if not test:
        raise DataError(f"No {season.label} test windows in the test period")
    if stats.source_end is None or not stats.source_end < test[0].target_time:
        raise InvariantError(f"{season.label} normalisation statistics overlap the test period")
    logger.debug("Built season dataset", season=season.value, train=len(train), test=len(test), stats=stats)
    return SeasonData(train, test, stats)


def build_seasonal_datasets(
    series: PriceSeries, bounds: PeriodBounds, seasons: Iterable[Season] = tuple(Season)
) -> SeasonalDatasets:
    train_series, test_series = split_train_test(series, bounds)
    return {season: build_season(train_series, test_series, season) for season in seasons}


def generate_synthetic(start: TimestampLike, hours: int, seed: int, noise_sigma: float = 1.5) -> PriceSeries:
    """Daily and weekly sinusoids around 30 $/MWh, with a higher and noisier winter, plus seeded Gaussian noise.

    >>> series = generate_synthetic("2018-04-02", 3, seed=42, noise_sigma=0.0)
    >>> len(series), series.prices.tolist()[0]
    (3, 30.0)
    """
    if hours < 0:
        raise ArgumentError(f"hours must be >= 0, got {hours}")
    if noise_sigma < 0:
        raise ArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    index = pd.date_range(to_utc_hour(start), periods=hours, freq=HOUR)
    hour_of_day = index.hour.to_numpy()
    hour_of_week = index.dayofweek.to_numpy() * 24 + hour_of_day
    winter = season_labels(index) == Season.WINTER

    noise, _ = Prng(seed).gaussian_array(hours)
    prices = (
        30.0
        + 8.0 * np.sin(2.0 * np.pi * hour_of_day / 24.0)
        + 4.0 * np.sin(2.0 * np.pi * hour_of_week / 168.0)
        + np.where(winter, 10.0, 0.0)
        + noise_sigma * np.where(winter, 3.0, 1.0) * noise
    )
    return PriceSeries.from_arrays(index, np.maximum(prices, 1.0))


class SeasonProfile(BaseModel):
    year: int
    season: Season
    n: int
    mean: float
    std: float
    min: float
    max: float


def season_profile(series: PriceSeries) -> list[SeasonProfile]:
    """Descriptive price statistics per calendar year and season."""
    frame = pd.DataFrame(
        {"price": series.values, "year": series.index.year, "season": season_labels(series.index).astype(str)}
    )
    grouped = frame.groupby(["year", "season"], sort=False)["price"].agg(["count", "mean", "std", "min", "max"])
    return [
        SeasonProfile(
            year=int(year),
            season=Season(season),
            n=int(row["count"]),
            mean=float(row["mean"]),
            std=float(row["std"]) if row["count"] > 1 else 0.0,
            min=float(row["min"]),
            max=float(row["max"]),
        )
        for (year, season), row in grouped.iterrows()
    ]


def season_profile_to_csv(profiles: Iterable[SeasonProfile]) -> str:
    lines = ["year,season,n,mean,std,min,max"] + [
        f"{p.year},{p.season.label},{p.n},{p.mean:.2f},{p.std:.2f},{p.min:.2f},{p.max:.2f}" for p in profiles
    ]
    return "\n".join(lines) + "\n"
