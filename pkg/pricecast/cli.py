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

"""Batch command line: synthesise or ingest prices, train seasonal models, evaluate, forecast and check gradients.

Exit codes are a stable contract: 0 ok, 2 I/O, 3 data, 4 spec, 5 training, 6 checkpoint, 7 gradient check failure.
Results go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Union

import numpy as np
import structlog

import pricecast
from pricecast.checkpoint import (
    Checkpoint,
    TrainingSummary,
    checkpoint_filename,
    history_filename,
    load_checkpoint,
    save_checkpoint,
)
from pricecast.concurrency import map_in_threads
from pricecast.config import RunConfig, load_config
from pricecast.data import (
    NormStats,
    PriceSeries,
    Season,
    SeasonData,
    WindowSample,
    build_seasonal_datasets,
    generate_synthetic,
    make_windows,
    parse_price_csv,
    season_profile,
    season_profile_to_csv,
    split_train_test,
    to_utc_hour,
)
from pricecast.evaluation import (
    PERSISTENCE,
    MetricsRow,
    SummaryRow,
    actual_prices,
    build_report,
    emit_forecast_csv,
    metrics_row,
    persistence_forecast,
    pooled_row,
    predict_windows,
    showcase_week_start,
)
from pricecast.ex import ArgumentError, CheckpointError, DataError, ExitCode, show_ex, to_exit_code
from pricecast.logging import initialise_logging
from pricecast.models import Architecture, build_model
from pricecast.settings import PricecastSettings
from pricecast.training import grad_check_report, gradcheck_case, train

logger = structlog.get_logger(__name__)

GRADCHECK_TOLERANCE = 1e-4
SYNTH_START = "2015-01-01T00:00:00Z"
SYNTH_HOURS = 36480

# Windows normalised with these statistics carry raw prices.
IDENTITY_STATS = NormStats(min=0.0, max=1.0)


def _read_series(path: Path) -> PriceSeries:
    return parse_price_csv(path.read_bytes())


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    logger.info("Wrote file", path=str(path))


def _seasons(choice: str) -> list[Season]:
    return list(Season) if choice == "all" else [Season(choice)]


def _names(value: str) -> list[str]:
    return [name.strip() for name in value.split(",") if name.strip()]


def cmd_synth(args: argparse.Namespace, settings: PricecastSettings) -> int:
    series = generate_synthetic(args.start, args.hours, args.seed, args.noise_sigma)
    _write(args.out, series.to_csv())
    return ExitCode.OK


def _train_season(
    config: RunConfig, architecture: Architecture, season: Season, data: SeasonData, out: Path
) -> tuple[Season, TrainingSummary]:
    log = logger.bind(season=season.value, model=architecture.value)
    if not data.train:
        raise DataError(f"No {season.label} training windows")
    model = build_model(config.model_spec(architecture), config.seed, season)
    model = dataclasses.replace(model, norm_stats=data.stats)
    log.info("Training", train_windows=len(data.train))
    trained, history = train(model, data.train, config.train_config)
    summary = TrainingSummary.from_history(history)
    save_checkpoint(out / checkpoint_filename(architecture.value, season), Checkpoint.from_model(trained, summary))
    _write(out / history_filename(architecture.value, season), history.to_csv())
    return season, summary


def cmd_train(args: argparse.Namespace, settings: PricecastSettings) -> int:
    config = load_config(args.config)
    architecture = Architecture(args.model)
    seasons = _seasons(args.season)
    datasets = build_seasonal_datasets(_read_series(args.data), config.period_bounds, seasons)
    args.out.mkdir(parents=True, exist_ok=True)

    def train_one(season: Season) -> tuple[Season, TrainingSummary]:
        return _train_season(config, architecture, season, datasets[season], args.out)

    results = map_in_threads(train_one, seasons, settings.thread_limit(len(seasons)))
    print("season,best_epoch,best_val_loss")  # noqa: T201
    for season, summary in results:
        print(f"{season.value},{summary.best_epoch},{summary.best_val_loss}")  # noqa: T201
    return ExitCode.OK


def _evaluate_checkpoints(
    name: str, checkpoints: Path, test_series: PriceSeries
) -> tuple[list[MetricsRow], SummaryRow]:
    rows, actual, predicted = [], [], []
    for season in Season:
        path = checkpoints / checkpoint_filename(name, season)
        checkpoint = load_checkpoint(path)
        if checkpoint.spec.architecture != name or checkpoint.season != season:
            raise CheckpointError(f"{path}: holds a {checkpoint.spec.architecture} model for {checkpoint.season.value}")
        model = checkpoint.to_model()
        windows = make_windows(test_series, season, checkpoint.norm_stats)
        if not windows:
            raise DataError(f"No {season.label} test windows in the data")
        season_actual, season_predicted = predict_windows(model, windows)
        rows.append(metrics_row(season, name, season_actual, season_predicted))
        actual.append(season_actual)
        predicted.append(season_predicted)
    return rows, pooled_row(name, np.concatenate(actual), np.concatenate(predicted))


def _evaluate_persistence(test_series: PriceSeries) -> tuple[list[MetricsRow], SummaryRow]:
    rows, actual, predicted = [], [], []
    for season in Season:
        windows: list[WindowSample] = make_windows(test_series, season, IDENTITY_STATS)
        if not windows:
            raise DataError(f"No {season.label} test windows in the data")
        season_actual = actual_prices(windows, IDENTITY_STATS)
        season_predicted = persistence_forecast(windows, IDENTITY_STATS)
        rows.append(metrics_row(season, PERSISTENCE, season_actual, season_predicted))
        actual += season_actual
        predicted += season_predicted
    return rows, pooled_row(PERSISTENCE, actual, predicted)


def cmd_evaluate(args: argparse.Namespace, settings: PricecastSettings) -> int:
    config = load_config(args.config)
    requested = list(dict.fromkeys(_names(args.models) + _names(args.baselines)))
    if unknown := [name for name in requested if name not in (*Architecture, PERSISTENCE)]:
        raise ArgumentError(f"Unknown model or baseline {unknown}; choose from cnn, bp, {PERSISTENCE}")
    if not requested:
        raise ArgumentError("Nothing to evaluate")
    _, test_series = split_train_test(_read_series(args.data), config.period_bounds)

    rows: list[MetricsRow] = []
    pooled: list[SummaryRow] = []
    for name in requested:
        if name == PERSISTENCE:
            model_rows, model_pooled = _evaluate_persistence(test_series)
        else:
            model_rows, model_pooled = _evaluate_checkpoints(name, args.checkpoints, test_series)
        rows += model_rows
        pooled.append(model_pooled)

    report = build_report(rows, pooled)
    if args.out:
        _write(args.out, report.to_csv())
    print(report.to_csv(), end="")  # noqa: T201
    return ExitCode.OK


def cmd_forecast(args: argparse.Namespace, settings: PricecastSettings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.start is not None:
        start = to_utc_hour(args.start)
    else:
        season = Season(args.season) if args.season else checkpoint.season
        start = showcase_week_start(season, load_config(args.config).period_bounds.test_year)
    text = emit_forecast_csv(checkpoint.to_model(), _read_series(args.data), start, args.hours)
    if args.out:
        _write(args.out, text)
    else:
        print(text, end="")  # noqa: T201
    return ExitCode.OK


def cmd_gradcheck(args: argparse.Namespace, settings: PricecastSettings) -> int:
    if args.trials < 1:
        raise ArgumentError(f"--trials must be >= 1, got {args.trials}")
    architecture = Architecture(args.model)
    worst = 0.0
    for trial in range(args.trials):
        seed = args.seed + trial
        model, sample = gradcheck_case(architecture, seed)
        result = grad_check_report(model, sample, args.epsilon)
        logger.debug(
            "Checked gradients", seed=seed, layers=len(model.layers), checked=result.checked, skipped=result.skipped
        )
        worst = max(worst, result.max_relative_error)
    print(f"max_relative_error={worst:.3e}")  # noqa: T201
    if worst >= GRADCHECK_TOLERANCE:
        logger.error("Gradient check failed", max_relative_error=worst, tolerance=GRADCHECK_TOLERANCE)
        return ExitCode.GRADCHECK
    return ExitCode.OK


def cmd_describe(args: argparse.Namespace, settings: PricecastSettings) -> int:
    text = season_profile_to_csv(season_profile(_read_series(args.data)))
    if args.out:
        _write(args.out, text)
    print(text, end="")  # noqa: T201
    return ExitCode.OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pricecast", description="Seasonal hourly electricity price forecasting")
    parser.add_argument("--version", action="version", version=pricecast.__version__)
    commands = parser.add_subparsers(dest="command", required=True)
    season_choices = ["all", *(season.value for season in Season)]
    model_choices = [architecture.value for architecture in Architecture]

    synth = commands.add_parser("synth", help="write a synthetic hourly price CSV")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--start", default=SYNTH_START)
    synth.add_argument("--hours", type=int, default=SYNTH_HOURS)
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--noise-sigma", type=float, default=1.5)
    synth.set_defaults(handler=cmd_synth)

    train_cmd = commands.add_parser("train", help="train one model per season")
    train_cmd.add_argument("--data", type=Path, required=True)
    train_cmd.add_argument("--config", type=Path)
    train_cmd.add_argument("--model", choices=model_choices, default=Architecture.CNN.value)
    train_cmd.add_argument("--season", choices=season_choices, default="all")
    train_cmd.add_argument("--out", type=Path, required=True)
    train_cmd.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", help="score seasonal checkpoints and baselines on the test period")
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--checkpoints", type=Path, required=True)
    evaluate.add_argument("--config", type=Path)
    evaluate.add_argument("--models", default=Architecture.CNN.value, help="comma separated, e.g. cnn,bp")
    evaluate.add_argument("--baselines", default=PERSISTENCE, help="comma separated, e.g. persistence,bp")
    evaluate.add_argument("--out", type=Path)
    evaluate.set_defaults(handler=cmd_evaluate)

    forecast = commands.add_parser("forecast", help="one-step-ahead forecasts for a span of hours")
    forecast.add_argument("--data", type=Path, required=True)
    forecast.add_argument("--checkpoint", type=Path, required=True)
    forecast.add_argument("--start", help="first forecast hour; defaults to the season's showcase week")
    forecast.add_argument("--season", choices=[season.value for season in Season])
    forecast.add_argument("--config", type=Path)
    forecast.add_argument("--hours", type=int, default=168)
    forecast.add_argument("--out", type=Path)
    forecast.set_defaults(handler=cmd_forecast)

    gradcheck = commands.add_parser("gradcheck", help="compare backprop with finite differences on random models")
    gradcheck.add_argument("--model", choices=model_choices, default=Architecture.CNN.value)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--trials", type=int, default=1)
    gradcheck.add_argument("--epsilon", type=float, default=1e-5)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    describe = commands.add_parser("describe", help="per year and season price statistics")
    describe.add_argument("--data", type=Path, required=True)
    describe.add_argument("--out", type=Path)
    describe.set_defaults(handler=cmd_describe)
    return parser


def main(argv: Union[Sequence[str], None] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = PricecastSettings()
    initialise_logging(settings)
    try:
        return int(args.handler(args, settings))
    except Exception as exc:
        code = to_exit_code(exc)
        if code is None:
            raise
        logger.debug("Command failed", command=args.command, traceback=show_ex(exc))
        print(f"pricecast {args.command}: {exc}", file=sys.stderr)  # noqa: T201
        return code


if __name__ == "__main__":
    sys.exit(main())
