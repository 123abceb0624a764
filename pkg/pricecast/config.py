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

"""Run configuration: one flat list of model, training and period settings.

A config file holds `key = value` lines. Blank lines and everything after `#` are ignored, list values are comma
separated and every key may appear at most once::

    # smaller network, faster run
    conv_channels = 4, 8, 16
    epochs = 50
    test_start = 2018-03-01T00:00:00Z
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Union, get_origin

import structlog
from pydantic import AwareDatetime, BaseModel, ConfigDict, ValidationError

from pricecast.data import PeriodBounds
from pricecast.ex import ConfigError, SpecError
from pricecast.models import Architecture, CnnSpec, MlpSpec, ModelSpec, validate_spec
from pricecast.training import TrainConfig

logger = structlog.get_logger(__name__)

_CNN = CnnSpec()
_MLP = MlpSpec()
_TRAIN = TrainConfig()
_BOUNDS = PeriodBounds()


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    conv_channels: list[int] = _CNN.conv_channels
    kernel: int = _CNN.kernel
    pool_width: int = _CNN.pool_width
    dense_widths: list[int] = _CNN.dense_widths
    hidden_widths: list[int] = _MLP.hidden_widths

    learning_rate: float = _TRAIN.learning_rate
    epochs: int = _TRAIN.epochs
    batch_size: int = _TRAIN.batch_size
    seed: int = _TRAIN.seed
    patience: int = _TRAIN.patience
    val_fraction: float = _TRAIN.val_fraction
    beta1: float = _TRAIN.beta1
    beta2: float = _TRAIN.beta2
    epsilon: float = _TRAIN.epsilon
    clip_gradients: bool = _TRAIN.clip_gradients
    clip_value: float = _TRAIN.clip_value

    train_start: AwareDatetime = _BOUNDS.train_start
    train_end: AwareDatetime = _BOUNDS.train_end
    test_start: AwareDatetime = _BOUNDS.test_start
    test_end: AwareDatetime = _BOUNDS.test_end

    def _pick(self, target: type[BaseModel]) -> dict[str, Any]:
        return {name: getattr(self, name) for name in target.model_fields if name in type(self).model_fields}

    @property
    def cnn_spec(self) -> CnnSpec:
        return CnnSpec(**self._pick(CnnSpec))

    @property
    def mlp_spec(self) -> MlpSpec:
        return MlpSpec(**self._pick(MlpSpec))

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self._pick(TrainConfig))

    @property
    def period_bounds(self) -> PeriodBounds:
        return PeriodBounds(**self._pick(PeriodBounds))

    def model_spec(self, architecture: Architecture) -> ModelSpec:
        return self.cnn_spec if architecture == Architecture.CNN else self.mlp_spec


def _split_lines(text: str) -> dict[str, Union[str, list[str]]]:
    values: dict[str, Union[str, list[str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key not in RunConfig.model_fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if get_origin(RunConfig.model_fields[key].annotation) is list:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        else:
            values[key] = value
    return values


def _describe(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in exc.errors())


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a run configuration; every problem surfaces here as ConfigError.

    >>> config = parse_config("epochs = 5  # quick\\nconv_channels = 2, 4, 8")
    >>> config.train_config.epochs, config.cnn_spec.conv_channels
    (5, [2, 4, 8])
    """
    values = _split_lines(text)
    try:
        config = RunConfig.model_validate(values)
        validate_spec(config.cnn_spec)
        validate_spec(config.mlp_spec)
        train = config.train_config
        bounds = config.period_bounds
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_describe(exc)}") from exc
    except SpecError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    logger.debug("Parsed run configuration", train=train, bounds=bounds)
    return config


def load_config(path: Union[Path, None]) -> RunConfig:
    """Read a config file; without a path every setting takes its default."""
    if path is None:
        return RunConfig()
    return parse_config(path.read_text())
