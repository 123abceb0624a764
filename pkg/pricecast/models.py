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

"""The convolutional price model and the back-propagation MLP baseline as ordered layer stacks."""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, Literal, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from pricecast.data import WINDOW_LENGTH, NormStats, Season
from pricecast.ex import ShapeError, SpecError
from pricecast.layers import (
    Conv1d,
    Dense,
    Flatten,
    Layer,
    MaxPool1d,
    Relu,
    layer_forward,
    layer_parameters,
    layer_with_parameters,
    output_length,
)
from pricecast.tensor import Prng, Tensor, he_init

logger = structlog.get_logger(__name__)


class Architecture(StrEnum):
    CNN = "cnn"
    BP = "bp"


class CnnSpec(BaseModel):
    """Hyperparameters of the convolutional model: three conv/ReLU/max-pool stages, then dense layers."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    architecture: Literal["cnn"] = "cnn"
    conv_channels: list[int] = Field(default_factory=lambda: [8, 16, 32])
    kernel: int = 3
    pool_width: int = 2
    dense_widths: list[int] = Field(default_factory=lambda: [16])
    input_len: Literal[23] = WINDOW_LENGTH


class MlpSpec(BaseModel):
    """Hidden layer widths of the back-propagation baseline."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    architecture: Literal["bp"] = "bp"
    hidden_widths: list[int] = Field(default_factory=lambda: [64, 32])
    input_len: Literal[23] = WINDOW_LENGTH


ModelSpec = Union[CnnSpec, MlpSpec]


class ModelMeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    spec: ModelSpec = Field(discriminator="architecture")
    seed: int
    season: Union[Season, None] = None

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.spec.architecture)


@dataclass(frozen=True, eq=False)
class Model:
    layers: tuple[Layer, ...]
    norm_stats: Union[NormStats, None] = None
    meta: Union[ModelMeta, None] = None


def _check_widths(name: str, widths: Sequence[int]) -> None:
    if bad := [w for w in widths if w < 1]:
        raise SpecError(f"{name} must all be >= 1, got {list(widths)} (offending: {bad})")


def shape_chain(spec: CnnSpec) -> list[int]:
    """Sequence lengths through the conv/pool stages, starting at the input length.

    >>> shape_chain(CnnSpec())
    [23, 21, 10, 8, 4, 2, 1]
    >>> shape_chain(CnnSpec(kernel=25))
    Traceback (most recent call last):
        ...
    pricecast.ex.SpecError: conv1: input length 23 is shorter than kernel 25
    """
    if len(spec.conv_channels) != 3:
        raise SpecError(f"conv_channels needs exactly three entries, got {spec.conv_channels}")
    _check_widths("conv_channels", spec.conv_channels)
    if spec.kernel < 1 or spec.pool_width < 1:
        raise SpecError(f"kernel and pool_width must be >= 1, got {spec.kernel}/{spec.pool_width}")

    chain = [spec.input_len]
    for stage in range(1, len(spec.conv_channels) + 1):
        length = chain[-1]
        if length < spec.kernel:
            raise SpecError(f"conv{stage}: input length {length} is shorter than kernel {spec.kernel}")
        chain.append(output_length(length, spec.kernel, 1))
        length = chain[-1]
        if length < spec.pool_width:
            raise SpecError(f"pool{stage}: input length {length} is shorter than pool width {spec.pool_width}")
        chain.append(output_length(length, spec.pool_width, spec.pool_width))
    return chain


def validate_spec(spec: ModelSpec) -> None:
    """Check every width and the shape chain without building anything; raises SpecError."""
    if isinstance(spec, CnnSpec):
        shape_chain(spec)
        _check_widths("dense_widths", spec.dense_widths)
    else:
        _check_widths("hidden_widths", spec.hidden_widths)


def _draw_widths(prng: Prng, max_layers: int, max_width: int) -> tuple[list[int], Prng]:
    count, prng = prng.next_below(max_layers + 1)
    widths = []
    for _ in range(count):
        width, prng = prng.next_below(max_width)
        widths.append(width + 1)
    return widths, prng


def random_spec(architecture: Architecture, prng: Prng) -> tuple[ModelSpec, Prng]:
    """Draw a small valid spec of the given architecture, for gradient checks and property sweeps."""
    if architecture == Architecture.BP:
        hidden, prng = _draw_widths(prng, 2, 16)
        return MlpSpec(hidden_widths=hidden), prng
    channels = []
    for _ in range(3):
        width, prng = prng.next_below(4)
        channels.append(width + 2)
    kernel, prng = prng.next_below(2)
    dense, prng = _draw_widths(prng, 2, 8)
    return CnnSpec(conv_channels=channels, kernel=kernel + 2, pool_width=2, dense_widths=dense), prng


def _dense_stack(widths: Sequence[int], in_dim: int, prng: Prng) -> tuple[list[Layer], Prng]:
    layers: list[Layer] = []
    for width in [*widths, 1]:
        weights, prng = he_init(prng, (width, in_dim), in_dim)
        layers.append(Dense(weights, np.zeros(width)))
        layers.append(Relu())
        in_dim = width
    # No activation after the output layer: normalised prices are unbounded above.
    return layers[:-1], prng


def build_seasonal_cnn(spec: CnnSpec, prng: Prng) -> tuple[Model, Prng]:
    """Build conv->ReLU->max-pool three times, flatten, dense(+ReLU) per dense width and a scalar output."""
    validate_spec(spec)
    chain = shape_chain(spec)

    layers: list[Layer] = []
    in_channels = 1
    for channels in spec.conv_channels:
        fan_in = in_channels * spec.kernel
        weights, prng = he_init(prng, (channels, in_channels, spec.kernel), fan_in)
        layers += [Conv1d(weights, np.zeros(channels)), Relu(), MaxPool1d(spec.pool_width, spec.pool_width)]
        in_channels = channels
    layers.append(Flatten())
    dense, prng = _dense_stack(spec.dense_widths, in_channels * chain[-1], prng)
    model = Model(tuple(layers + dense))
    logger.debug("Built convolutional model", shape_chain=chain, parameters=model_param_count(model))
    return model, prng


def build_bp_mlp(spec: MlpSpec, prng: Prng) -> tuple[Model, Prng]:
    """Build dense->ReLU per hidden width and a scalar output; no hidden widths gives an affine model."""
    validate_spec(spec)
    layers, prng = _dense_stack(spec.hidden_widths, spec.input_len, prng)
    model = Model(tuple(layers))
    logger.debug("Built MLP model", hidden_widths=spec.hidden_widths, parameters=model_param_count(model))
    return model, prng


def build_model(spec: ModelSpec, seed: int, season: Union[Season, None] = None) -> Model:
    """Build either architecture from a fresh `Prng(seed)` and record the spec echo in the model."""
    prng = Prng(seed)
    if isinstance(spec, CnnSpec):
        model, _ = build_seasonal_cnn(spec, prng)
    else:
        model, _ = build_bp_mlp(spec, prng)
    return dataclasses.replace(model, meta=ModelMeta(spec=spec, seed=seed, season=season))


def _to_layout(model: Model, windows: Tensor) -> Tensor:
    if windows.shape[-1] != WINDOW_LENGTH or windows.ndim not in (1, 2):
        raise ShapeError(f"Expected windows of length {WINDOW_LENGTH}, got shape {windows.shape}")
    if model.layers and isinstance(model.layers[0], Conv1d):
        # one input channel
        return windows[..., np.newaxis, :]
    return windows


def forward_with_caches(model: Model, windows: Tensor) -> tuple[Tensor, list[Any]]:
    """Run the stack on a window or a `[B, 23]` batch, keeping every layer's backward cache."""
    x = _to_layout(model, windows)
    caches = []
    for layer in model.layers:
        x, cache = layer_forward(layer, x)
        caches.append(cache)
    if x.shape[-1] != 1:
        raise ShapeError(f"Model output must be a single value per window, got shape {x.shape}")
    return x, caches


def model_forward(model: Model, window: Tensor) -> float:
    """Predict the next (normalised) price from a normalised 23-hour window."""
    if window.shape != (WINDOW_LENGTH,):
        raise ShapeError(f"Expected a window of shape ({WINDOW_LENGTH},), got {window.shape}")
    out, _ = forward_with_caches(model, window)
    return float(out[0])


def model_predict_batch(model: Model, windows: Tensor) -> Tensor:
    """Predict a `[B, 23]` stack of windows at once, returning `[B]`."""
    out, _ = forward_with_caches(model, windows)
    return out[:, 0]


def model_parameters(model: Model) -> list[Tensor]:
    """Parameter tensors in declared layer order (weights, then bias, per parameterised layer)."""
    return [param for layer in model.layers for param in layer_parameters(layer)]


def with_parameters(model: Model, params: Sequence[Tensor]) -> Model:
    remaining = list(params)
    layers = []
    for layer in model.layers:
        count = len(layer_parameters(layer))
        layers.append(layer_with_parameters(layer, remaining[:count]))
        remaining = remaining[count:]
    if remaining:
        raise ShapeError(f"{len(remaining)} parameter tensors left over after filling the model")
    return dataclasses.replace(model, layers=tuple(layers))


def model_param_count(model: Model) -> int:
    return sum(param.size for param in model_parameters(model))
