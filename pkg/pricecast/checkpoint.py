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

"""Self-describing JSON checkpoints of trained seasonal models.

Floats are written as the shortest decimal text that parses back to the same 64-bit value, so a reloaded model has
bit-identical parameters and saving it again reproduces the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Literal, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from pricecast.data import NormStats, Season
from pricecast.ex import CheckpointError, PricecastError
from pricecast.layers import Conv1d, Dense
from pricecast.models import Model, ModelSpec, build_model, with_parameters
from pricecast.training import TrainHistory

logger = structlog.get_logger(__name__)

FORMAT_VERSION = 1


class ParameterBlock(BaseModel):
    """Weights (row-major) and bias of one parameterised layer."""

    model_config = ConfigDict(extra="forbid")

    layer: int
    kind: Literal["conv1d", "dense"]
    shape: list[int]
    weights: list[float]
    bias: list[float]


class TrainingSummary(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: Union[float, None] = None

    @classmethod
    def from_history(cls, history: TrainHistory) -> TrainingSummary:
        return cls(
            epochs_run=len(history.train_loss), best_epoch=history.best_epoch, best_val_loss=history.best_val_loss
        )


class Checkpoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: Literal[1] = FORMAT_VERSION
    spec: ModelSpec = Field(discriminator="architecture")
    season: Season
    seed: int
    norm_stats: NormStats
    parameters: list[ParameterBlock]
    training: TrainingSummary = Field(default_factory=TrainingSummary)

    @classmethod
    def from_model(cls, model: Model, training: Union[TrainingSummary, None] = None) -> Checkpoint:
        if model.meta is None or model.meta.season is None or model.norm_stats is None:
            raise CheckpointError("Only a model trained for a season, with normalisation statistics, can be saved")
        blocks = []
        for position, layer in enumerate(model.layers):
            if isinstance(layer, (Conv1d, Dense)):
                if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                    raise CheckpointError(f"Layer {position} has non-finite parameters")
                blocks.append(
                    ParameterBlock(
                        layer=position,
                        kind="conv1d" if isinstance(layer, Conv1d) else "dense",
                        shape=list(layer.weights.shape),
                        weights=layer.weights.ravel().tolist(),
                        bias=layer.bias.tolist(),
                    )
                )
        return cls(
            spec=model.meta.spec,
            season=model.meta.season,
            seed=model.meta.seed,
            norm_stats=model.norm_stats,
            parameters=blocks,
            training=training or TrainingSummary(),
        )

    def to_model(self) -> Model:
        """Rebuild the layer skeleton from the spec echo and pour the stored parameters into it."""
        try:
            skeleton = build_model(self.spec, self.seed, self.season)
        except PricecastError as exc:
            raise CheckpointError(f"Stored spec does not build: {exc}") from exc

        expected = [(i, layer) for i, layer in enumerate(skeleton.layers) if isinstance(layer, (Conv1d, Dense))]
        if len(expected) != len(self.parameters):
            raise CheckpointError(f"Spec needs {len(expected)} parameter blocks, checkpoint has {len(self.parameters)}")
        params = []
        for (position, layer), block in zip(expected, self.parameters):
            kind = "conv1d" if isinstance(layer, Conv1d) else "dense"
            shape = layer.weights.shape
            if block.layer != position or block.kind != kind or tuple(block.shape) != shape:
                raise CheckpointError(
                    f"Block for layer {block.layer} ({block.kind} {block.shape}) does not match "
                    f"layer {position} ({kind} {list(shape)})"
                )
            if len(block.weights) != math.prod(shape) or len(block.bias) != shape[0]:
                raise CheckpointError(f"Layer {position} parameter count does not match its shape {list(shape)}")
            params += [np.array(block.weights, dtype=np.float64).reshape(shape), np.array(block.bias, dtype=np.float64)]
        return dataclasses.replace(with_parameters(skeleton, params), norm_stats=self.norm_stats)

    def dumps(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def loads_checkpoint(text: Union[str, bytes], source: str = "<checkpoint>") -> Checkpoint:
    try:
        checkpoint = Checkpoint.model_validate_json(text)
    except ValidationError as exc:
        raise CheckpointError(f"{source}: not a valid checkpoint ({exc.error_count()} errors): {exc}") from exc
    try:
        checkpoint.to_model()
    except CheckpointError as exc:
        raise CheckpointError(f"{source}: {exc}") from exc
    return checkpoint


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    path.write_text(checkpoint.dumps())
    logger.info("Wrote checkpoint", path=str(path), season=checkpoint.season.value)


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return loads_checkpoint(text, str(path))


def checkpoint_filename(model_name: str, season: Season) -> str:
    """File name of a seasonal checkpoint.

    >>> checkpoint_filename("cnn", Season.WINTER)
    'cnn-winter.json'
    """
    return f"{model_name}-{season.value}.json"


def history_filename(model_name: str, season: Season) -> str:
    return f"{model_name}-{season.value}-history.csv"
