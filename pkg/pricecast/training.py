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

"""MSE loss, Adam, the mini-batch training loop with early stopping and a finite-difference gradient checker."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Union, overload

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from pricecast.data import WINDOW_LENGTH, WindowSample, stack_windows, to_utc_hour
from pricecast.ex import ArgumentError, InvariantError, ShapeError, TrainingError
from pricecast.layers import Conv1d, Dense, MaxPool1d, Relu, layer_backward
from pricecast.models import (
    Architecture,
    Model,
    build_model,
    forward_with_caches,
    model_parameters,
    random_spec,
    with_parameters,
)
from pricecast.tensor import Prng, Tensor

logger = structlog.get_logger(__name__)

SHUFFLE_STREAM = 1
RELATIVE_ERROR_FLOOR = 1e-8
# Rounding noise of a finite loss difference, relative to the loss scale.
ROUNDING_NOISE = 64 * float(np.finfo(np.float64).eps)
GRADCHECK_SPEC_STREAM = 2
GRADCHECK_SAMPLE_STREAM = 3
GRADCHECK_MAX_DRAWS = 64


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0)
    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    patience: int = Field(default=20, ge=1)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    clip_gradients: bool = False
    clip_value: float = Field(default=5.0, gt=0)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: tuple[Tensor, ...]
    v: tuple[Tensor, ...]
    t: int = 0

    @classmethod
    def fresh(cls, params: Sequence[Tensor]) -> AdamState:
        return cls(tuple(np.zeros_like(p) for p in params), tuple(np.zeros_like(p) for p in params))


class TrainHistory(BaseModel):
    train_loss: list[float] = Field(default_factory=list)
    val_loss: list[float] = Field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: Union[float, None] = None

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"] + [
            f"{epoch},{train:.6g},{val:.6g}"
            for epoch, (train, val) in enumerate(zip(self.train_loss, self.val_loss), start=1)
        ]
        return "\n".join(lines) + "\n"


@overload
def mse_loss(pred: float, target: float) -> tuple[float, float]: ...


@overload
def mse_loss(pred: Tensor, target: Tensor) -> tuple[Tensor, Tensor]: ...


def mse_loss(pred: Any, target: Any) -> tuple[Any, Any]:
    """Squared error and its derivative with respect to the prediction; works elementwise on arrays.

    >>> mse_loss(3.0, 1.0)
    (4.0, 4.0)
    """
    diff = pred - target
    return diff * diff, 2.0 * diff


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    state: AdamState,
    config: TrainConfig,
    names: Union[Sequence[str], None] = None,
) -> tuple[list[Tensor], AdamState]:
    """One bias-corrected Adam update; returns new parameter tensors and the advanced state."""
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ShapeError(f"Got {len(grads)} gradients and {len(state.m)} moments for {len(params)} parameters")
    t = state.t + 1
    bias_correction1 = 1.0 - config.beta1**t
    bias_correction2 = 1.0 - config.beta2**t

    new_params, new_m, new_v = [], [], []
    for i, (param, grad, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match parameter shape {param.shape}")
        if not np.isfinite(grad).all():
            name = names[i] if names else f"#{i}"
            raise TrainingError(f"Non-finite gradient for parameter tensor {name}")
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * (grad * grad)
        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        new_params.append(param - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(tuple(new_m), tuple(new_v), t)


def parameter_names(model: Model) -> list[str]:
    names = []
    for position, layer in enumerate(model.layers):
        if isinstance(layer, (Conv1d, Dense)):
            names += [f"layer{position}.weights", f"layer{position}.bias"]
    return names


def loss_and_gradients(model: Model, inputs: Tensor, targets: Tensor) -> tuple[float, list[Tensor]]:
    """Mean squared error over a `[B, 23]` batch and its gradient for every parameter tensor.

    The backward sweep walks the layers in reverse; gradients come back in `model_parameters` order.
    """
    out, caches = forward_with_caches(model, inputs)
    losses, dloss_dpred = mse_loss(out[:, 0], targets)
    grad = (dloss_dpred / len(targets))[:, np.newaxis]

    grads: list[Tensor] = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        layer_grads = layer_backward(layer, cache, grad)
        grad = layer_grads.grad_input
        if layer_grads.grad_weights is not None and layer_grads.grad_bias is not None:
            grads += [layer_grads.grad_bias, layer_grads.grad_weights]
    grads.reverse()
    return float(losses.mean()), grads


def mean_loss(model: Model, inputs: Tensor, targets: Tensor) -> float:
    out, _ = forward_with_caches(model, inputs)
    losses, _ = mse_loss(out[:, 0], targets)
    return float(losses.mean())


def _holdout(n: int, val_fraction: float) -> int:
    # A single sample doubles as its own validation set.
    return max(1, int(n * val_fraction)) if n >= 2 else 0


def train(model: Model, train_set: Sequence[WindowSample], config: TrainConfig) -> tuple[Model, TrainHistory]:
    """Fit `model` with Adam on shuffled mini-batches and return the parameters of the best validation epoch.

    The chronologically last `val_fraction` of `train_set` is held out for early stopping.
    """
    if not train_set:
        raise ArgumentError("Cannot train on an empty training set")
    if config.epochs == 0:
        return model, TrainHistory()

    inputs, targets = stack_windows(train_set)
    n_val = _holdout(len(targets), config.val_fraction)
    fit_x, fit_y = (inputs[:-n_val], targets[:-n_val]) if n_val else (inputs, targets)
    val_x, val_y = (inputs[-n_val:], targets[-n_val:]) if n_val else (inputs, targets)

    names = parameter_names(model)
    params = [p.copy() for p in model_parameters(model)]
    state = AdamState.fresh(params)
    prng = Prng(config.seed).fork(SHUFFLE_STREAM)
    history = TrainHistory()
    best_params = params
    epochs_without_improvement = 0

    for epoch in range(1, config.epochs + 1):
        order, prng = prng.permutation(len(fit_y))
        total = 0.0
        for batch, start in enumerate(range(0, len(fit_y), config.batch_size)):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(with_parameters(model, params), fit_x[idx], fit_y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"Loss diverged to {loss} at epoch {epoch}, batch {batch}")
            if config.clip_gradients:
                grads = [np.clip(g, -config.clip_value, config.clip_value) for g in grads]
            params, state = adam_step(params, grads, state, config, names)
            total += loss * len(idx)

        train_loss = total / len(fit_y)
        val_loss = mean_loss(with_parameters(model, params), val_x, val_y)
        if not math.isfinite(val_loss):
            raise TrainingError(f"Validation loss diverged to {val_loss} at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        logger.debug("Finished epoch", epoch=epoch, train_loss=train_loss, val_loss=val_loss)

        if history.best_val_loss is None or val_loss < history.best_val_loss:
            history.best_epoch, history.best_val_loss, best_params = epoch, val_loss, params
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                logger.info("Stopping early", epoch=epoch, best_epoch=history.best_epoch)
                break

    logger.info(
        "Training finished",
        epochs=len(history.train_loss),
        best_epoch=history.best_epoch,
        best_val_loss=history.best_val_loss,
    )
    return with_parameters(model, best_params), history


class GradCheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_relative_error: float
    checked: int
    skipped: int


def _activation_pattern(model: Model, caches: list[Any]) -> tuple[bytes, ...]:
    """ReLU masks and max-pool choices: the linear piece of the network the input falls in."""
    pattern = []
    for layer, cache in zip(model.layers, caches):
        if isinstance(layer, Relu):
            pattern.append((cache > 0.0).tobytes())
        elif isinstance(layer, MaxPool1d):
            pattern.append(cache[0].tobytes())
    return tuple(pattern)


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), RELATIVE_ERROR_FLOOR)


def gradient_error(analytic: float, numeric: float, noise: float) -> float:
    """Relative error of a finite difference; a disagreement within its rounding noise counts as a match.

    >>> gradient_error(0.0, 2.8e-12, noise=1.4e-9)
    0.0
    >>> round(gradient_error(1.0, 1.001, noise=1.4e-9), 6)
    0.000999
    """
    if abs(analytic - numeric) <= noise:
        return 0.0
    return _relative_error(analytic, numeric)


def grad_check_report(model: Model, sample: WindowSample, epsilon: float = 1e-5) -> GradCheckResult:
    """Compare backprop gradients of the squared error with central finite differences, scalar by scalar.

    Within one activation pattern the loss is quadratic in any single parameter, so the central difference is exact
    up to rounding. When a perturbation crosses a ReLU or max-pool kink, the second-order one-sided difference on the
    side that keeps the pattern is used instead; when both sides cross, the scalar is skipped. Differences below the
    rounding noise of the loss, `ROUNDING_NOISE * max(1, loss) / epsilon`, count as agreement.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ArgumentError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    params = model_parameters(model)
    if not params:
        return GradCheckResult(max_relative_error=0.0, checked=0, skipped=0)

    _, analytic = loss_and_gradients(model, sample.input[np.newaxis], np.array([sample.target]))

    def perturbed_loss(tensor: int, flat: int, delta: float) -> tuple[float, tuple[bytes, ...]]:
        perturbed = list(params)
        perturbed[tensor] = params[tensor].copy()
        perturbed[tensor].flat[flat] += delta
        shifted = with_parameters(model, perturbed)
        out, caches = forward_with_caches(shifted, sample.input)
        loss, _ = mse_loss(float(out[0]), sample.target)
        return loss, _activation_pattern(shifted, caches)

    out, caches = forward_with_caches(model, sample.input)
    base_loss, _ = mse_loss(float(out[0]), sample.target)
    base = _activation_pattern(model, caches)
    noise = ROUNDING_NOISE * max(1.0, base_loss) / epsilon

    worst, checked, skipped = 0.0, 0, 0
    for tensor, grad in enumerate(analytic):
        for flat in range(grad.size):
            plus, plus_pattern = perturbed_loss(tensor, flat, epsilon)
            minus, minus_pattern = perturbed_loss(tensor, flat, -epsilon)
            if plus_pattern == base and minus_pattern == base:
                numeric = (plus - minus) / (2.0 * epsilon)
            elif plus_pattern == base and (far := perturbed_loss(tensor, flat, 2.0 * epsilon))[1] == base:
                numeric = (-3.0 * base_loss + 4.0 * plus - far[0]) / (2.0 * epsilon)
            elif minus_pattern == base and (far := perturbed_loss(tensor, flat, -2.0 * epsilon))[1] == base:
                numeric = (3.0 * base_loss - 4.0 * minus + far[0]) / (2.0 * epsilon)
            else:
                skipped += 1
                continue
            worst = max(worst, gradient_error(float(grad.flat[flat]), numeric, noise))
            checked += 1

    if skipped:
        logger.info("Skipped parameters sitting on a kink", skipped=skipped)
    return GradCheckResult(max_relative_error=worst, checked=checked, skipped=skipped)


def grad_check(model: Model, sample: WindowSample, epsilon: float = 1e-5) -> float:
    """Maximum relative error between analytic and finite-difference gradients over all parameter scalars."""
    return grad_check_report(model, sample, epsilon).max_relative_error



def _every_layer_learns(model: Model, sample: WindowSample) -> bool:
    _, grads = loss_and_gradients(model, sample.input[np.newaxis], np.array([sample.target]))
    return all(np.any(weights != 0.0) for weights in grads[::2])


def gradcheck_case(architecture: Architecture, seed: int) -> tuple[Model, WindowSample]:
    """A small random model of `architecture` and a uniform random window, both derived from `seed`.

    Specs are redrawn until every parameterised layer gets a nonzero weight gradient on the window; a stack of dead
    ReLUs has all-zero gradients and would pass any comparison.
    """
    values, _ = Prng(seed).fork(GRADCHECK_SAMPLE_STREAM).uniform_array(WINDOW_LENGTH + 1)
    sample = WindowSample(values[:WINDOW_LENGTH], float(values[WINDOW_LENGTH]), to_utc_hour("2018-01-01T00:00:00Z"))
    prng = Prng(seed).fork(GRADCHECK_SPEC_STREAM)
    for _ in range(GRADCHECK_MAX_DRAWS):
        spec, prng = random_spec(architecture, prng)
        model = build_model(spec, seed)
        if _every_layer_learns(model, sample):
            return model, sample
    raise InvariantError(f"No {architecture.value} model with live gradients in {GRADCHECK_MAX_DRAWS} draws")
