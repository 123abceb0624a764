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

"""Forward and backward passes of the layer kinds the forecasting networks are made of.

A single sample is laid out as `[C, L]` for the convolutional part and `[D]` for the fully connected part. Every
kernel also accepts a stacked batch with one extra leading axis; weight and bias gradients are then summed over that
axis, which is the vectorised form of per-sample gradient accumulation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Union

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from pricecast.ex import ArgumentError, InvariantError, ShapeError
from pricecast.tensor import Tensor

Indices = npt.NDArray[np.intp]


@dataclass(frozen=True, eq=False)
class Conv1d:
    weights: Tensor  # [out_ch, in_ch, k]
    bias: Tensor  # [out_ch]
    stride: int = 1

    def __post_init__(self) -> None:
        if self.weights.ndim != 3 or min(self.weights.shape) < 1:
            raise ShapeError(f"Conv1d weights must be [out_ch, in_ch, k], got {self.weights.shape}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"Conv1d bias must be [{self.out_channels}], got {self.bias.shape}")
        if self.stride < 1:
            raise ArgumentError(f"Conv1d stride must be >= 1, got {self.stride}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class MaxPool1d:
    width: int
    stride: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.stride < 1:
            raise ArgumentError(f"MaxPool1d width and stride must be >= 1, got {self.width}/{self.stride}")


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True, eq=False)
class Dense:
    weights: Tensor  # [out_dim, in_dim]
    bias: Tensor  # [out_dim]

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"Dense weights must be [out_dim, in_dim], got {self.weights.shape}")
        if self.bias.shape != (self.out_dim,):
            raise ShapeError(f"Dense bias must be [{self.out_dim}], got {self.bias.shape}")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


Layer = Union[Conv1d, MaxPool1d, Relu, Flatten, Dense]


@dataclass(frozen=True, eq=False)
class LayerGrads:
    grad_input: Tensor
    grad_weights: Union[Tensor, None] = None
    grad_bias: Union[Tensor, None] = None


def output_length(length: int, window: int, stride: int) -> int:
    """Length after a valid (unpadded) convolution or pooling window.

    >>> output_length(23, 3, 1)
    21
    >>> output_length(21, 2, 2)
    10
    """
    if length < window:
        raise ShapeError(f"Input length {length} is shorter than the window {window}")
    return (length - window) // stride + 1


def _as_batch(x: Tensor, sample_rank: int, name: str) -> tuple[Tensor, bool]:
    if x.ndim == sample_rank:
        return x[np.newaxis], True
    if x.ndim == sample_rank + 1:
        return x, False
    raise ShapeError(f"{name} expects a rank-{sample_rank} sample or a rank-{sample_rank + 1} batch, got {x.shape}")


def _windows(batch: Tensor, width: int, stride: int) -> Tensor:
    """View `[B, C, L]` as `[B, C, L_out, width]` without copying."""
    output_length(batch.shape[2], width, stride)
    return sliding_window_view(batch, width, axis=2)[:, :, ::stride, :]


def conv1d_forward(layer: Conv1d, x: Tensor) -> Tensor:
    batch, single = _as_batch(x, 2, "conv1d")
    if batch.shape[1] != layer.in_channels:
        raise ShapeError(f"conv1d expects {layer.in_channels} input channels, got {batch.shape[1]}")
    windows = _windows(batch, layer.kernel, layer.stride)
    out = np.einsum("bitj,oij->bot", windows, layer.weights) + layer.bias[np.newaxis, :, np.newaxis]
    return out[0] if single else out


def conv1d_backward(layer: Conv1d, x: Tensor, grad_out: Tensor) -> LayerGrads:
    batch, single = _as_batch(x, 2, "conv1d")
    grad, _ = _as_batch(grad_out, 2, "conv1d")
    if grad_out.ndim != x.ndim or batch.shape[1] != layer.in_channels:
        raise ShapeError(f"conv1d backward got input {x.shape} and gradient {grad_out.shape}")
    windows = _windows(batch, layer.kernel, layer.stride)
    expected = (batch.shape[0], layer.out_channels, windows.shape[2])
    if grad.shape != expected:
        raise ShapeError(f"conv1d backward expects a gradient of shape {expected}, got {grad.shape}")

    grad_weights = np.einsum("bot,bitj->oij", grad, windows)
    grad_bias = grad.sum(axis=(0, 2))
    grad_windows = np.einsum("bot,oij->bitj", grad, layer.weights)
    grad_input = np.zeros_like(batch)
    span = layer.stride * (windows.shape[2] - 1) + 1
    for j in range(layer.kernel):
        grad_input[:, :, j : j + span : layer.stride] += grad_windows[..., j]
    return LayerGrads(grad_input[0] if single else grad_input, grad_weights, grad_bias)


def maxpool1d_forward(layer: MaxPool1d, x: Tensor) -> tuple[Tensor, Indices]:
    """Max over each window; ties resolve to the lowest input index.

    >>> out, argmax = maxpool1d_forward(MaxPool1d(width=2, stride=2), np.array([[1.0, 3.0, 2.0, 5.0]]))
    >>> out.tolist(), argmax.tolist()
    ([[3.0, 5.0]], [[1, 3]])
    """
    batch, single = _as_batch(x, 2, "maxpool1d")
    windows = _windows(batch, layer.width, layer.stride)
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., np.newaxis], axis=-1)[..., 0]
    argmax = local + np.arange(windows.shape[2]) * layer.stride
    return (out[0], argmax[0]) if single else (out, argmax)


def maxpool1d_backward(argmax: Indices, grad_out: Tensor, input_shape: tuple[int, ...]) -> Tensor:
    if argmax.shape != grad_out.shape or len(input_shape) != grad_out.ndim:
        raise ShapeError(f"maxpool1d backward got indices {argmax.shape}, gradient {grad_out.shape}")
    if argmax.size and (argmax.min() < 0 or argmax.max() >= input_shape[-1]):
        raise InvariantError(f"maxpool1d argmax index out of range for input length {input_shape[-1]}")
    grad_input = np.zeros(input_shape, dtype=np.float64)
    rows = grad_input.reshape(-1, input_shape[-1])
    flat_argmax = argmax.reshape(rows.shape[0], -1)
    # add.at sums colliding indices of overlapping windows
    np.add.at(rows, (np.arange(rows.shape[0])[:, np.newaxis], flat_argmax), grad_out.reshape(flat_argmax.shape))
    return grad_input


def relu_forward(x: Tensor) -> Tensor:
    """Elementwise max(0, x).

    >>> relu_forward(np.array([-3.2, 5.49, 0.0])).tolist()
    [0.0, 5.49, 0.0]
    """
    return np.maximum(x, 0.0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu backward got input {x.shape} and gradient {grad_out.shape}")
    # subgradient 0 at exactly 0
    return np.where(x > 0.0, grad_out, 0.0)


def dense_forward(layer: Dense, x: Tensor) -> Tensor:
    _as_batch(x, 1, "dense")
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"dense expects input length {layer.in_dim}, got {x.shape[-1]}")
    return x @ layer.weights.T + layer.bias


def dense_backward(layer: Dense, x: Tensor, grad_out: Tensor) -> LayerGrads:
    batch, single = _as_batch(x, 1, "dense")
    grad, _ = _as_batch(grad_out, 1, "dense")
    if grad_out.ndim != x.ndim or batch.shape[1] != layer.in_dim or grad.shape != (batch.shape[0], layer.out_dim):
        raise ShapeError(f"dense backward got input {x.shape} and gradient {grad_out.shape}")
    grad_weights = grad.T @ batch
    grad_bias = grad.sum(axis=0)
    grad_input = grad @ layer.weights
    return LayerGrads(grad_input[0] if single else grad_input, grad_weights, grad_bias)


def flatten(x: Tensor) -> Tensor:
    """Row-major flattening of a `[C, L]` sample (or a `[B, C, L]` batch).

    >>> flatten(np.array([[1.0, 2.0], [3.0, 4.0]])).tolist()
    [1.0, 2.0, 3.0, 4.0]
    """
    if x.ndim == 2:
        return x.reshape(-1)
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1)
    raise ShapeError(f"flatten expects a rank-2 sample or a rank-3 batch, got {x.shape}")


def unflatten(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    return grad.reshape(shape)


def layer_forward(layer: Layer, x: Tensor) -> tuple[Tensor, Any]:
    """Run one layer and return its output together with what its backward pass needs."""
    match layer:
        case Conv1d():
            return conv1d_forward(layer, x), x
        case MaxPool1d():
            out, argmax = maxpool1d_forward(layer, x)
            return out, (argmax, x.shape)
        case Relu():
            return relu_forward(x), x
        case Flatten():
            return flatten(x), x.shape
        case Dense():
            return dense_forward(layer, x), x
    raise InvariantError(f"Unknown layer type {type(layer).__name__}")


def layer_backward(layer: Layer, cache: Any, grad_out: Tensor) -> LayerGrads:
    match layer:
        case Conv1d():
            return conv1d_backward(layer, cache, grad_out)
        case MaxPool1d():
            argmax, input_shape = cache
            return LayerGrads(maxpool1d_backward(argmax, grad_out, input_shape))
        case Relu():
            return LayerGrads(relu_backward(cache, grad_out))
        case Flatten():
            return LayerGrads(unflatten(grad_out, cache))
        case Dense():
            return dense_backward(layer, cache, grad_out)
    raise InvariantError(f"Unknown layer type {type(layer).__name__}")


def layer_parameters(layer: Layer) -> list[Tensor]:
    """Parameter tensors of a layer: weights then bias, or nothing."""
    if isinstance(layer, (Conv1d, Dense)):
        return [layer.weights, layer.bias]
    return []


def layer_with_parameters(layer: Layer, params: list[Tensor]) -> Layer:
    if isinstance(layer, (Conv1d, Dense)):
        weights, bias = params
        if weights.shape != layer.weights.shape or bias.shape != layer.bias.shape:
            raise ShapeError(
                f"Replacement parameters {weights.shape}/{bias.shape} do not match "
                f"{layer.weights.shape}/{layer.bias.shape}"
            )
        return dataclasses.replace(layer, weights=weights, bias=bias)
    if params:
        raise ShapeError(f"{type(layer).__name__} has no parameters")
    return layer
