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

"""Dense float64 tensors and the SplitMix64 random stream everything else computes on."""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from pricecast.ex import ArgumentError, ShapeError

Tensor = npt.NDArray[np.float64]
Shape = tuple[int, ...]

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB

# Uniforms live on the grid k * 2**-53; zero is remapped to the first grid point so log() stays finite.
UNIT = 2.0**-53


def validate_shape(shape: Iterable[int]) -> Shape:
    """Return `shape` as a tuple after checking it has 1-3 positive dimensions.

    >>> validate_shape([2, 3])
    (2, 3)
    >>> validate_shape([0])
    Traceback (most recent call last):
        ...
    pricecast.ex.ShapeError: Every dimension must be >= 1, got (0,)
    """
    dims = tuple(int(d) for d in shape)
    if not 1 <= len(dims) <= 3:
        raise ShapeError(f"Expected a shape of rank 1-3, got {dims}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"Every dimension must be >= 1, got {dims}")
    return dims


def tensor_new(shape: Iterable[int], fill: float) -> Tensor:
    """Create a row-major float64 tensor with every element equal to `fill`.

    >>> tensor_new([2, 2], 1.5).tolist()
    [[1.5, 1.5], [1.5, 1.5]]
    """
    dims = validate_shape(shape)
    if not math.isfinite(fill):
        raise ArgumentError(f"Fill value must be finite, got {fill}")
    return np.full(dims, fill, dtype=np.float64)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: npt.NDArray[np.uint64]) -> npt.NDArray[np.uint64]:
    # uint64 array arithmetic wraps modulo 2**64, matching the masked scalar version.
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_2)
    return z ^ (z >> np.uint64(31))


def _box_muller(u1: npt.NDArray[np.float64], u2: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class Prng:
    """SplitMix64 random stream as an immutable value.

    Every draw returns the value together with the advanced generator, so two consumers holding the same `Prng`
    always observe the same numbers.

    >>> value, rng = Prng(0).next_u64()
    >>> hex(value)
    '0xe220a8397b1dcdaf'
    >>> hex(rng.next_u64()[0])
    '0x6e789e6aa1b965f4'
    """

    state: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", self.state & MASK64)

    def next_u64(self) -> tuple[int, Prng]:
        state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(state), Prng(state)

    def next_uniform(self) -> tuple[float, Prng]:
        """Draw a uniform float in (0, 1)."""
        value, rng = self.next_u64()
        return max((value >> 11) * UNIT, UNIT), rng

    def next_below(self, n: int) -> tuple[int, Prng]:
        """Draw an integer in [0, n)."""
        if n < 1:
            raise ArgumentError(f"Cannot draw below {n}")
        u, rng = self.next_uniform()
        return min(int(u * n), n - 1), rng

    def next_gaussian(self) -> tuple[float, Prng]:
        """Draw a standard normal variate (Box-Muller, cosine branch) from two uniforms."""
        values, rng = self.gaussian_array(1)
        return float(values[0]), rng

    def u64_array(self, n: int) -> tuple[npt.NDArray[np.uint64], Prng]:
        """Draw `n` values at once; identical to `n` sequential `next_u64` calls."""
        if n < 0:
            raise ArgumentError(f"Cannot draw a negative number of values ({n})")
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        values = _mix_array(steps + np.uint64(self.state))
        return values, Prng(self.state + n * GOLDEN_GAMMA)

    def uniform_array(self, n: int) -> tuple[npt.NDArray[np.float64], Prng]:
        values, rng = self.u64_array(n)
        uniforms = (values >> np.uint64(11)).astype(np.float64) * UNIT
        return np.maximum(uniforms, UNIT), rng

    def gaussian_array(self, n: int) -> tuple[npt.NDArray[np.float64], Prng]:
        uniforms, rng = self.uniform_array(2 * n)
        return _box_muller(uniforms[0::2], uniforms[1::2]), rng

    def permutation(self, n: int) -> tuple[list[int], Prng]:
        """Shuffle `range(n)` with a Fisher-Yates pass driven by this stream."""
        order = list(range(n))
        uniforms, rng = self.uniform_array(max(n - 1, 0))
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(uniforms[step] * (i + 1)), i)
            order[i], order[j] = order[j], order[i]
        return order, rng

    def fork(self, stream: int) -> Prng:
        """Derive an independent generator for a numbered sub-stream."""
        return Prng(_mix((self.state ^ ((stream * GOLDEN_GAMMA) & MASK64)) & MASK64))


def he_init(prng: Prng, shape: Iterable[int], fan_in: int) -> tuple[Tensor, Prng]:
    """Gaussian weights with standard deviation sqrt(2 / fan_in)."""
    dims = validate_shape(shape)
    if fan_in < 1:
        raise ArgumentError(f"fan_in must be >= 1, got {fan_in}")
    values, rng = prng.gaussian_array(math.prod(dims))
    return (values * math.sqrt(2.0 / fan_in)).reshape(dims), rng
