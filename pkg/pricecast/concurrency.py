# Copyright 2019-2024 SURF.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import asyncio
from collections.abc import Callable, Iterable
from typing import TypeVar

import anyio
from anyio import CapacityLimiter, to_thread

A = TypeVar("A")
R = TypeVar("R")


async def gather_nice_sync(function: Callable[[A], R], args: Iterable[A], limit: int = 4) -> list[R]:
    """Run `function` in a worker thread once per argument, at most `limit` at a time, keeping argument order.

    The first exception raised by any call propagates after all calls have finished.

    Example:
        def train_season(season):
            ...

        await gather_nice_sync(train_season, [Season.SPRING, Season.WINTER], limit=2)

    """
    limiter = CapacityLimiter(limit)
    tasks = [to_thread.run_sync(function, arg, limiter=limiter) for arg in args]
    results = await asyncio.gather(*tasks, return_exceptions=True)
    for result in results:
        if isinstance(result, BaseException):
            raise result
    return results  # type: ignore[return-value]


def map_in_threads(function: Callable[[A], R], args: Iterable[A], limit: int) -> list[R]:
    """Blocking entry point for `gather_nice_sync`; a limit of 1 runs the calls inline, in order."""
    items = list(args)
    if limit <= 1 or len(items) <= 1:
        return [function(arg) for arg in items]
    return anyio.run(gather_nice_sync, function, items, limit)
