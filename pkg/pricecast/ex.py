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

"""Module containing the pricecast exceptions and their mapping to process exit codes."""

import traceback
from enum import IntEnum
from typing import Union


class PricecastError(Exception):
    """Base class of all errors raised deliberately by pricecast."""


class ShapeError(PricecastError):
    """A tensor does not have the shape an operation requires."""


class ArgumentError(PricecastError, ValueError):
    """An argument is outside the domain of an operation."""


class InvariantError(PricecastError):
    """An internal invariant was violated; this indicates a bug."""


class SpecError(PricecastError):
    """A model specification cannot be built."""


class ConfigError(SpecError):
    """The run configuration file is invalid."""


class DataError(PricecastError):
    """The price data cannot be used for the requested operation."""


class ParseError(DataError):
    """A price CSV could not be parsed.

    >>> str(ParseError("malformed row", line=3))
    'line 3: malformed row'
    """

    def __init__(self, message: str, line: Union[int, None] = None) -> None:
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class MetricError(PricecastError):
    """A forecast metric is undefined for the given values."""


class ReportError(PricecastError):
    """A report cannot be assembled from the given rows."""


class TrainingError(PricecastError):
    """Training diverged or received unusable gradients."""


class CheckpointError(PricecastError):
    """A checkpoint is missing, corrupt or inconsistent with its spec."""


class ExitCode(IntEnum):
    """Process exit codes of the command line tool; a stable contract for scripts."""

    OK = 0
    IO = 2
    DATA = 3
    SPEC = 4
    TRAINING = 5
    CHECKPOINT = 6
    GRADCHECK = 7


def to_exit_code(exception: Exception) -> Union[ExitCode, None]:
    """Map an exception raised by a command to its exit code, or None when it is not an expected failure.

    >>> to_exit_code(ParseError("bad row", line=2))
    <ExitCode.DATA: 3>
    >>> to_exit_code(ConfigError("unknown key"))
    <ExitCode.SPEC: 4>
    >>> to_exit_code(FileNotFoundError("missing.csv"))
    <ExitCode.IO: 2>
    """
    match exception:
        case DataError() | MetricError() | ReportError():
            return ExitCode.DATA
        case SpecError() | ShapeError() | ArgumentError():
            return ExitCode.SPEC
        case TrainingError():
            return ExitCode.TRAINING
        case CheckpointError():
            return ExitCode.CHECKPOINT
        case OSError():
            return ExitCode.IO
        case _:
            return None


def show_ex(ex: Exception, stacklimit: Union[int, None] = None) -> str:
    """Show an exception, including its class name, message and (limited) stacktrace.

    >>> try:
    ...     raise DataError("gap of 9 hours after 2016-03-13T01:00:00Z")
    ... except DataError as e:
    ...     print(show_ex(e))
    DataError: gap of 9 hours after 2016-03-13T01:00:00Z
    ...
    """
    tbfmt = "".join(traceback.format_tb(ex.__traceback__, stacklimit))
    return f"{type(ex).__name__}: {ex}\n{tbfmt}"
