#  Copyright 2019-2024 SURF.
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#        http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.

import logging.config
from typing import Any, Union

import structlog

from pricecast.settings import PricecastSettings

pre_chain = [
    structlog.contextvars.merge_contextvars,
    # Add the log level and a timestamp to the event_dict if the log entry
    # is not from structlog.
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_logger_name,
    structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
    structlog.stdlib.PositionalArgumentsFormatter(),
    structlog.processors.StackInfoRenderer(),
    structlog.processors.format_exc_info,
]

formatters = {
    "plain": {
        "()": structlog.stdlib.ProcessorFormatter,
        "processor": structlog.dev.ConsoleRenderer(colors=False),
        "foreign_pre_chain": pre_chain,
    },
    "colored": {
        "()": structlog.stdlib.ProcessorFormatter,
        "processor": structlog.dev.ConsoleRenderer(colors=True),
        "foreign_pre_chain": pre_chain,
    },
    "json": {
        "()": structlog.stdlib.ProcessorFormatter,
        "processor": structlog.processors.JSONRenderer(sort_keys=True),
        "foreign_pre_chain": pre_chain,
    },
}


def logconfig_dict(log_level: str, log_output: str) -> dict[str, Any]:
    """Build the dictConfig; logs go to stderr so stdout carries only command results."""
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": formatters,
        "handlers": {
            "default": {"class": "logging.StreamHandler", "formatter": log_output, "stream": "ext://sys.stderr"},
        },
        "loggers": {
            "": {"handlers": ["default"], "level": log_level.upper(), "propagate": True},
        },
    }


def initialise_logging(
    settings: Union[PricecastSettings, None] = None,
    additional_loggers: Union[dict[str, dict[str, Any]], None] = None,
) -> None:
    """Initialise the StructLog logging setup.

    Args:
        settings: source of LOG_LEVEL and LOG_OUTPUT; read from the environment when omitted.
        additional_loggers: extra dictConfig logger entries, e.g. to quieten a library.

    """
    settings = settings or PricecastSettings()
    config = logconfig_dict(settings.LOG_LEVEL, settings.LOG_OUTPUT)
    config["loggers"] |= additional_loggers or {}
    logging.config.dictConfig(config)

    structlog.configure(
        processors=pre_chain + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],  # type: ignore
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
