import json
import logging
import threading
import time
from unittest import mock

import pytest
import structlog

from pricecast.concurrency import gather_nice_sync, map_in_threads
from pricecast.logging import initialise_logging, logconfig_dict
from pricecast.settings import PricecastSettings


async def test_gather_nice_sync_calls_each_argument():
    mock_function = mock.MagicMock()

    await gather_nice_sync(mock_function, ["spring", "summer", "fall"])

    assert sorted(mock_function.call_args_list) == sorted(
        [
            mock.call("spring"),
            mock.call("summer"),
            mock.call("fall"),
        ]
    )


async def test_gather_nice_sync_returnvalue_order():
    def slow_square(value):
        # later arguments finish first
        time.sleep(0.01 * (3 - value))
        return value * value

    result = await gather_nice_sync(slow_square, [0, 1, 2, 3])

    assert result == [0, 1, 4, 9]


async def test_gather_nice_sync_respects_limit():
    running = 0
    peak = 0
    lock = threading.Lock()

    def work(_):
        nonlocal running, peak
        with lock:
            running += 1
            peak = max(peak, running)
        time.sleep(0.01)
        with lock:
            running -= 1

    await gather_nice_sync(work, range(8), limit=2)

    assert 1 <= peak <= 2


async def test_gather_nice_sync_raises_after_all_calls():
    calls = []

    def fail_on_two(value):
        calls.append(value)
        if value == 2:
            raise ValueError("boom")
        return value

    with pytest.raises(ValueError, match="boom"):
        await gather_nice_sync(fail_on_two, [1, 2, 3])

    assert sorted(calls) == [1, 2, 3]


def test_map_in_threads_inline():
    thread_ids = map_in_threads(lambda _: threading.get_ident(), range(3), limit=1)
    assert thread_ids == [threading.get_ident()] * 3


def test_map_in_threads_in_workers():
    assert map_in_threads(lambda value: value + 1, [1, 2, 3], limit=3) == [2, 3, 4]
    assert map_in_threads(lambda value: value, [], limit=4) == []


@pytest.mark.parametrize(
    "threads,tasks,expected",
    [
        (None, 4, 4),
        (None, 0, 1),
        (2, 4, 2),
        (8, 4, 4),
        (1, 4, 1),
    ],
)
def test_thread_limit(threads, tasks, expected):
    assert PricecastSettings(PRICECAST_THREADS=threads).thread_limit(tasks) == expected


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("PRICECAST_THREADS", "3")
    monkeypatch.setenv("LOG_OUTPUT", "json")
    settings = PricecastSettings()
    assert settings.PRICECAST_THREADS == 3
    assert settings.LOG_OUTPUT == "json"
    assert settings.LOG_LEVEL == "INFO"


def test_logconfig_writes_to_stderr():
    config = logconfig_dict("debug", "plain")
    assert config["handlers"]["default"]["stream"] == "ext://sys.stderr"
    assert config["loggers"][""]["level"] == "DEBUG"


def test_json_logging(capsys):
    initialise_logging(PricecastSettings(LOG_OUTPUT="json"), {"noisy": {"level": "ERROR"}})
    structlog.get_logger("pricecast.test").info("Trained season", season="winter")
    logging.getLogger("noisy").warning("not shown")

    captured = capsys.readouterr()
    assert captured.out == ""
    (line,) = captured.err.splitlines()
    event = json.loads(line)
    assert event["event"] == "Trained season"
    assert event["season"] == "winter"
    assert event["level"] == "info"
