import logging

import numpy as np
import pytest
import structlog

from pricecast.data import PeriodBounds, PriceSeries, generate_synthetic
from pricecast.models import CnnSpec, MlpSpec
from pricecast.training import TrainConfig

# 2017-01-01 up to (not including) 2019-03-01
SYNTHETIC_HOURS = (365 + 365 + 59) * 24


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    logging.getLogger().handlers.clear()
    structlog.reset_defaults()


@pytest.fixture(scope="session")
def synthetic_series() -> PriceSeries:
    return generate_synthetic("2017-01-01T00:00:00Z", SYNTHETIC_HOURS, seed=42)


@pytest.fixture
def short_bounds() -> PeriodBounds:
    """One training year instead of three, same test period."""
    return PeriodBounds(
        train_start="2017-01-01T00:00:00Z",
        train_end="2018-01-01T00:00:00Z",
        test_start="2018-03-01T00:00:00Z",
        test_end="2019-03-01T00:00:00Z",
    )


@pytest.fixture
def small_cnn_spec() -> CnnSpec:
    return CnnSpec(conv_channels=[2, 3, 4], dense_widths=[4])


@pytest.fixture
def small_mlp_spec() -> MlpSpec:
    return MlpSpec(hidden_widths=[8])


@pytest.fixture
def quick_train_config() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=64, seed=7, learning_rate=1e-2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
