import dataclasses
import json
from datetime import datetime, timezone

import numpy as np
import pytest

from pricecast.checkpoint import (
    Checkpoint,
    TrainingSummary,
    checkpoint_filename,
    history_filename,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from pricecast.data import NormStats, Season
from pricecast.ex import CheckpointError
from pricecast.models import build_model, model_parameters, model_predict_batch, with_parameters
from pricecast.training import TrainHistory

STATS = NormStats(min=10.5, max=80.25, source_end=datetime(2017, 12, 31, 23, tzinfo=timezone.utc))


@pytest.fixture(params=["cnn", "bp"])
def fitted_model(request, small_cnn_spec, small_mlp_spec):
    spec = small_cnn_spec if request.param == "cnn" else small_mlp_spec
    model = build_model(spec, seed=11, season=Season.WINTER)
    # nudge the zero biases so every stored number is an arbitrary float
    params = [p + 1e-3 / 3 for p in model_parameters(model)]
    return dataclasses.replace(with_parameters(model, params), norm_stats=STATS)


def test_save_load_save_is_byte_identical(fitted_model, tmp_path):
    history = TrainHistory(train_loss=[0.5, 0.25], val_loss=[0.4, 0.3], best_epoch=2, best_val_loss=0.3)
    path = tmp_path / "model.json"
    save_checkpoint(path, Checkpoint.from_model(fitted_model, TrainingSummary.from_history(history)))
    first = path.read_bytes()

    loaded = load_checkpoint(path)
    assert loaded.training == TrainingSummary(epochs_run=2, best_epoch=2, best_val_loss=0.3)
    save_checkpoint(path, Checkpoint.from_model(loaded.to_model(), loaded.training))
    assert path.read_bytes() == first
    assert first.endswith(b"}\n")


def test_reloaded_parameters_are_bit_exact(fitted_model, rng):
    model = loads_checkpoint(Checkpoint.from_model(fitted_model).dumps()).to_model()
    for before, after in zip(model_parameters(fitted_model), model_parameters(model)):
        assert before.shape == after.shape
        assert before.tobytes() == after.tobytes()
    assert model.norm_stats == STATS
    assert model.meta == fitted_model.meta

    windows = rng.uniform(size=(16, 23))
    assert np.array_equal(model_predict_batch(model, windows), model_predict_batch(fitted_model, windows))


def test_checkpoint_is_self_describing(fitted_model):
    document = json.loads(Checkpoint.from_model(fitted_model).dumps())
    assert document["format_version"] == 1
    assert document["season"] == "winter"
    assert document["seed"] == 11
    assert document["spec"]["architecture"] == fitted_model.meta.spec.architecture
    assert document["norm_stats"]["min"] == 10.5
    assert [block["layer"] for block in document["parameters"]][0] == 0


def test_only_fitted_models_can_be_saved(fitted_model):
    with pytest.raises(CheckpointError):
        Checkpoint.from_model(dataclasses.replace(fitted_model, norm_stats=None))
    with pytest.raises(CheckpointError):
        seasonless = fitted_model.meta.model_copy(update={"season": None})
        Checkpoint.from_model(dataclasses.replace(fitted_model, meta=seasonless))

    params = model_parameters(fitted_model)
    params[0] = np.full_like(params[0], np.nan)
    with pytest.raises(CheckpointError, match="non-finite"):
        Checkpoint.from_model(with_parameters(fitted_model, params))


def test_corrupt_checkpoint_file(tmp_path):
    path = tmp_path / "cnn-spring.json"
    path.write_text('{"format_version": 1, "spec": ')
    with pytest.raises(CheckpointError, match="cnn-spring.json"):
        load_checkpoint(path)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.json")


def edit(model, change) -> str:
    document = json.loads(Checkpoint.from_model(model).dumps())
    change(document)
    return json.dumps(document)


def test_parameter_shape_mismatch(fitted_model):
    def grow(document):
        document["parameters"][0]["shape"][0] += 1

    with pytest.raises(CheckpointError, match="does not match"):
        loads_checkpoint(edit(fitted_model, grow))


def test_parameter_count_mismatch(fitted_model):
    def truncate(document):
        document["parameters"][-1]["weights"].pop()

    with pytest.raises(CheckpointError, match="parameter count"):
        loads_checkpoint(edit(fitted_model, truncate))


def test_missing_parameter_block(fitted_model):
    def drop(document):
        document["parameters"].pop()

    with pytest.raises(CheckpointError, match="parameter blocks"):
        loads_checkpoint(edit(fitted_model, drop))


def test_unknown_format_version(fitted_model):
    def bump(document):
        document["format_version"] = 2

    with pytest.raises(CheckpointError, match="not a valid checkpoint"):
        loads_checkpoint(edit(fitted_model, bump))


def test_unbuildable_spec(fitted_model):
    if fitted_model.meta.spec.architecture != "cnn":
        pytest.skip("only convolutional specs have a kernel")

    def widen(document):
        document["spec"]["kernel"] = 25

    with pytest.raises(CheckpointError, match="conv1"):
        loads_checkpoint(edit(fitted_model, widen))


def test_filenames():
    assert checkpoint_filename("bp", Season.FALL) == "bp-fall.json"
    assert history_filename("cnn", Season.SUMMER) == "cnn-summer-history.csv"
