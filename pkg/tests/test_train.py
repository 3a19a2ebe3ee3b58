import numpy as np
import pytest

from surgidepth.datagen import synth_dataset
from surgidepth.errors import ConfigError, TrainingError
from surgidepth.lora import count_trainable
from surgidepth.model import PROFILES, build_model, frozen_copy
from surgidepth.autodiff import parameter
from surgidepth.train import (
    OptimizerState,
    TrainConfig,
    dataset_loss,
    fit,
    optimizer_step,
    tensor_digest,
    trainable_params,
)

TOY = PROFILES["toy"]


@pytest.fixture(scope="module")
def data():
    return synth_dataset(4, 0, 56, 56)


def test_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.epochs, cfg.rank) == (1e-5, 1e-4, 8, 50, 4)
    assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (1.0, 0.85, 0.5)
    for bad in (dict(epochs=0), dict(batch_size=0), dict(lr=-1e-3), dict(rank=-1), dict(lambda2=2.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_trainable_params_enumeration():
    model = build_model(TOY, rank=4, seed=0)
    names = [n for n, _ in model.named_trainable()]
    assert sum(n.startswith("lora.") for n in names) == 16
    assert names[-2:] == ["decoder.weight", "decoder.bias"]
    assert not any(n.startswith("encoder") for n in names)
    total = sum(p.size for p in trainable_params(model))
    assert total == count_trainable(4, 64, 4, model.head.n_params)
    bare = build_model(TOY, rank=0, seed=0)
    assert [n for n, _ in bare.named_trainable()] == ["decoder.weight", "decoder.bias"]


def test_optimizer_closed_forms():
    p = parameter(np.ones((1, 1)))
    optimizer_step([p], [np.ones((1, 1))], OptimizerState.for_params([p]), TrainConfig(lr=0.1, weight_decay=0.0))
    assert p.data[0, 0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), rel=0, abs=1e-15)

    p = parameter(np.full((2, 2), 3.0))
    optimizer_step([p], [np.zeros((2, 2))], OptimizerState.for_params([p]), TrainConfig(lr=0.1, weight_decay=0.1))
    assert np.allclose(p.data, 0.99 * 3.0, rtol=0, atol=1e-15)

    # biases are not decayed
    b = parameter(np.full(3, 3.0))
    optimizer_step([b], [np.zeros(3)], OptimizerState.for_params([b]), TrainConfig(lr=0.1, weight_decay=0.1))
    assert np.array_equal(b.data, np.full(3, 3.0))

    q = parameter(np.full((2, 2), 5.0))
    optimizer_step([q], [np.zeros((2, 2))], OptimizerState.for_params([q]), TrainConfig(lr=0.1, weight_decay=0.0))
    assert np.array_equal(q.data, np.full((2, 2), 5.0))


def test_nonfinite_gradient_names_step():
    p = parameter(np.ones((2, 2)))
    state = OptimizerState.for_params([p])
    optimizer_step([p], [np.ones((2, 2))], state, TrainConfig(lr=0.1))
    with pytest.raises(TrainingError, match="step 2"):
        optimizer_step([p], [np.full((2, 2), np.nan)], state, TrainConfig(lr=0.1))


def test_zero_lr_changes_nothing(data):
    model = build_model(TOY, rank=2, seed=0)
    before = tensor_digest(trainable_params(model))
    log = fit(model, data, TrainConfig(lr=0.0, epochs=1, batch_size=2))
    assert len(log.epoch_loss) == 1 and len(log.step_loss) == 2
    assert tensor_digest(trainable_params(model)) == before


def test_initial_loss_equals_frozen_model(data):
    model = build_model(TOY, rank=4, seed=1)
    cfg = TrainConfig()
    assert dataset_loss(model, data, cfg) == dataset_loss(frozen_copy(model), data, cfg)


def test_training_is_deterministic_and_respects_freeze(data):
    cfg = TrainConfig(lr=1e-3, epochs=3, batch_size=2, seed=5)
    runs = []
    for _ in range(2):
        model = build_model(TOY, rank=2, seed=0)
        frozen = tensor_digest([t for _, t in model.named_frozen()])
        start = {n: t.data.copy() for n, t in model.named_trainable()}
        log = fit(model, data, cfg)
        assert tensor_digest([t for _, t in model.named_frozen()]) == frozen
        assert all(not np.array_equal(start[n], t.data) for n, t in model.named_trainable())
        runs.append(log.step_loss)
    assert runs[0] == runs[1]
    assert runs[0][-1] < runs[0][0]


def test_errors_carry_context(data):
    model = build_model(TOY, rank=2, seed=0)
    with pytest.raises(TrainingError):
        fit(model, [], TrainConfig())
    model.head.bias.data[:] = np.nan
    with pytest.raises(TrainingError, match="epoch 1, batch 1"):
        fit(model, data, TrainConfig(lr=1e-3, epochs=1))
