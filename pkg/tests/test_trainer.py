import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nplb.errors import ConfigurationError, DimensionError, DivergenceError, SamplingError
from nplb.eval_suite import make_blobs
from nplb.numeric_core import RandomSource
from nplb.trainer import (AdamState, TrainConfig, adam_step, check_triplets, lr_schedule,
                          sample_triplets, train)


def _small_config(**kw):
    base = dict(epochs=3, n_triplets=64, batch_size=16, hidden=(8,), output_dim=3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_forced_triplets():
    t = sample_triplets(["A", "A", "B"], 4, RandomSource(0))
    assert t.shape == (4, 3)
    assert set(t[:, 0]) <= {0, 1} and set(t[:, 1]) <= {0, 1}
    assert np.all(t[:, 0] != t[:, 1])
    assert t[:, 2].tolist() == [2, 2, 2, 2]


def test_sampling_errors():
    with pytest.raises(SamplingError):
        sample_triplets(["A", "B"], 3, RandomSource(0))
    with pytest.raises(SamplingError):
        sample_triplets(["A", "A"], 3, RandomSource(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=3, max_size=60), st.integers(0, 2**31))
def test_sampled_triplets_satisfy_label_constraints(labels, seed):
    labels = np.array(labels)
    counts = np.bincount(labels)
    if (counts > 0).sum() < 2 or counts.max() < 2:
        with pytest.raises(SamplingError):
            sample_triplets(labels, 50, RandomSource(seed))
        return
    t = sample_triplets(labels, 50, RandomSource(seed))
    assert check_triplets(t, labels)
    # singleton classes can only appear as negatives
    single = np.flatnonzero(counts[labels] == 1)
    assert not np.isin(t[:, :2], single).any()


def test_sampling_is_roughly_uniform():
    labels = np.repeat([0, 1, 2], [2, 3, 5])
    t = sample_triplets(labels, 60_000, RandomSource(7))
    # anchors uniform over the 10 rows
    freq = np.bincount(t[:, 0], minlength=10) / 60_000
    assert np.all(np.abs(freq - 0.1) < 0.01)
    # anchor 0 (class 0) always pairs with 1 and draws negatives from the other 8 rows
    rows = t[t[:, 0] == 0]
    assert set(rows[:, 1]) == {1}
    neg = np.bincount(rows[:, 2], minlength=10)[2:] / rows.shape[0]
    assert np.all(np.abs(neg - 1 / 8) < 0.03)


def test_sampling_replays():
    labels = np.arange(40) % 4
    a = sample_triplets(labels, 500, RandomSource(3))
    assert np.array_equal(a, sample_triplets(labels, 500, RandomSource(3)))


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), 0.1)
    assert np.array_equal(new["w"], params["w"])
    assert state.t == 1


def test_adam_converges_on_square():
    x = {"x": np.array([1.0])}
    state = AdamState.zeros_like(x)
    for _ in range(500):
        x, state = adam_step(x, {"x": 2 * x["x"]}, state, 0.1)
    assert abs(x["x"][0]) < 1e-3


@pytest.mark.parametrize("c", [3.0, -0.02, 1e4])
def test_adam_first_step_moves_by_lr(c):
    x = {"x": np.array([0.0])}
    new, _ = adam_step(x, {"x": np.array([c])}, AdamState.zeros_like(x), 0.01)
    assert abs(new["x"][0]) == pytest.approx(0.01, rel=1e-5)
    assert np.sign(new["x"][0]) == -np.sign(c)


def test_adam_shape_errors():
    x = {"x": np.zeros(2)}
    with pytest.raises(DimensionError):
        adam_step(x, {"x": np.zeros(3)}, AdamState.zeros_like(x), 0.1)
    with pytest.raises(DimensionError):
        adam_step(x, {"y": np.zeros(2)}, AdamState.zeros_like(x), 0.1)


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_schedule(cfg, 0) == 0.001
    assert lr_schedule(cfg, 49) == 0.001
    assert lr_schedule(cfg, 50) == pytest.approx(0.00095, rel=1e-12)
    assert lr_schedule(cfg, 120) == pytest.approx(0.001 * 0.95 ** 2, rel=1e-12)
    flat = TrainConfig(gamma=1.0)
    assert {lr_schedule(flat, e) for e in range(0, 500, 7)} == {0.001}


@pytest.mark.parametrize("kw", [dict(lr=0), dict(gamma=0), dict(gamma=1.5), dict(batch_size=0),
                                dict(decay_every=0), dict(margin=-1), dict(loss="nplb", epochs=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_zero_epochs_returns_initial_params(nprng):
    x = nprng.normal(size=(12, 4))
    labels = np.arange(12) % 3
    cfg = _small_config(epochs=0)
    res = train(x, labels, cfg)
    init = train(x, labels, cfg).params
    assert res.losses == []
    for k, v in init.tensors.items():
        assert np.array_equal(res.params.tensors[k], v)


def test_training_is_deterministic(kernel_impl, nprng):
    x = nprng.normal(size=(30, 4))
    labels = np.arange(30) % 3
    a = train(x, labels, _small_config())
    b = train(x, labels, _small_config())
    assert a.losses == b.losses
    for k in a.params.tensors:
        assert a.params.tensors[k].tobytes() == b.params.tensors[k].tobytes()
    c = train(x, labels, _small_config(seed=2))
    assert c.losses != a.losses


def test_loss_decreases_on_blobs():
    rng = RandomSource(11)
    x, y = make_blobs(60, 6, 3, 2.5, rng)
    res = train(x, y, TrainConfig(epochs=8, n_triplets=1024, batch_size=64, hidden=(64, 32),
                                  output_dim=8, seed=0))
    assert len(res.losses) == 8 and np.all(np.isfinite(res.losses))
    assert res.losses[-1] < res.losses[0]
    assert res.loss_log_text().splitlines()[0] == "epoch,lr,mean_loss"


def test_divergence_is_reported():
    x = np.repeat([[1e200], [-1e200]], 4, axis=0)
    labels = [0, 1] * 4
    with pytest.raises(DivergenceError, match="step 1"):
        train(x, labels, _small_config())


def test_dataset_validation():
    with pytest.raises(DimensionError):
        train(np.zeros((4, 2)), [0, 1, 0], _small_config())
