import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nplb.errors import ConfigurationError, DimensionError, EmptyInputError, NPLBError
from nplb.eval_suite import (BenchmarkSpec, confusion_counts, f1_scores, knn_predict, make_blobs,
                             run_benchmark, stratified_split)
from nplb.numeric_core import RandomSource
from nplb.trainer import TrainConfig

import oracles


def _tiny_spec(**kw):
    base = dict(n_per_class=20, dim=4, seeds=(0,), k=5, losses=("traditional", "nplb"),
                train=TrainConfig(epochs=2, n_triplets=128, batch_size=32, hidden=(16,),
                                  output_dim=3))
    base.update(kw)
    return BenchmarkSpec(**base)


def test_knn_exact_match_and_global_majority(kernel_impl, nprng):
    x = nprng.normal(size=(10, 3))
    y = np.array([0, 0, 0, 0, 0, 0, 1, 1, 2, 2])
    assert knn_predict(x, y, x[[7]], k=1).tolist() == [1]
    assert knn_predict(x, y, nprng.normal(size=(6, 3)), k=10).tolist() == [0] * 6


def test_knn_tie_rules(kernel_impl):
    train = np.array([[1.0], [-2.0], [3.0], [-3.0]])
    # k=2: one vote each for "a" (d=1) and "b" (d=2); smaller summed distance wins
    assert knn_predict(train, ["a", "b", "a", "b"], [[0.0]], k=2).tolist() == ["a"]
    # equal sums: smaller label wins
    eq = np.array([[1.0], [-1.0]])
    assert knn_predict(eq, ["z", "y"], [[0.0]], k=2).tolist() == ["y"]


def test_knn_matches_oracle(kernel_impl, nprng):
    for trial in range(20):
        x = nprng.normal(size=(20, 3))
        y = nprng.integers(0, 3, size=20)
        q = nprng.normal(size=(15, 3))
        assert knn_predict(x, y, q, k=5).tolist() == oracles.knn(x, y.tolist(), q, 5)


def test_knn_errors():
    x = np.zeros((3, 2))
    with pytest.raises(ConfigurationError):
        knn_predict(x, [0, 1, 2], x, k=4)
    with pytest.raises(ConfigurationError):
        knn_predict(x, [0, 1, 2], x, k=0)
    with pytest.raises(DimensionError):
        knn_predict(x, [0, 1], x, k=1)
    with pytest.raises(DimensionError):
        knn_predict(x, [0, 1, 2], np.zeros((1, 3)), k=1)


def test_knn_rigid_invariance(nprng):
    x = nprng.normal(size=(60, 3))
    y = nprng.integers(0, 3, size=60)
    q = nprng.normal(size=(30, 3))
    rot = Rotation.random(random_state=4).as_matrix()
    shift = np.array([5.0, -2.0, 0.5])
    assert np.array_equal(knn_predict(x, y, q, k=7),
                          knn_predict(x @ rot.T + shift, y, q @ rot.T + shift, k=7))


def test_f1_examples():
    perfect = f1_scores([0, 1, 2, 1], [0, 1, 2, 1])
    assert perfect["weighted_f1"] == perfect["micro_f1"] == 1.0
    assert set(perfect["per_class_f1"].values()) == {1.0}
    # TP=2 FP=1 FN=1 TN=6 for class 1
    true = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    pred = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
    cc = confusion_counts(true, pred)
    assert (cc.tp.tolist(), cc.fp.tolist(), cc.fn.tolist()) == ([6, 2], [1, 1], [1, 1])
    assert f1_scores(true, pred)["per_class_f1"][1] == 2 * (2 / 3) * (2 / 3) / (4 / 3)
    assert f1_scores(true, pred)["per_class_f1"][1] == pytest.approx(2 / 3, rel=1e-15)
    single = f1_scores(["x"] * 4, ["x"] * 4)
    assert single["weighted_f1"] == single["micro_f1"] == 1.0


def test_f1_predicted_only_class_scores_zero():
    out = f1_scores([0, 0], [0, 5])
    assert out["per_class_f1"][5] == 0.0
    assert out["weighted_f1"] == pytest.approx(2 / 3)


def test_f1_errors():
    with pytest.raises(DimensionError):
        f1_scores([0, 1], [0])
    with pytest.raises(EmptyInputError):
        f1_scores([], [])


def test_f1_matches_oracle_and_micro_is_accuracy(nprng):
    for _ in range(200):
        true = nprng.integers(0, 4, size=25)
        pred = np.where(nprng.random(25) < 0.6, true, nprng.integers(0, 4, size=25))
        got = f1_scores(true, pred)
        assert got["per_class_f1"] == oracles.f1_per_class(true.tolist(), pred.tolist())
        weighted, micro = oracles.f1_weighted_micro(true.tolist(), pred.tolist())
        assert got["weighted_f1"] == pytest.approx(weighted, rel=1e-12)
        assert got["micro_f1"] == micro
        assert abs(got["micro_f1"] - np.mean(true == pred)) < 1e-12


def test_blobs_and_split():
    x, y = make_blobs(30, 5, 3, 2.0, RandomSource(0))
    assert x.shape == (90, 5) and np.bincount(y).tolist() == [30, 30, 30]
    again, _ = make_blobs(30, 5, 3, 2.0, RandomSource(0))
    assert np.array_equal(x, again)
    tr, te = stratified_split(y, 0.8, RandomSource(1))
    assert np.bincount(y[tr]).tolist() == [24, 24, 24]
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(90))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        BenchmarkSpec(seeds=())
    with pytest.raises(ConfigurationError):
        BenchmarkSpec(k=0)
    with pytest.raises(ConfigurationError):
        BenchmarkSpec(losses=("mdr",))


def test_single_seed_benchmark_is_deterministic():
    a = run_benchmark(_tiny_spec())
    b = run_benchmark(_tiny_spec())
    assert a.table_text() == b.table_text()
    summary = a.summary()
    assert list(summary) == ["traditional", "nplb(p=2)"]
    for row in summary.values():
        assert row["weighted_f1_std"] == 0.0 and row["micro_f1_std"] == 0.0
        assert 0.0 <= row["weighted_f1_mean"] <= 1.0
    lines = a.table_text().splitlines()
    assert lines[0] == "loss,weighted_f1_mean,weighted_f1_std,micro_f1_mean,micro_f1_std,mean_unif"
    assert len(lines[1:3]) == 2


def test_benchmark_std_is_population_std():
    res = run_benchmark(_tiny_spec(seeds=(0, 1), losses=("traditional",)))
    w = [r["weighted_f1"] for r in res.per_seed["traditional"]]
    assert res.summary()["traditional"]["weighted_f1_std"] == pytest.approx(abs(w[0] - w[1]) / 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_benchmark_errors_carry_seed_context():
    spec = _tiny_spec(train=TrainConfig(epochs=1, n_triplets=16, batch_size=16, hidden=(4,),
                                        output_dim=2, lr=1e300))
    spec.n_per_class = 6
    with pytest.raises(NPLBError, match="seed 0, loss traditional"):
        run_benchmark(spec)
