import numpy as np
import pytest

from nplb.embedding_net import (LayerSpec, ModelParams, backward, build_model, embed, forward,
                                init_params, layer_chain, load_checkpoint, save_checkpoint)
from nplb.errors import ConfigurationError, DataError, DimensionError, TraceError
from nplb.numeric_core import RandomSource
from nplb.triplet_losses import NPLB, SWAP, TRADITIONAL

import gradcheck
import oracles


def test_default_chain_and_parameter_count(rng):
    params = build_model(64, 32, rng)
    assert [(s.in_dim, s.out_dim) for s in params.specs] == [(64, 512), (512, 256), (256, 32)]
    assert [s.dropout_rate for s in params.specs] == [0.1, 0.1, 0.0]
    assert all(s.has_prelu for s in params.specs)
    # 64*512+512 + 512*256+256 + 256*32+32 + 3 slopes
    assert params.n_parameters() == 172_835


def test_small_chain_shapes(rng):
    params = build_model(2, 2, rng)
    assert [(s.in_dim, s.out_dim) for s in params.specs] == [(2, 512), (512, 256), (256, 2)]
    out, trace = forward(params, np.ones((5, 2)), training=True, rng=rng)
    assert out.shape == (5, 2)
    assert sum(m is not None for m in trace.masks) == 2


def test_initialization_ranges(rng):
    params = build_model(16, 4, rng, hidden=(32,))
    for i, spec in enumerate(params.specs):
        w = params.tensors[f"layer{i}.weight"]
        assert np.all(np.abs(w) <= 1 / np.sqrt(spec.in_dim))
        assert not params.tensors[f"layer{i}.bias"].any()
        assert params.tensors[f"layer{i}.prelu"].tolist() == [0.25]


def test_layer_spec_validation():
    with pytest.raises(ConfigurationError):
        LayerSpec(0, 3)
    with pytest.raises(ConfigurationError):
        LayerSpec(3, 3, dropout_rate=1.0)


def test_zero_weights_give_zero_embedding(rng):
    params = build_model(3, 2, rng, hidden=(4,))
    zero = params.with_tensors({k: np.zeros_like(v) for k, v in params.tensors.items()})
    assert not embed(zero, rng.normal(size=(6, 3))).any()


def test_inference_is_deterministic_and_matches_oracle(rng):
    params = build_model(5, 3, rng, hidden=(7, 6))
    x = rng.normal(size=(9, 5))
    a = embed(params, x)
    assert np.array_equal(a, embed(params, x))
    np.testing.assert_allclose(a, oracles.mlp_forward(params, x), rtol=1e-12, atol=1e-14)


def test_prelu_hand_value():
    spec = (LayerSpec(1, 1, True, 0.0),)
    params = ModelParams(spec, {"layer0.weight": np.array([[1.0]]), "layer0.bias": np.zeros(1),
                                "layer0.prelu": np.array([0.5])})
    assert embed(params, [[-2.0]]).tolist() == [[-1.0]]
    assert embed(params, [[3.0]]).tolist() == [[3.0]]


def test_forward_shape_check(rng):
    params = build_model(4, 2, rng, hidden=(3,))
    with pytest.raises(DimensionError):
        forward(params, np.zeros((2, 5)))
    with pytest.raises(ConfigurationError):
        forward(params, np.zeros((2, 4)), training=True)


def test_dropout_masks_are_inverted_and_unbiased():
    specs = (LayerSpec(1, 100_000, False, 0.1),)
    params = init_params(specs, RandomSource(0))
    _, trace = forward(params, np.ones((1, 1)), training=True, rng=RandomSource(1))
    mask = trace.masks[0]
    assert set(np.unique(mask)) <= {0.0, 1 / 0.9}
    assert abs(mask.mean() - 1.0) < 0.01


def test_zero_upstream_gives_zero_gradients(rng):
    params = build_model(4, 3, rng, hidden=(8, 6))
    _, trace = forward(params, rng.normal(size=(5, 4)), training=True, rng=rng)
    grads = backward(params, trace, np.zeros((5, 3)))
    assert all(not g.any() for g in grads.values())
    assert set(grads) == set(params.tensors)


def test_backward_rejects_foreign_trace(rng):
    params = build_model(4, 3, rng, hidden=(8,))
    other = params.copy()
    _, trace = forward(params, np.ones((2, 4)))
    with pytest.raises(TraceError):
        backward(other, trace, np.ones((2, 3)))
    with pytest.raises(TraceError):
        backward(params, trace, np.ones((3, 3)))


@pytest.mark.parametrize("kind", [TRADITIONAL, SWAP, NPLB], ids=str)
def test_gradients_match_finite_differences(kernel_impl, kind):
    params = build_model(4, 3, RandomSource(3), hidden=(8, 6))
    src = RandomSource(4)
    checked = 0
    while checked < 3:
        x = src.normal(size=(3 * 4, 4))
        if gradcheck.near_kink(params, x, kind, 1.0, seed=checked):
            continue
        assert gradcheck.max_relative_error(params, x, kind, seed=checked) < 1e-4
        checked += 1


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    params = build_model(6, 3, rng, hidden=(5, 4))
    path = tmp_path / "model.json"
    save_checkpoint(path, params, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert loaded.specs == params.specs
    for k, v in params.tensors.items():
        assert np.array_equal(loaded.tensors[k], v)
        assert loaded.tensors[k].tobytes() == v.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    with pytest.raises(DataError):
        load_checkpoint(bad)
    bad.write_text('{"format": "other"}')
    with pytest.raises(DataError):
        load_checkpoint(bad)
