import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from builders import random_image, small_config
from sargnn.errors import ConfigError, ShapeError, TapeError
from sargnn.graph import Connectivity, ImageSample
from sargnn.model import (LayerSpec, ModelConfig, default_config, forward_batch, gradient_check,
                          init_params, model_backward, model_forward, param_shapes, predict,
                          prepare_batch)
from sargnn.pruning import prune_weights


# -- configuration -------------------------------------------------------------


def test_default_stack_shape():
    cfg = default_config()
    assert cfg.num_layers == 12
    assert cfg.num_gnn_layers == 5 and cfg.num_pools == 3
    assert cfg.level_sizes() == [32, 16, 8, 4]


def test_parameter_counts():
    n32 = sum(int(np.prod(s)) for s in param_shapes(default_config()).values())
    n128 = sum(int(np.prod(s)) for s in param_shapes(default_config(grid_size=128)).values())
    assert n32 == 94730
    assert n128 == 34026


@pytest.mark.parametrize("bad", [
    dict(grid_size=30),
    dict(num_classes=0),
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        default_config(**bad)


def test_width_mismatch_rejected():
    stack = [LayerSpec("sage", 1, 4), LayerSpec("sage", 5, 4), LayerSpec("flatten", 4, 4),
             LayerSpec("fc", 64, 2)]
    with pytest.raises(ConfigError, match="layer 1"):
        ModelConfig(8, 1, 4, stack, 2)


def test_layer_spec_parse():
    assert str(LayerSpec.parse(" GAT:3:7 ")) == "gat:3:7"
    with pytest.raises(ConfigError):
        LayerSpec.parse("sage:3")
    with pytest.raises(ConfigError):
        LayerSpec("pool", 3, 4)


def test_channel_mismatch():
    cfg = small_config(channels=2)
    with pytest.raises(ShapeError):
        prepare_batch(cfg, [ImageSample(np.zeros((8, 8, 1)), 0)])


def test_fit_to_grid_pads_and_crops():
    cfg = small_config()
    x, _, _ = prepare_batch(cfg, [ImageSample(np.ones((4, 12, 1)), 0)])
    assert x.shape == (1, 8, 8, 1)
    assert x[0, :, :, 0].sum() == 32 and x[0, 2:6].all()


# -- forward behaviour -----------------------------------------------------------


def test_empty_image_gives_bias_logits():
    cfg = small_config()
    params = init_params(cfg, 1)
    params.values["L06.b"][:] = [0.1, -0.2, 0.3, 0.0, 0.5, 0.0]
    params.values["L07.b"][:] = [1.0, 2.0, 3.0]
    logits, _ = model_forward(cfg, params, ImageSample(np.zeros((8, 8, 1)), 0), iv=0.01)
    relu_b = np.maximum(params.values["L06.b"], 0)
    np.testing.assert_allclose(logits, relu_b @ params.values["L07.W"] + [1.0, 2.0, 3.0])


def test_predict_matches_single_forward(rng):
    cfg = small_config()
    params = init_params(cfg, 2)
    samples = [ImageSample(random_image(rng, 8, 1), 0) for _ in range(5)]
    batched = predict(cfg, params, samples, iv=0.2, batch_size=2)
    for s, row in zip(samples, batched):
        np.testing.assert_allclose(model_forward(cfg, params, s, iv=0.2)[0], row, atol=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["sage", "gcn", "gat"]),
       st.sampled_from([4, 8]), st.booleans(), st.booleans(), st.sampled_from([0.0, 0.3, 0.6]))
def test_matches_masked_oracle(seed, kind, conn, va, fa, iv):
    rng = np.random.default_rng(seed)
    cfg = small_config(kind, conn, channels=2, va=va, fa=fa)
    params = init_params(cfg, seed % 1000)
    img = random_image(rng, 8, 2)
    x, ex, _ = prepare_batch(cfg, [img], iv)
    logits, _ = forward_batch(cfg, params, x, ex, check=True)
    ref = oracles.model(cfg, params.values, img, iv)
    np.testing.assert_allclose(logits[0], ref, rtol=0, atol=1e-10)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["sage", "gcn", "gat"]),
       st.floats(0.0, 0.5))
def test_sparse_path_matches_dense(seed, kind, iw):
    rng = np.random.default_rng(seed)
    cfg = small_config(kind, 8, channels=1)
    params, _ = prune_weights(init_params(cfg, seed % 997), iw)
    x, ex, _ = prepare_batch(cfg, [random_image(rng, 8, 1) for _ in range(3)], 0.1)
    dense, _ = forward_batch(cfg, params, x, ex)
    sparse, _ = forward_batch(cfg, params, x, ex, sparse=True)
    np.testing.assert_allclose(sparse, dense, rtol=0, atol=1e-9)


# -- backward --------------------------------------------------------------------


def test_tape_version_check(rng):
    cfg = small_config()
    params = init_params(cfg, 0)
    logits, tape = model_forward(cfg, params, ImageSample(random_image(rng, 8, 1), 0))
    params.bump()
    with pytest.raises(TapeError):
        model_backward(tape, np.ones_like(logits))


def test_tape_batch_mismatch(rng):
    cfg = small_config()
    params = init_params(cfg, 0)
    logits, tape = model_forward(cfg, params, ImageSample(random_image(rng, 8, 1), 0))
    with pytest.raises(TapeError):
        model_backward(tape, np.ones((2, 3)))


def test_zero_upstream_gradient(rng):
    cfg = small_config("gat")
    params = init_params(cfg, 0)
    logits, tape = model_forward(cfg, params, ImageSample(random_image(rng, 8, 1), 0))
    grads = model_backward(tape, np.zeros_like(logits))
    assert set(grads) == set(param_shapes(cfg))
    assert all(not np.any(g) for g in grads.values())


def test_masked_gradients_are_zero(rng):
    cfg = small_config()
    params, _ = prune_weights(init_params(cfg, 0), 0.3)
    logits, tape = model_forward(cfg, params, ImageSample(random_image(rng, 8, 1), 0))
    grads = model_backward(tape, np.ones_like(logits))
    for name, mask in params.masks.items():
        assert not np.any(grads[name][~mask])


@pytest.mark.parametrize("kind", ["sage", "gcn", "gat"])
@pytest.mark.parametrize("conn", [4, 8])
def test_small_model_gradients(kind, conn, rng):
    cfg = small_config(kind, conn)
    res = gradient_check(cfg, init_params(cfg, 3), ImageSample(random_image(rng, 8, 1), 0),
                         n_coords=120, seed=1, iv=0.05)
    assert res.ok(1e-4), res


def test_default_stack_gradients():
    cfg = default_config(grid_size=8)
    rng = np.random.default_rng(0)
    res = gradient_check(cfg, init_params(cfg, 0), ImageSample(rng.uniform(0, 1, (8, 8, 1)), 0),
                         n_coords=200, seed=0)
    assert res.ok(1e-4), res
