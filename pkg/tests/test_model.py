import sys
import pytest
import numpy as onp
import jax
import jax.numpy as jnp
from jax.experimental import enable_x64
from numpy.testing import assert_equal, assert_array_equal, assert_allclose

sys.path.insert(0, "../gaussclust/")

from gaussclust.models.kernels import AttentionParams, coordinate_grid, gaussian_attention_map
from gaussclust.flax_nets.clusternet import (ModelConfig, build_model, forward, inference_assign,
                                             assign_from_features)
from gaussclust.flax_nets.convnet import conv_output_size
from gaussclust.flax_nets.configs import get_architecture


def tiny_config(k=3, channels=1):
    return ModelConfig(input_size=(16, 16), in_channels=channels, cluster_count=k,
                       layers=((4, 3, 1), "M", (4, 3, 0)), attention_map_size=(6, 6))


def params(mu_x, mu_y, delta):
    return AttentionParams(jnp.asarray(mu_x), jnp.asarray(mu_y), jnp.asarray(delta))


def test_kernel_peak_at_mean():
    A = gaussian_attention_map(params(0.5, 0.5, 0.1), (3, 3), alpha=0.05)
    assert_allclose(A[1, 1], 1.)
    assert A.max() <= 1. and A.min() > 0


def test_kernel_value():
    # (u - mu)^2 / delta = 0.25 / 0.05 = 5 at the middle of the right edge
    A = gaussian_attention_map(params(0.5, 0.5, 0.05), (3, 3), alpha=1.)
    assert_allclose(A[1, 2], onp.exp(-5.), rtol=1e-5)
    assert_allclose(A[1, 2], 0.006738, atol=1e-6)


def test_kernel_wider_spread():
    narrow = gaussian_attention_map(params(0.2, 0.7, 0.05), (6, 6))
    wide = gaussian_attention_map(params(0.2, 0.7, 0.1), (6, 6))
    off_peak = narrow < 1.
    assert onp.all(onp.asarray(wide)[onp.asarray(off_peak)] > onp.asarray(narrow)[onp.asarray(off_peak)])


@pytest.mark.parametrize("alpha, delta", [(0., 0.1), (-1., 0.1), (0.05, 0.), (0.05, -0.2)])
def test_kernel_invalid(alpha, delta):
    with pytest.raises(ValueError):
        gaussian_attention_map(params(0.5, 0.5, delta), (4, 4), alpha=alpha)


def test_kernel_transposition():
    A = gaussian_attention_map(params(0.2, 0.9, 0.07), (5, 5))
    B = gaussian_attention_map(params(0.9, 0.2, 0.07), (5, 5))
    assert_allclose(A, B.T, rtol=1e-6)


def test_kernel_batched():
    p = params([0.1, 0.5], [0.3, 0.5], [0.05, 0.2])
    A = gaussian_attention_map(p, (4, 6))
    assert_equal(A.shape, (2, 4, 6))


def test_coordinate_grid():
    xx, yy = coordinate_grid((2, 3))
    assert_allclose(xx, [[0., .5, 1.], [0., .5, 1.]])
    assert_allclose(yy, [[0., 0., 0.], [1., 1., 1.]])


@pytest.mark.parametrize("seed", range(100))
def test_kernel_gradient_finite_differences(seed):
    with enable_x64():
        rng = onp.random.default_rng(seed)
        alpha = float(rng.choice([0.05, 0.1, 0.5, 1.]))
        grid = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        theta = jnp.asarray([rng.uniform(0., 1.), rng.uniform(0., 1.), rng.uniform(0.05, 0.3)])
        weights = jnp.asarray(rng.uniform(size=grid))

        def f(t):
            return jnp.sum(weights * gaussian_attention_map(params(t[0], t[1], t[2]), grid, alpha))

        grad = jax.grad(f)(theta)
        h = 1e-6
        for i in range(3):
            e = jnp.zeros(3).at[i].set(h)
            numeric = (f(theta + e) - f(theta - e)) / (2 * h)
            assert_allclose(grad[i], numeric, rtol=1e-5, atol=1e-7)


def test_from_raw_ranges():
    raw = jnp.asarray([[-50., 50., -50.], [0., 0., 0.], [3., -3., 40.]])
    p = AttentionParams.from_raw(raw)
    for mu in (p.mu_x, p.mu_y):
        assert onp.all((mu >= 0) & (mu <= 1))
    assert onp.all(p.delta >= 1e-3)
    assert_allclose(p.mu_x[1], 0.5)


@pytest.mark.parametrize("name, size", [
    ("stl10", (6, 6)), ("imagenet_dog", (4, 4)), ("cifar", (5, 5)), ("shapes64", (5, 5)),
    ("imagenet10_128_att10", (10, 10)), ("imagenet10_128_att8", (8, 8)),
    ("imagenet10_128", (6, 6)), ("imagenet10_128_att4", (4, 4)), ("imagenet10_128_att2", (2, 2))])
def test_preset_attention_sizes(name, size):
    input_size, layers = get_architecture(name)
    assert_equal(conv_output_size(layers, input_size), size)
    assert_equal(ModelConfig.from_preset(name, 10).attention_map_size, size)


def test_unknown_preset():
    with pytest.raises(ValueError):
        get_architecture("resnet")


def test_stl10_output_shapes():
    model = build_model(ModelConfig.from_preset("stl10", 10), seed=0)
    x = onp.random.rand(2, 96, 96, 1).astype(onp.float32)
    out, stats = forward(model, x)
    assert stats is None
    assert_equal(out.label_feature.shape, (2, 10))
    assert_equal(out.attention_label_feature.shape, (2, 10))
    assert_equal(out.attention_params.mu_x.shape, (2,))
    assert_equal(out.attention_map.shape, (2, 6, 6))


def test_attention_size_mismatch():
    cfg = ModelConfig(input_size=(16, 16), in_channels=1, cluster_count=3,
                      layers=((4, 3, 1), "M", (4, 3, 0)), attention_map_size=(5, 5))
    with pytest.raises(ValueError):
        build_model(cfg)


@pytest.mark.parametrize("kwargs", [dict(cluster_count=1), dict(in_channels=2),
                                    dict(kernel_temperature=0.)])
def test_model_config_invalid(kwargs):
    base = dict(input_size=(16, 16), in_channels=1, cluster_count=3,
                layers=((4, 3, 1), "M", (4, 3, 0)), attention_map_size=(6, 6))
    base.update(kwargs)
    with pytest.raises(ValueError):
        ModelConfig(**base).validate()


def test_build_model_deterministic():
    a = build_model(tiny_config(), seed=4)
    b = build_model(tiny_config(), seed=4)
    c = build_model(tiny_config(), seed=5)
    leaves_a = jax.tree_util.tree_leaves(a.variables)
    for x, y in zip(leaves_a, jax.tree_util.tree_leaves(b.variables)):
        assert_array_equal(x, y)
    assert any(not onp.array_equal(x, y)
               for x, y in zip(leaves_a, jax.tree_util.tree_leaves(c.variables)))


@pytest.mark.parametrize("channels", [1, 3])
@pytest.mark.parametrize("batch_size", [1, 5])
def test_outputs_are_distributions(channels, batch_size):
    model = build_model(tiny_config(channels=channels))
    x = onp.random.rand(batch_size, 16, 16, channels).astype(onp.float32)
    out, _ = forward(model, x)
    for feature in (out.label_feature, out.attention_label_feature):
        assert onp.all(onp.asarray(feature) >= 0)
        assert_allclose(onp.asarray(feature).sum(-1), 1., rtol=1e-5)
    assert onp.all((onp.asarray(out.attention_map) > 0) & (onp.asarray(out.attention_map) <= 1))


def test_zero_image_is_finite():
    model = build_model(tiny_config())
    out, _ = forward(model, onp.zeros((2, 16, 16, 1), onp.float32))
    assert onp.all(onp.isfinite(out.label_feature))
    assert onp.all(onp.isfinite(out.attention_label_feature))


def test_train_mode_returns_batch_stats():
    model = build_model(tiny_config())
    out, stats = forward(model, onp.random.rand(4, 16, 16, 1), train=True)
    assert stats is not None
    assert_equal(jax.tree_util.tree_structure(stats),
                 jax.tree_util.tree_structure(model.variables["batch_stats"]))


def test_wrong_input_shape():
    model = build_model(tiny_config())
    with pytest.raises(ValueError):
        forward(model, onp.zeros((2, 16, 16, 3)))


def test_inference_assign():
    model = build_model(tiny_config())
    ids = inference_assign(model, onp.random.rand(7, 16, 16, 1))
    assert_equal(ids.shape, (7,))
    assert onp.all((ids >= 0) & (ids < 3))


def test_assign_from_features_ties():
    assert_array_equal(assign_from_features([[0.5, 0.5], [0.1, 0.9]]), [0, 1])
    assert_array_equal(assign_from_features([[0.1, 0.7, 0.2]]), [1])


def test_softmax_extreme_logits():
    p = jax.nn.softmax(jnp.asarray([1e3, 0., -1e3]))
    assert onp.all(onp.isfinite(p))
    assert_allclose(p, [1., 0., 0.])
