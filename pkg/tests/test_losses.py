import sys
import pytest
import numpy as onp
import jax
import jax.numpy as jnp
from jax.experimental import enable_x64
from numpy.testing import assert_allclose

sys.path.insert(0, "../gaussclust/")

from gaussclust.models.losses import (LossWeights, binary_cross_entropy, transformation_loss,
                                      separability_loss, entropy_loss, attention_loss,
                                      pairwise_separability, total_loss)
from gaussclust.models.kernels import AttentionParams
from gaussclust.models.pseudo_targets import PseudoTargetSet, RelationMatrix
from gaussclust.flax_nets.clusternet import ModelOutput


def dirichlet(rng, *shape):
    return rng.dirichlet(onp.ones(shape[-1]) * 2., size=shape[:-1])


def directional_check(f, x, rng, h=1e-6, rtol=1e-5):
    """Compares grad(f) . v with a central difference along a random direction v"""
    v = jnp.asarray(rng.standard_normal(x.shape))
    analytic = jnp.sum(jax.grad(f)(x) * v)
    numeric = (f(x + h * v) - f(x - h * v)) / (2 * h)
    assert_allclose(analytic, numeric, rtol=rtol, atol=1e-8)


def random_shape(rng):
    return int(rng.integers(2, 9)), int(rng.integers(2, 11))


def make_outputs(l, l_a):
    n = l.shape[0]
    params = AttentionParams(jnp.full(n, .5), jnp.full(n, .5), jnp.full(n, .1))
    return ModelOutput(jnp.asarray(l), jnp.asarray(l_a), params, jnp.ones((n, 3, 3)))


def make_targets(l_hat, l_a_hat, assignments, indices):
    return PseudoTargetSet(jnp.asarray(l_hat), RelationMatrix(jnp.asarray(assignments)),
                           jnp.asarray(l_a_hat), jnp.asarray(indices))


def test_transformation_loss_value():
    assert_allclose(transformation_loss(jnp.array([.3, .6, .1]), jnp.array([.2, .8, 0.])), -.54, rtol=1e-6)


def test_binary_cross_entropy_value():
    assert_allclose(binary_cross_entropy(1., .5), onp.log(2.), rtol=1e-6)
    assert_allclose(binary_cross_entropy(0., .5), onp.log(2.), rtol=1e-6)
    # log arguments are floored, so saturated predictions stay finite
    assert onp.isfinite(binary_cross_entropy(1., 0.))
    assert_allclose(binary_cross_entropy(1., 1.), 0., atol=1e-7)


@pytest.mark.parametrize("k", [2, 10])
def test_entropy_loss_uniform(k):
    assert_allclose(entropy_loss(jnp.full((4, k), 1. / k)), -onp.log(k), rtol=1e-6)


def test_entropy_loss_collapsed():
    l = jnp.tile(jnp.array([1., 0., 0.]), (5, 1))
    assert_allclose(entropy_loss(l), 0., atol=1e-7)


def test_separability_loss_value():
    value = separability_loss(1., jnp.array([1., 0.]), jnp.array([.5, .5]))
    assert_allclose(value, onp.log(onp.sqrt(2.)), rtol=1e-5)


def test_separability_loss_half_similarity():
    # cos((1, 0, 0, 0), uniform) = 0.25 / 0.5
    value = separability_loss(1., jnp.array([1., 0., 0., 0.]), jnp.full(4, .25))
    assert_allclose(value, onp.log(2.), rtol=1e-5)
    assert_allclose(value, 0.6931, atol=1e-4)


def test_separability_loss_consistent_pairs():
    e1, e2 = jnp.array([1., 0., 0.]), jnp.array([0., 1., 0.])
    assert_allclose(separability_loss(0., e1, e2), 0., atol=1e-6)
    assert_allclose(separability_loss(1., e1, e1), 0., atol=1e-6)
    assert separability_loss(1., e1, e2) > 10.


def test_attention_loss_value():
    assert_allclose(attention_loss(jnp.array([.5, .5]), jnp.array([1., 0.])), onp.log(2.), rtol=1e-6)
    assert_allclose(attention_loss(jnp.array([.5, .5]), jnp.array([.5, .5])), onp.log(2.), rtol=1e-6)


def test_attention_loss_matching_one_hot():
    one_hot = jnp.array([0., 1., 0.])
    assert_allclose(attention_loss(one_hot, one_hot), 0., atol=1e-6)


def test_transformation_loss_orthogonal():
    assert_allclose(transformation_loss(jnp.array([1., 0., 0.]), jnp.array([0., 0., 1.])), 0., atol=1e-12)
    assert_allclose(transformation_loss(jnp.array([0., 1.]), jnp.array([0., 1.])), -1.)


@pytest.mark.parametrize("seed", range(10))
def test_transformation_loss_range(seed):
    rng = onp.random.default_rng(400 + seed)
    k = int(rng.integers(2, 12))
    values = onp.asarray(transformation_loss(jnp.asarray(dirichlet(rng, 50, k)),
                                             jnp.asarray(dirichlet(rng, 50, k))))
    assert onp.all(values >= -1. - 1e-6) and onp.all(values <= 0.)


@pytest.mark.parametrize("seed", range(100))
def test_transformation_loss_gradient(seed):
    with enable_x64():
        rng = onp.random.default_rng(seed)
        m, k = random_shape(rng)
        target = jnp.asarray(dirichlet(rng, m, k))
        directional_check(lambda x: jnp.mean(transformation_loss(x, target)),
                          jnp.asarray(dirichlet(rng, m, k)), rng)


@pytest.mark.parametrize("seed", range(100))
def test_separability_loss_gradient(seed):
    with enable_x64():
        rng = onp.random.default_rng(1000 + seed)
        m, k = random_shape(rng)
        r = jnp.asarray(rng.integers(0, 2, size=m).astype(onp.float64))
        l_j = jnp.asarray(dirichlet(rng, m, k))
        directional_check(lambda x: jnp.sum(separability_loss(r, x, l_j)),
                          jnp.asarray(dirichlet(rng, m, k)), rng)


@pytest.mark.parametrize("seed", range(100))
def test_entropy_loss_gradient(seed):
    with enable_x64():
        rng = onp.random.default_rng(2000 + seed)
        m, k = random_shape(rng)
        directional_check(entropy_loss, jnp.asarray(dirichlet(rng, m, k)), rng)


@pytest.mark.parametrize("seed", range(100))
def test_attention_loss_gradient(seed):
    with enable_x64():
        rng = onp.random.default_rng(3000 + seed)
        m, k = random_shape(rng)
        target = jnp.asarray(dirichlet(rng, m, k))
        directional_check(lambda x: jnp.mean(attention_loss(x, target)),
                          jnp.asarray(dirichlet(rng, m, k)), rng)


def test_separability_symmetry_and_scale():
    rng = onp.random.default_rng(0)
    a, b = jnp.asarray(dirichlet(rng, 5, 3)), jnp.asarray(dirichlet(rng, 5, 3))
    r = jnp.asarray([1., 0., 1., 0., 1.])
    assert_allclose(separability_loss(r, a, b), separability_loss(r, b, a), rtol=1e-6)
    assert_allclose(separability_loss(r, 3. * a, b), separability_loss(r, a, b), rtol=1e-5)


def test_separability_zero_norm():
    with pytest.raises(ValueError):
        separability_loss(1., jnp.zeros(3), jnp.ones(3))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        transformation_loss(jnp.ones(3) / 3, jnp.ones(4) / 4)
    with pytest.raises(ValueError):
        attention_loss(jnp.ones(3) / 3, jnp.ones(2) / 2)


def test_entropy_loss_permutation_invariance():
    rng = onp.random.default_rng(1)
    l = dirichlet(rng, 7, 4)
    value = entropy_loss(jnp.asarray(l))
    assert_allclose(entropy_loss(jnp.asarray(l[rng.permutation(7)])), value, rtol=1e-6)
    assert_allclose(entropy_loss(jnp.asarray(l[:, rng.permutation(4)])), value, rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_entropy_loss_lower_bound(seed):
    rng = onp.random.default_rng(seed)
    assert entropy_loss(jnp.asarray(dirichlet(rng, 10, 6))) >= -onp.log(6) - 1e-6


def test_pairwise_separability_matches_pairs():
    rng = onp.random.default_rng(2)
    l = jnp.asarray(dirichlet(rng, 4, 3))
    assignments = jnp.asarray([0, 1, 0, 2])
    relations = RelationMatrix(assignments).matrix
    expected = onp.mean([separability_loss(relations[i, j], l[i], l[j])
                         for i in range(4) for j in range(4)])
    assert_allclose(pairwise_separability(relations, l), expected, rtol=1e-5)


@pytest.mark.parametrize("k", [2, 3, 10])
def test_total_loss_uniform_entropy_only(k):
    m = 4
    uniform = onp.full((m, k), 1. / k)
    outputs = make_outputs(uniform, uniform)
    targets = make_targets(uniform, uniform, onp.zeros(m, dtype=int), onp.arange(m))
    weights = LossWeights(transformation=0., attention=0., entropy=3., separability=0.)
    breakdown = total_loss(outputs, targets, weights)
    assert_allclose(breakdown.total, 3. * 2. * -onp.log(k), rtol=1e-5)
    assert_allclose(breakdown.l_e, 2. * -onp.log(k), rtol=1e-5)
    assert_allclose(breakdown.l_r, 0., atol=1e-5)
    assert_allclose(breakdown.l_t, -1. / k, rtol=1e-5)


def test_total_loss_recombination():
    rng = onp.random.default_rng(3)
    l, l_a = dirichlet(rng, 6, 3), dirichlet(rng, 6, 3)
    outputs = make_outputs(l, l_a)
    targets = make_targets(dirichlet(rng, 6, 3), dirichlet(rng, 6, 3),
                           onp.array([0, 1, 2, 0, 1, 2]), onp.arange(6))
    weights = LossWeights()
    b = total_loss(outputs, targets, weights, batch_indices=onp.arange(6))
    expected = (weights.separability * b.l_r + weights.transformation * b.l_t
                + weights.attention * b.l_a + weights.entropy * b.l_e)
    assert_allclose(b.total, expected, rtol=1e-6)
    assert set(b.to_dict()) == {"l_r", "l_t", "l_a", "l_e", "total"}
    assert onp.isfinite(b.total)


def test_total_loss_misaligned():
    uniform = onp.full((3, 2), .5)
    outputs = make_outputs(uniform, uniform)
    targets = make_targets(uniform, uniform, onp.zeros(3, dtype=int), onp.array([4, 5, 6]))
    with pytest.raises(ValueError):
        total_loss(outputs, targets, LossWeights(), batch_indices=onp.array([4, 6, 5]))
    with pytest.raises(ValueError):
        total_loss(make_outputs(uniform[:2], uniform[:2]), targets, LossWeights())


def test_loss_weights_validate():
    LossWeights().validate()
    with pytest.raises(ValueError):
        LossWeights(entropy=-1.).validate()
    with pytest.raises(ValueError):
        LossWeights(attention=float("nan")).validate()
