import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fsmlp.autodiff import DimensionError, Node, gradcheck, sum_
from fsmlp.layers import (FTMBlock, Linear, RevIN, SCWMBlock, SimplexLinear, in_simplex,
                          revin_denormalize, revin_normalize, simplex_normalize,
                          simplex_transform, simplex_weights)

TRANSFORMS = ["abs", "log", "square"]


def weighted_sum(node, seed=11):
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=node.shape)
    return sum_(node * w)


def randomize(layer, seed):
    rng = np.random.default_rng(seed)
    for p in layer.parameters():
        p.value = rng.uniform(-1.0, 1.0, size=p.shape)


class TestTransform:
    def test_abs(self):
        np.testing.assert_array_equal(simplex_transform([1.0, -1.0, 2.0], "abs"), [1, 1, 2])

    def test_log(self):
        np.testing.assert_allclose(simplex_transform([math.e - 1, 0.0], "log"), [1.0, 0.0],
                                   atol=1e-15)

    def test_square(self):
        np.testing.assert_array_equal(simplex_transform([1.0, 2.0], "square"), [1, 4])

    def test_alias(self):
        np.testing.assert_array_equal(simplex_transform([-2.0], "logoffset"),
                                      simplex_transform([-2.0], "log"))

    def test_unknown(self):
        with pytest.raises(ValueError):
            simplex_transform([1.0], "exp")


class TestNormalize:
    def test_example(self):
        np.testing.assert_allclose(simplex_normalize(np.array([1.0, 1.0, 2.0])),
                                   [0.25, 0.25, 0.5])

    def test_degenerate_is_uniform_and_counted(self):
        out, n_deg = simplex_normalize(np.zeros(3), return_degenerate=True)
        np.testing.assert_allclose(out, np.full(3, 1 / 3))
        assert n_deg == 1

    def test_degenerate_column_in_matrix(self):
        t = np.array([[0.0, 1.0], [0.0, 3.0]])
        out, n_deg = simplex_normalize(t, axis=0, return_degenerate=True)
        np.testing.assert_allclose(out, [[0.5, 0.25], [0.5, 0.75]])
        assert n_deg == 1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            simplex_normalize(np.array([1.0, -1.0]))

    @pytest.mark.parametrize("kind", TRANSFORMS)
    @pytest.mark.parametrize("axis", [0, 1])
    def test_10k_random_matrices(self, kind, axis):
        rng = np.random.default_rng(100 + axis)
        for _ in range(10_000):
            shape = tuple(rng.integers(1, 6, size=2))
            scale = 10.0 ** rng.uniform(-3, 3)
            w = simplex_weights(rng.normal(scale=scale, size=shape), kind, axis)
            assert w.min() >= 0.0
            assert np.max(np.abs(w.sum(axis=axis) - 1.0)) <= 1e-9

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)),
           st.sampled_from(TRANSFORMS))
    def test_property_lands_in_simplex(self, w, kind):
        assert in_simplex(simplex_weights(w, kind, 0), axis=0)


class TestSimplexLinear:
    def test_abs_identity(self):
        layer = SimplexLinear(2, 2, transform="abs")
        layer.raw_weight.value = np.eye(2)
        x = np.random.default_rng(0).normal(size=(3, 5, 2))
        np.testing.assert_allclose(layer(x).value, x, atol=1e-15)

    def test_weights_recomputed_each_call(self):
        layer = SimplexLinear(3, 2, rng=np.random.default_rng(0))
        before = layer.effective_weights()
        layer.raw_weight.value = layer.raw_weight.value * 5.0 + 1.0
        after = layer.effective_weights()
        assert not np.allclose(before, after)
        assert in_simplex(after, axis=0)

    def test_equal_inputs_stay_in_range(self):
        layer = SimplexLinear(4, 3, rng=np.random.default_rng(1))
        v = np.array([-1.0, 0.5, 2.0, 3.0])
        x = np.tile(v, (2, 6, 1))
        out = layer(x).value
        assert out.min() >= v.min() - 1e-12 and out.max() <= v.max() + 1e-12

    @pytest.mark.parametrize("kind", TRANSFORMS)
    def test_boundedness(self, kind):
        rng = np.random.default_rng(2)
        layer = SimplexLinear(5, 4, transform=kind, rng=rng)
        randomize(layer, 3)
        layer.bias.value[:] = 0.0
        x = rng.normal(scale=3.0, size=(4, 7, 5))
        out = layer(x).value
        lo = x.min(axis=-1, keepdims=True)
        hi = x.max(axis=-1, keepdims=True)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_gradcheck_log_2x3(self):
        layer = SimplexLinear(2, 3, transform="log", rng=np.random.default_rng(4))
        randomize(layer, 5)
        x = np.random.default_rng(6).normal(size=(2, 4, 2))
        gradcheck(lambda: weighted_sum(layer(x)), layer.parameters())

    @pytest.mark.parametrize("kind", TRANSFORMS)
    @pytest.mark.parametrize("axis", ["input", "output"])
    def test_gradcheck_all_variants(self, kind, axis):
        layer = SimplexLinear(3, 3, transform=kind, axis=axis, rng=np.random.default_rng(7))
        randomize(layer, 8)
        x = np.random.default_rng(9).normal(size=(2, 2, 3))
        gradcheck(lambda: weighted_sum(layer(x)), layer.parameters())

    def test_output_axis(self):
        layer = SimplexLinear(3, 4, axis="output", rng=np.random.default_rng(0))
        assert in_simplex(layer.effective_weights(), axis=1)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            SimplexLinear(3, 3)(np.zeros((1, 2, 4)))

    def test_init_near_uniform(self):
        w = SimplexLinear(8, 8, rng=np.random.default_rng(0)).effective_weights()
        assert np.all(w > 0) and np.all(w < 0.5)

    def test_grad_damping_log(self):
        grid = np.linspace(0.0, 50.0, 501)
        for sign in (1.0, -1.0):
            x = Node(sign * grid, requires_grad=True)
            sum_(simplex_transform(x, "log")).backward()
            np.testing.assert_allclose(x.grad[1:], sign / (grid[1:] + 1.0), rtol=1e-12)
            assert np.all(np.diff(np.abs(x.grad[1:])) < 0)


class TestLinear:
    def test_forward(self):
        layer = Linear(2, 1)
        layer.weight.value = np.array([[1.0], [2.0]])
        layer.bias.value = np.array([0.5])
        np.testing.assert_allclose(layer(np.array([[[3.0, 4.0]]])).value, [[[11.5]]])

    def test_gradcheck(self):
        layer = Linear(4, 3, rng=np.random.default_rng(0))
        randomize(layer, 1)
        x = np.random.default_rng(2).normal(size=(2, 3, 4))
        gradcheck(lambda: weighted_sum(layer(x)), layer.parameters())


class TestRevIN:
    def test_constant_channel(self):
        x = np.full((1, 1, 4), 2.0)
        xn, state = revin_normalize(x)
        np.testing.assert_allclose(xn, 0.0, atol=1e-12)
        np.testing.assert_allclose(revin_denormalize(np.zeros((1, 1, 3)), state), 2.0)
        assert np.all(state.std >= state.eps)

    def test_moments(self):
        x = np.random.default_rng(0).normal(3.0, 5.0, size=(4, 3, 20))
        xn, _ = revin_normalize(x)
        np.testing.assert_allclose(xn.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(xn.std(axis=-1), 1.0, atol=1e-6)

    def test_round_trip(self):
        x = np.random.default_rng(1).normal(-2.0, 7.0, size=(3, 2, 16))
        xn, state = revin_normalize(x)
        np.testing.assert_allclose(revin_denormalize(xn, state), x, atol=1e-9)

    def test_needs_two_steps(self):
        with pytest.raises(ValueError):
            revin_normalize(np.zeros((1, 1, 1)))

    def test_affine_round_trip_and_grad(self):
        rev = RevIN(2, affine=True)
        rev.weight.value = np.array([[1.5], [0.7]])
        rev.bias.value = np.array([[0.2], [-0.1]])
        x = np.random.default_rng(2).normal(size=(2, 2, 8))
        z, state = rev.normalize(x)
        np.testing.assert_allclose(rev.denormalize(z, state).value, x, atol=1e-8)
        gradcheck(lambda: weighted_sum(rev.denormalize(rev.normalize(x)[0] * 0.5, state)),
                  rev.parameters())

    def test_no_params_by_default(self):
        assert RevIN(3).parameters() == []


class TestBlocks:
    def test_scwm_residual_identity(self):
        block = SCWMBlock(3, 5, act="relu", rng=np.random.default_rng(0))
        block.mixer.bias.value[:] = -1e6  # relu(mix) == 0 everywhere
        for p in block.temporal.parameters():
            p.value[:] = 0.0
        z = np.random.default_rng(1).normal(size=(2, 3, 5))
        np.testing.assert_allclose(block(z).value, z, atol=1e-12)

    @pytest.mark.parametrize("act", ["gelu", "relu"])
    def test_scwm_single_channel(self, act):
        block = SCWMBlock(1, 4, act=act, rng=np.random.default_rng(2))
        np.testing.assert_array_equal(block.mixer.effective_weights(), [[1.0]])
        for p in block.temporal.parameters():
            p.value[:] = 0.0
        z = np.random.default_rng(3).normal(size=(2, 1, 4))
        expected = z + block._act(Node(z)).value
        np.testing.assert_allclose(block(z).value, expected, atol=1e-12)

    def test_scwm_gradcheck(self):
        block = SCWMBlock(3, 8, rng=np.random.default_rng(4))
        randomize(block, 5)
        z = np.random.default_rng(6).normal(size=(1, 3, 8))
        gradcheck(lambda: weighted_sum(block(z)), block.parameters())

    def test_scwm_shape_mismatch(self):
        with pytest.raises(DimensionError):
            SCWMBlock(3, 8)(np.zeros((1, 4, 8)))

    def test_ftm_zero_is_identity(self):
        block = FTMBlock(6, rng=np.random.default_rng(0))
        for p in block.parameters():
            p.value[:] = 0.0
        z = np.random.default_rng(1).normal(size=(2, 3, 6))
        np.testing.assert_allclose(block(z).value, z, atol=0)

    def test_ftm_gradcheck(self):
        block = FTMBlock(8, rng=np.random.default_rng(2))
        randomize(block, 3)
        z = np.random.default_rng(4).normal(size=(1, 2, 8))
        gradcheck(lambda: weighted_sum(block(z)), block.parameters())

    @pytest.mark.parametrize("width", [1, 3, 17])
    def test_ftm_shape(self, width):
        z = np.zeros((2, 3, width))
        assert FTMBlock(width)(z).shape == (2, 3, width)

    def test_ftm_shape_mismatch(self):
        with pytest.raises(DimensionError):
            FTMBlock(4)(np.zeros((1, 2, 5)))
