"""Shifted-activation semantics: forward rule, both gradients, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngnet.activations import (SELU_ALPHA, SELU_LAMBDA, LeakyReLU,
                               NgActivation, PReLU, ReLU, make_base,
                               ng_backward_input, ng_forward, ng_grad_t,
                               prelu_grad_a, selu_forward, shift_shape)
from ngnet.errors import ContractError


def ng(base, t, **kw):
    return NgActivation(base=base, t=np.asarray(t, dtype=float), **kw)


class TestForward:
    def test_relu_above_shift(self):
        act = ng(ReLU(), [-1.0])
        assert ng_forward(act, np.array([0.5]))[0] == 0.5

    def test_relu_floor(self):
        act = ng(ReLU(), [-1.0])
        assert ng_forward(act, np.array([-2.0]))[0] == -1.0

    def test_lrelu_substitution(self):
        act = ng(LeakyReLU(0.1), [-1.0])
        # 0.1 * (-2 - (-1)) + (-1) = -1.1
        assert np.isclose(ng_forward(act, np.array([-2.0]))[0], -1.1)

    def test_relu_is_max(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(100)
        act = ng(ReLU(), [-0.3])
        np.testing.assert_array_equal(ng_forward(act, x), np.maximum(x, -0.3))

    def test_granularities_agree(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 4, 4))
        y_elem = ng_forward(ng(ReLU(), np.full((3, 4, 4), -0.5),
                               granularity="element"), x)
        y_chan = ng_forward(ng(ReLU(), np.full((3, 1, 1), -0.5),
                               granularity="channel"), x)
        y_layer = ng_forward(ng(ReLU(), [-0.5], granularity="layer"), x)
        np.testing.assert_array_equal(y_elem, y_chan)
        np.testing.assert_array_equal(y_chan, y_layer)

    @pytest.mark.parametrize("base", ["relu", "lrelu", "selu"])
    def test_translation_anchor(self, base):
        # the wrapper is the base translated along y = x: NG_t(x) - t = f(x - t)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(50)
        b = make_base(base)
        act = ng(b, [-0.7])
        np.testing.assert_allclose(ng_forward(act, x) - (-0.7), b.f(x - (-0.7)),
                                   atol=1e-15)

    @pytest.mark.parametrize("base", ["relu", "lrelu", "selu"])
    def test_continuity_at_kink(self, base):
        act = ng(make_base(base), [0.4])
        eps = 1e-8
        lo = ng_forward(act, np.array([0.4 - eps]))[0]
        hi = ng_forward(act, np.array([0.4 + eps]))[0]
        assert abs(hi - lo) < 1e-6


class TestLinearRegion:
    """Above the shift the wrapper is bitwise the identity (the testable
    form of the low-capacity initial regime)."""

    @pytest.mark.parametrize("base", ["relu", "lrelu"])
    def test_identity_forward(self, base):
        rng = np.random.default_rng(3)
        x = np.abs(rng.standard_normal(100)) + 0.1
        act = ng(make_base(base), [0.0])
        assert np.array_equal(ng_forward(act, x), x)

    def test_identity_backward(self):
        rng = np.random.default_rng(4)
        x = np.abs(rng.standard_normal(40)) + 0.1
        g = rng.standard_normal(40)
        act = ng(ReLU(), [0.0])
        assert np.array_equal(ng_backward_input(act, x, g), g)

    def test_zero_t_gradient(self):
        rng = np.random.default_rng(5)
        x = np.abs(rng.standard_normal(40)) + 0.1
        act = ng(ReLU(), [0.0], granularity="layer")
        assert ng_grad_t(act, x, np.ones(40), batched=False)[0] == 0.0


class TestBackwardInput:
    def test_active_region(self):
        act = ng(ReLU(), [0.0])
        assert ng_backward_input(act, np.array([2.0]), np.array([1.0]))[0] == 1.0

    def test_inactive_region(self):
        act = ng(ReLU(), [0.0])
        assert ng_backward_input(act, np.array([-1.0]), np.array([1.0]))[0] == 0.0

    def test_kink_uses_right_derivative(self):
        act = ng(ReLU(), [0.3])
        assert ng_backward_input(act, np.array([0.3]), np.array([1.0]))[0] == 1.0

    @pytest.mark.parametrize("base", ["relu", "lrelu", "selu"])
    def test_finite_differences(self, base):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(60)
        x = x[np.abs(x - 0.2) > 1e-3]  # kink-free sampling
        act = ng(make_base(base), [0.2], granularity="layer")
        proj = rng.standard_normal(x.size)
        g = ng_backward_input(act, x, proj)
        h = 1e-5
        for j in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = float(((ng_forward(act, xp) - ng_forward(act, xm)) * proj).sum()) / (2 * h)
            assert abs(fd - g[j]) / max(abs(fd), abs(g[j]), 1e-8) < 1e-4


class TestGradT:
    def test_active_branch_factor_zero(self):
        act = ng(ReLU(), [0.0], granularity="layer")
        assert ng_grad_t(act, np.array([2.0]), np.array([1.0]), batched=False)[0] == 0.0

    def test_inactive_branch_factor_one(self):
        act = ng(ReLU(), [0.0], granularity="layer")
        assert ng_grad_t(act, np.array([-1.0]), np.array([1.0]), batched=False)[0] == 1.0

    def test_kink_belongs_to_t(self):
        # x == t sits on the inactive branch of the t-gradient case split
        act = ng(ReLU(), [0.5], granularity="layer")
        assert ng_grad_t(act, np.array([0.5]), np.array([1.0]), batched=False)[0] == 0.0
        # ... while the input gradient uses the active side there; the two
        # conventions are kept as-is (they disagree only on a null set)

    def test_lrelu_general_factor(self):
        act = ng(LeakyReLU(0.1), [0.0], granularity="layer")
        g = ng_grad_t(act, np.array([-1.0]), np.array([1.0]), batched=False)
        assert np.isclose(g[0], 0.9)

    def test_nontrainable_returns_zero(self):
        act = ng(ReLU(), [-1.0], trainable=False)
        g = ng_grad_t(act, np.array([-5.0]), np.array([1.0]), batched=False)
        assert not g.any()

    @pytest.mark.parametrize("base", ["relu", "lrelu", "selu"])
    def test_finite_differences_on_t(self, base):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(60)
        t0 = 0.15
        x = x[np.abs(x - t0) > 1e-3]
        proj = rng.standard_normal(x.size)
        h = 1e-5

        def loss(tv):
            a = ng(make_base(base), [tv], granularity="layer")
            return float((ng_forward(a, x) * proj).sum())

        act = ng(make_base(base), [t0], granularity="layer")
        g = ng_grad_t(act, x, proj, batched=False)
        fd = (loss(t0 + h) - loss(t0 - h)) / (2 * h)
        assert abs(fd - g[0]) / max(abs(fd), abs(g[0]), 1e-8) < 1e-4

    def test_channel_reduction(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 2, 3, 3))  # batch of 4, 2 channels
        t = np.full((2, 1, 1), 0.1)
        act = ng(ReLU(), t, granularity="channel")
        g = ng_grad_t(act, x, np.ones_like(x))
        # each channel's entry equals the count of inactive elements
        expect = ((x - 0.1) < 0).sum(axis=(0, 2, 3)).astype(float)
        np.testing.assert_allclose(g.ravel(), expect)

    def test_kink_belongs_to_t_exactly(self):
        act = ng(ReLU(), [0.5], granularity="layer")
        # at x == t: input grad passes (right derivative), t factor is 0
        assert ng_backward_input(act, np.array([0.5]), np.array([1.0]))[0] == 1.0


class TestPReLU:
    def test_positive_inputs_zero_slope_grad(self):
        act = ng(PReLU(), [0.0], granularity="layer")
        a = np.array([0.25])
        g = prelu_grad_a(act, np.array([1.0, 2.0]), np.ones(2), a, batched=False)
        assert g[0] == 0.0

    def test_single_negative_unit(self):
        act = ng(PReLU(), [0.0], granularity="layer")
        a = np.array([0.25])
        u, gout = -1.5, 0.7
        g = prelu_grad_a(act, np.array([u]), np.array([gout]), a, batched=False)
        assert np.isclose(g[0], gout * u)

    def test_slope_applies_to_shifted_input(self):
        act = ng(PReLU(), [-1.0], granularity="layer")
        a = np.array([0.25])
        # x = -2, t = -1 -> u = -1: slope sees u, not x
        g = prelu_grad_a(act, np.array([-2.0]), np.array([1.0]), a, batched=False)
        assert np.isclose(g[0], -1.0)

    def test_finite_differences(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(50)
        proj = rng.standard_normal(50)
        a0 = 0.25
        act = ng(PReLU(), [0.1], granularity="layer")
        h = 1e-5

        def loss(av):
            return float((ng_forward(act, x, np.array([av])) * proj).sum())

        g = prelu_grad_a(act, x, proj, np.array([a0]), batched=False)
        fd = (loss(a0 + h) - loss(a0 - h)) / (2 * h)
        assert abs(fd - g[0]) / max(abs(fd), abs(g[0]), 1e-8) < 1e-4

    def test_non_prelu_base_rejected(self):
        act = ng(ReLU(), [0.0])
        with pytest.raises(ContractError):
            prelu_grad_a(act, np.zeros(3), np.zeros(3), np.array([0.25]))


class TestSELU:
    def test_zero(self):
        assert selu_forward(np.array([0.0]))[0] == 0.0

    def test_positive_branch(self):
        assert np.isclose(selu_forward(np.array([1.0]))[0], SELU_LAMBDA)

    def test_saturation(self):
        v = selu_forward(np.array([-20.0]))[0]
        assert np.isclose(v, -SELU_LAMBDA * SELU_ALPHA, rtol=1e-6)


class TestShiftShape:
    def test_conv_shapes(self):
        assert shift_shape("element", (4, 8, 8)) == (4, 8, 8)
        assert shift_shape("channel", (4, 8, 8)) == (4, 1, 1)
        assert shift_shape("layer", (4, 8, 8)) == (1,)

    def test_dense_shapes(self):
        assert shift_shape("element", (16,)) == (16,)
        assert shift_shape("channel", (16,)) == (16,)
        assert shift_shape("layer", (16,)) == (1,)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2))
def test_floor_property_everywhere(x, t):
    """ReLU wrapper == max(x, t) for all x, t."""
    act = ng(ReLU(), [t], granularity="layer")
    assert ng_forward(act, np.array([x]))[0] == max(x, t)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-2, 2))
def test_linear_identity_property(xs, t):
    """If every x > t, forward is bitwise identity for the ReLU base."""
    x = np.asarray(xs)
    x = x[x > t]
    if x.size == 0:
        return
    act = ng(ReLU(), [t], granularity="layer")
    assert np.array_equal(ng_forward(act, x), x)
