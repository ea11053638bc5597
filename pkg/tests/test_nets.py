import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gauge_lab.errors import GridMismatch, NonPositiveAlpha, ShapeError, StructureError
from gauge_lab.gauge import apply_linear_gauge
from gauge_lab.nets import (
    Conv,
    ConvNet,
    DiscreteGauge,
    FeedforwardLinearNet,
    Pool,
    ReluNet,
    apply_discrete_gauge,
    closed_form_output,
    commuting_diagram_check,
    discretize,
    forward_conv,
    forward_linear,
    forward_relu,
    lift_gauge,
    relu,
    rescale_conv,
    rescale_relu,
)
from gauge_lab.ode import LinearNodeParams, TimeGrid, TimeSeriesField, integrate_linear
from gauge_lab.samples import smooth_params


def random_linear_net(rng, depth, dim):
    return FeedforwardLinearNet(
        np.eye(dim) + 0.5 * rng.standard_normal((depth, dim, dim)) / np.sqrt(dim),
        rng.standard_normal((depth, dim)),
    )


def rel_dev(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), 1e-300)


class TestLinearNet:
    def test_identity_layers(self):
        net = FeedforwardLinearNet(np.broadcast_to(np.eye(3), (4, 3, 3)), np.zeros((4, 3)))
        assert np.array_equal(forward_linear(net, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_hand_example(self):
        net = FeedforwardLinearNet([[[2.0]], [[3.0]]], [[1.0], [0.0]])
        assert forward_linear(net, [1.0])[0] == 9.0

    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31))
    def test_closed_form_matches_recursion(self, depth, dim, seed):
        rng = np.random.default_rng(seed)
        net = random_linear_net(rng, depth, dim)
        x0 = rng.standard_normal(dim)
        assert np.abs(closed_form_output(net, x0) - forward_linear(net, x0)).max() <= 1e-10

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            FeedforwardLinearNet(np.zeros((2, 2, 3)), np.zeros((2, 2)))


class TestDiscreteGauge:
    def test_identity_gauge_keeps_net(self, rng):
        net = random_linear_net(rng, 3, 2)
        out = apply_discrete_gauge(net, DiscreteGauge.identity(3, 2))
        assert np.array_equal(out.weights, net.weights) and np.array_equal(out.biases, net.biases)

    def test_hand_example(self):
        net = FeedforwardLinearNet([[[2.0]], [[3.0]]], [[1.0], [0.0]])
        g = DiscreteGauge([[[1.0]], [[2.0]], [[1.0]]], [[0.0], [0.0], [0.0]])
        out = apply_discrete_gauge(net, g)
        assert np.allclose(out.weights.ravel(), [1.0, 6.0])
        assert np.allclose(out.biases.ravel(), [0.5, 0.0])
        assert forward_linear(out, [1.0])[0] == 9.0

    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
    def test_forward_is_invariant(self, depth, dim, seed):
        rng = np.random.default_rng(seed)
        net = random_linear_net(rng, depth, dim)
        new = apply_discrete_gauge(net, DiscreteGauge.random(rng, depth, dim))
        for x in rng.standard_normal((10, dim)):
            assert np.abs(forward_linear(net, x) - forward_linear(new, x)).max() <= 1e-10

    def test_ends_must_be_exact(self):
        with pytest.raises(ValueError):
            DiscreteGauge([[[1.0]], [[2.0]], [[1.0 + 1e-15]]], [[0.0], [0.0], [0.0]])
        with pytest.raises(ValueError):
            DiscreteGauge([[[1.0]], [[2.0]], [[1.0]]], [[0.0], [0.0], [0.1]])

    def test_depth_mismatch(self, rng):
        with pytest.raises(ShapeError):
            apply_discrete_gauge(random_linear_net(rng, 3, 2), DiscreteGauge.identity(2, 2))


class TestDiscretize:
    def test_zero_params(self):
        net = discretize(LinearNodeParams.zeros(TimeGrid(1.0, 64), 2), 4)
        assert np.array_equal(net.weights, np.broadcast_to(np.eye(2), (4, 2, 2)))
        assert np.all(net.biases == 0)

    def test_uniform_drift(self):
        g = TimeGrid(1.0, 64)
        p = LinearNodeParams(TimeSeriesField.zeros(g, (1, 1)), TimeSeriesField.constant(g, [1.0]))
        net = discretize(p, 4)
        assert np.all(net.weights == 1.0)
        assert np.abs(net.biases - 0.25).max() <= 1e-12

    def test_forward_matches_integration(self, rng):
        p = smooth_params(rng, 2).on(TimeGrid(1.0, 1024))
        net = discretize(p, 8)
        for x0 in rng.standard_normal((5, 2)):
            assert np.abs(forward_linear(net, x0) - integrate_linear(p, x0).final).max() <= 1e-6

    def test_layers_must_divide_grid(self, rng):
        with pytest.raises(GridMismatch):
            discretize(smooth_params(rng, 2).on(TimeGrid(1.0, 10)), 4)


class TestLiftGauge:
    def test_identity(self):
        g = lift_gauge(DiscreteGauge.identity(4, 2), TimeGrid(1.0, 64))
        assert np.array_equal(g.G.values, np.broadcast_to(np.eye(2), (65, 2, 2)))
        assert np.all(g.c.values == 0) and np.all(g.G_dot_values() == 0)

    def test_two_layer_example(self):
        dg = DiscreteGauge([np.eye(2), np.diag([2.0, 1.0]), np.eye(2)], np.zeros((3, 2)))
        g = lift_gauge(dg, TimeGrid(1.0, 64))
        assert np.array_equal(g.G(0.5), np.diag([2.0, 1.0]))
        assert np.array_equal(g.G(0.0), np.eye(2)) and np.array_equal(g.G(1.0), np.eye(2))

    @given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
    def test_knot_interpolation_is_exact(self, depth, dim, seed):
        rng = np.random.default_rng(seed)
        dg = DiscreteGauge.random(rng, depth, dim)
        g = lift_gauge(dg, TimeGrid(1.0, 16 * depth))
        knots = g.G.values[::16]
        assert np.array_equal(knots, dg.G) and np.array_equal(g.c.values[::16], dg.c)

    def test_derivative_matches_finite_difference(self, rng):
        dg = DiscreteGauge.random(rng, 3, 2)
        g = lift_gauge(dg, TimeGrid(1.0, 3 * 512))
        interior = slice(1, -1)
        fd = (g.G.values[2:] - g.G.values[:-2]) / (2 * g.grid.step)
        err = np.abs(fd - g.G_dot.values[interior]).max()
        assert err <= 1e-3 * np.abs(g.G_dot.values).max()


class TestCommutingDiagram:
    def test_identity_gauge(self, rng):
        p = smooth_params(rng, 2).on(TimeGrid(1.0, 256))
        r = commuting_diagram_check(p, DiscreteGauge.identity(4, 2))
        assert r.max_layer_dev <= 1e-12 and r.io_dev <= 1e-12

    def test_pure_gauge_gives_ratios(self, rng):
        dg = DiscreteGauge.random(rng, 4, 2)
        p = LinearNodeParams.zeros(TimeGrid(1.0, 1024), 2)
        r = commuting_diagram_check(p, dg)
        assert r.max_weight_dev <= 1e-8
        expected = np.linalg.solve(dg.G[1:], dg.G[:-1])
        lifted = discretize(apply_linear_gauge(p, lift_gauge(dg, p.grid)), 4)
        assert np.abs(lifted.weights - expected).max() <= 1e-8

    def test_refinement(self, rng):
        sp = smooth_params(rng, 2)
        dg = DiscreteGauge.random(rng, 4, 2, amplitude=0.15, shift=0.15)
        coarse = commuting_diagram_check(sp.on(TimeGrid(1.0, 1024)), dg)
        fine = commuting_diagram_check(sp.on(TimeGrid(1.0, 2048)), dg)
        assert coarse.max_layer_dev <= 1e-4
        assert coarse.max_layer_dev / fine.max_layer_dev >= 3.0
        assert commuting_diagram_check(sp.on(TimeGrid(1.0, 4096)), dg).io_dev <= 1e-6


class TestRelu:
    def test_identity_on_positive(self):
        net = ReluNet(np.broadcast_to(np.eye(3), (2, 3, 3)), np.zeros((2, 3)))
        assert np.array_equal(forward_relu(net, [0.0, 1.5, 2.0]), [0.0, 1.5, 2.0])

    def test_hand_example(self):
        net = ReluNet([[[1.0]], [[1.0]]], [[1.0], [0.0]])
        assert forward_relu(net, [1.0])[0] == 2.0

    @given(st.integers(0, 2**31))
    def test_output_is_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        net = ReluNet.random(rng, 3, 4)
        assert np.all(forward_relu(net, 10 * rng.standard_normal(4)) >= 0)

    @given(st.floats(-1e6, 1e6), st.integers(-20, 20))
    def test_homogeneity_exact_for_powers_of_two(self, x, k):
        alpha = 2.0 ** k
        assert relu(alpha * x) == alpha * relu(x)

    def test_rescale_identity(self, rng):
        net = ReluNet.random(rng, 4, 3)
        out = rescale_relu(net, np.ones((3, 3)))
        assert np.array_equal(out.weights, net.weights) and np.array_equal(out.biases, net.biases)

    def test_rescale_hand_example(self):
        net = ReluNet([[[1.0]], [[1.0]]], [[1.0], [0.0]])
        out = rescale_relu(net, [[3.0]])
        assert np.allclose(out.weights.ravel(), [3.0, 1 / 3]) and np.allclose(out.biases.ravel(), [3.0, 0.0])
        assert forward_relu(out, [1.0])[0] == pytest.approx(2.0, rel=1e-15)

    @given(st.integers(0, 2**31))
    def test_rescale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        net = ReluNet.random(rng, 4, 3)
        alphas = 10 ** rng.uniform(-1, 1, (3, 3))
        out = rescale_relu(net, alphas)
        for x in rng.standard_normal((20, 3)):
            ref = forward_relu(net, x)
            assert np.abs(forward_relu(out, x) - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)

    @given(st.integers(0, 2**31))
    def test_power_of_two_rescale_is_bit_exact(self, seed):
        rng = np.random.default_rng(seed)
        net = ReluNet.random(rng, 4, 3)
        out = rescale_relu(net, 2.0 ** rng.integers(-6, 7, (3, 3)))
        for x in rng.standard_normal((20, 3)):
            assert np.array_equal(forward_relu(out, x), forward_relu(net, x))

    def test_non_positive_alpha(self, rng):
        with pytest.raises(NonPositiveAlpha):
            rescale_relu(ReluNet.random(rng, 3, 2), [[1.0, 0.0], [1.0, 1.0]])

    def test_uncompensated_rescale_changes_outputs(self, rng):
        net = ReluNet.random(rng, 4, 3)
        W = net.weights.copy()
        W[1] *= 3.0
        broken = ReluNet(W, net.biases)
        X = rng.standard_normal((20, 3))
        assert max(np.abs(forward_relu(broken, x) - forward_relu(net, x)).max() for x in X) > 1e-3


class TestConv:
    def test_unit_filter_is_identity_on_positive_images(self, rng):
        img = rng.uniform(0, 1, (5, 6))
        assert np.array_equal(forward_conv(ConvNet([Conv([[1.0]])]), img), img)

    def test_pooling_hand_examples(self):
        img = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert forward_conv(ConvNet([Pool(1)]), img)[0, 0] == 2.5
        assert forward_conv(ConvNet([Pool(np.inf)]), img)[0, 0] == 4.0
        assert forward_conv(ConvNet([Pool(2)]), img)[0, 0] == pytest.approx(np.sqrt(7.5))

    def test_valid_convolution_against_loops(self, rng):
        img, h = rng.standard_normal((7, 6)), rng.standard_normal((3, 3))
        out = forward_conv(ConvNet([Conv(h)]), img)
        ref = np.zeros((5, 4))
        for i in range(5):
            for j in range(4):
                ref[i, j] = max(0.0, sum(img[i + p, j + q] * h[p, q] for p in range(3) for q in range(3)))
        assert np.allclose(out, ref, rtol=1e-14, atol=1e-14)

    def test_rescale_identity(self, rng):
        net = ConvNet([Conv(rng.standard_normal((2, 2))), Pool(2), Conv(rng.standard_normal((2, 2)))])
        out = rescale_conv(net, [1.0])
        assert all(np.array_equal(a.filter, b.filter) for a, b in zip(out.layers[::2], net.layers[::2]))

    def test_rescale_hand_example(self):
        net = ConvNet([Conv([[2.0]]), Conv([[3.0]])])
        out = rescale_conv(net, 5.0)
        assert out.layers[0].filter[0, 0] == 10.0 and out.layers[1].filter[0, 0] == pytest.approx(0.6)
        assert forward_conv(out, [[1.0]])[0, 0] == pytest.approx(6.0, rel=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_conv_pool_conv_rescale(self, seed):
        rng = np.random.default_rng(seed)
        net = ConvNet([Conv(rng.standard_normal((3, 3)) + 0.3), Pool(2), Conv(np.abs(rng.standard_normal((2, 2))) + 0.1)])
        img = rng.uniform(0, 1, (10, 10))
        ref = forward_conv(net, img)
        assert np.abs(ref).max() > 0
        assert rel_dev(ref, forward_conv(rescale_conv(net, 2.0), img)) <= 1e-12

    def test_structure_errors(self, rng):
        net = ConvNet([Conv([[1.0]]), Conv([[1.0]])])
        with pytest.raises(StructureError):
            rescale_conv(net, [2.0, 2.0])
        with pytest.raises(StructureError):
            rescale_conv(net, [2.0, 2.0, 2.0])
        with pytest.raises(NonPositiveAlpha):
            rescale_conv(net, [-1.0])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            forward_conv(ConvNet([Conv(np.ones((4, 4)))]), np.ones((3, 3)))
        with pytest.raises(ShapeError):
            forward_conv(ConvNet([Pool(1)]), np.ones((3, 3)))
