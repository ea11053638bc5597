import mpmath
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from gauge_lab.errors import OutOfDomain
from gauge_lab.gauge import GaugeTransformLinear
from gauge_lab.ode import LinearNodeParams, TimeGrid, TimeSeriesField, integrate_linear
from gauge_lab.samples import smooth_gauge, smooth_params
from gauge_lab.wilson import (
    expm,
    linear_solution,
    wilson_gauge_covariance,
    wilson_inverse_identity,
    wilson_line,
)


def random_field(rng, dim, n_steps, scale=0.7):
    return TimeSeriesField(TimeGrid(1.0, n_steps), scale * rng.standard_normal((n_steps + 1, dim, dim)))


def ordered_exponential_oracle(w: TimeSeriesField):
    """Adaptive solve of dW/dt = w(t) W, restarted at every kink of w."""
    d = w.shape[0]
    W = np.eye(d)
    for k in range(w.grid.n_steps):
        t0, t1 = w.grid.times[k], w.grid.times[k + 1]
        w0, w1 = w.values[k], w.values[k + 1]
        rhs = lambda t, y: (((t1 - t) * w0 + (t - t0) * w1) / (t1 - t0) @ y.reshape(d, d)).ravel()
        W = solve_ivp(rhs, (t0, t1), W.ravel(), method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1].reshape(d, d)
    return W


class TestExpm:
    @given(st.integers(1, 4), st.floats(1e-3, 30.0), st.integers(0, 2**31))
    def test_matches_high_precision(self, d, scale, seed):
        # scipy's expm drifts to ~1e-12 on non-normal inputs of norm ~20, so compare at 40 digits
        A = scale * np.random.default_rng(seed).standard_normal((d, d)) / d
        with mpmath.workdps(40):
            ref = np.array(mpmath.expm(mpmath.matrix(A.tolist())).tolist(), dtype=float)
        assert np.linalg.norm(expm(A) - ref) <= 1e-12 * max(1.0, np.linalg.norm(ref))

    def test_zero_and_batch(self, rng):
        assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
        A = rng.standard_normal((5, 2, 2))
        assert np.allclose(expm(A), [scipy.linalg.expm(a) for a in A], rtol=1e-13, atol=0)


class TestWilsonLine:
    def test_zero_field_is_identity(self):
        w = TimeSeriesField.zeros(TimeGrid(1.0, 16), (3, 3))
        for t1, t2 in [(1.0, 0.0), (0.2, 0.9), (0.5, 0.5), (0.33, 0.1)]:
            assert np.array_equal(wilson_line(w, t1, t2).matrix, np.eye(3))

    def test_constant_scalar(self):
        w = TimeSeriesField.constant(TimeGrid(1.0, 32), [[1.0]])
        assert abs(wilson_line(w, 1.0, 0.0).matrix[0, 0] - np.e) <= 1e-10

    def test_orientation(self):
        w = TimeSeriesField.zeros(TimeGrid(1.0, 4), (1, 1))
        assert wilson_line(w, 1.0, 0.0).orientation == "forward"
        assert wilson_line(w, 0.0, 1.0).orientation == "reverse"

    def test_non_commuting_against_fine_oracle(self, rng):
        w = random_field(rng, 2, 8)
        W = wilson_line(w, 1.0, 0.0, substeps=2048).matrix
        ref = ordered_exponential_oracle(w)
        assert np.linalg.norm(W - ref) / np.linalg.norm(ref) <= 1e-8

    def test_second_order_in_step(self, rng):
        w = random_field(rng, 2, 4)
        ref = ordered_exponential_oracle(w)
        err = [np.linalg.norm(wilson_line(w, 1.0, 0.0, substeps=s).matrix - ref) for s in (16, 32, 64)]
        for coarse, fine in zip(err, err[1:]):
            assert 3.5 <= coarse / fine <= 4.5

    def test_endpoint_outside_grid(self):
        w = TimeSeriesField.zeros(TimeGrid(1.0, 4), (1, 1))
        with pytest.raises(OutOfDomain):
            wilson_line(w, 1.5, 0.0)

    @given(st.integers(1, 4), st.integers(0, 2**31), st.data())
    def test_composition_at_nodes(self, d, seed, data):
        w = random_field(np.random.default_rng(seed), d, 512)
        k1, k2, k3 = sorted(data.draw(st.lists(st.integers(0, 512), min_size=3, max_size=3)))
        t1, t2, t3 = (k / 512 for k in (k1, k2, k3))
        lhs = wilson_line(w, t3, t2).matrix @ wilson_line(w, t2, t1).matrix
        rhs = wilson_line(w, t3, t1).matrix
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))

    @given(st.integers(1, 4), st.integers(0, 2**31), st.floats(0, 1))
    def test_empty_interval_and_invertible(self, d, seed, t):
        w = random_field(np.random.default_rng(seed), d, 64)
        assert np.array_equal(wilson_line(w, t, t).matrix, np.eye(d))
        assert abs(np.linalg.det(wilson_line(w, 1.0, t).matrix)) > 1e-12


class TestInverseIdentity:
    def test_zero_field_exact(self):
        r = wilson_inverse_identity(TimeSeriesField.zeros(TimeGrid(1.0, 8), (2, 2)), 0.75, 0.25)
        assert r.inverse_residual == 0.0 and r.passed

    def test_constant_commuting(self):
        w = TimeSeriesField.constant(TimeGrid(1.0, 64), np.diag([0.5, -1.2, 2.0]))
        r = wilson_inverse_identity(w, 1.0, 0.0)
        assert r.inverse_residual <= 1e-12
        assert r.literal_reading_deviation <= 1e-12

    def test_random_field(self, rng):
        w = random_field(rng, 3, 128)
        r = wilson_inverse_identity(w, 0.9, 0.1)
        assert r.inverse_residual <= 1e-9 and r.b_factor_residual <= 1e-9 and r.passed

    def test_literal_reverse_reading_misses_for_non_commuting_fields(self, rng):
        r = wilson_inverse_identity(random_field(rng, 3, 128), 1.0, 0.0)
        assert r.literal_reading_deviation > 1e-3


class TestLinearSolution:
    def test_zero_dynamics_returns_input(self):
        g = TimeGrid(1.0, 16)
        x0 = np.array([0.3, -2.0])
        assert np.array_equal(linear_solution(LinearNodeParams.zeros(g, 2), x0), x0)

    def test_drift(self):
        g = TimeGrid(1.0, 16)
        p = LinearNodeParams(TimeSeriesField.zeros(g, (1, 1)), TimeSeriesField.constant(g, [1.0]))
        assert abs(linear_solution(p, [0.0])[0] - 1.0) <= 1e-10

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_rk4(self, seed):
        rng = np.random.default_rng(seed)
        d = 1 + seed % 3
        p = smooth_params(rng, d).on(TimeGrid(1.0, 4096))
        x0 = rng.standard_normal(d)
        assert np.abs(linear_solution(p, x0) - integrate_linear(p, x0).final).max() <= 1e-6


class TestCovariance:
    def test_identity_gauge(self, rng):
        w = random_field(rng, 3, 64)
        g = GaugeTransformLinear.identity(w.grid, 3)
        assert wilson_gauge_covariance(w, g, 1.0, 0.0) <= 1e-14

    def test_scalar_gauge(self):
        grid = TimeGrid(1.0, 1024)
        w = TimeSeriesField.constant(grid, [[1.0]])
        g = GaugeTransformLinear.from_functions(
            grid,
            lambda t: [[1 + 0.5 * np.sin(np.pi * t)]],
            lambda t: [0.0],
            lambda t: [[0.5 * np.pi * np.cos(np.pi * t)]],
            lambda t: [0.0],
        )
        assert wilson_gauge_covariance(w, g, 1.0, 0.0) <= 1e-6

    def test_random_d3(self, rng):
        grid = TimeGrid(1.0, 2048)
        w = smooth_params(rng, 3).on(grid).w
        g = smooth_gauge(rng, 3, amplitude=0.15, modes=1, shift=0.15).on(grid)
        assert wilson_gauge_covariance(w, g, 1.0, 0.0) <= 1e-7

    def test_residual_shrinks_with_step(self, rng):
        sp = smooth_params(rng, 3)
        sg = smooth_gauge(rng, 3, amplitude=0.15, modes=1, shift=0.15)
        res = []
        for n in (256, 512, 1024):
            grid = TimeGrid(1.0, n)
            res.append(wilson_gauge_covariance(sp.on(grid).w, sg.on(grid), 1.0, 0.0))
        assert res[0] / res[1] >= 3.5 and res[1] / res[2] >= 3.5
