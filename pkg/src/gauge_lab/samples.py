"""Seeded random smooth models, gauges and deformation generators.

Every factory draws its coefficients once and returns an object that can be
sampled on any grid, so refinement sweeps see the same underlying functions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauge import DiffeoGenerator, GaugeTransformLinear
from .ode import GenericNode, LinearNodeParams, TimeGrid, TimeSeriesField


@dataclass(frozen=True)
class SmoothParams:
    """w(t) = sum_m A_m phi_m(t), b(t) = sum_m a_m phi_m(t) over a few Fourier modes."""

    w_coef: np.ndarray  # (modes, d, d)
    b_coef: np.ndarray  # (modes, d)
    t_end: float

    def _basis(self, t):
        m = len(self.w_coef)
        out = [np.ones_like(t)]
        for j in range(1, m):
            k = (j + 1) // 2
            arg = 2 * np.pi * k * t / self.t_end
            out.append(np.sin(arg) if j % 2 else np.cos(arg))
        return np.stack(out, axis=-1)

    def w(self, t):
        return np.tensordot(self._basis(np.asarray(t, dtype=float)), self.w_coef, axes=1)

    def b(self, t):
        return np.tensordot(self._basis(np.asarray(t, dtype=float)), self.b_coef, axes=1)

    def on(self, grid: TimeGrid) -> LinearNodeParams:
        t = grid.times
        return LinearNodeParams(TimeSeriesField(grid, self.w(t)), TimeSeriesField(grid, self.b(t)))


def smooth_params(rng, dim, t_end=1.0, scale=0.5, modes=3, bias_scale=None):
    bias_scale = scale if bias_scale is None else bias_scale
    return SmoothParams(
        scale * rng.standard_normal((modes, dim, dim)) / np.sqrt(dim),
        bias_scale * rng.standard_normal((modes, dim)),
        float(t_end),
    )


@dataclass(frozen=True)
class SmoothGauge:
    """G(t) = I + sum_m sin(pi m t/T) A_m,  c(t) = sum_m sin(pi m t/T) v_m.

    Both vanish-at-the-ends conditions hold by construction; derivatives are
    analytic.
    """

    A: np.ndarray  # (modes, d, d)
    v: np.ndarray  # (modes, d)
    t_end: float

    def _sin_cos(self, t):
        m = np.arange(1, len(self.A) + 1)
        arg = np.pi * np.multiply.outer(np.asarray(t, dtype=float), m) / self.t_end
        return np.sin(arg), np.cos(arg) * (np.pi * m / self.t_end)

    def G(self, t):
        s, _ = self._sin_cos(t)
        return np.eye(self.A.shape[-1]) + np.tensordot(s, self.A, axes=1)

    def G_dot(self, t):
        return np.tensordot(self._sin_cos(t)[1], self.A, axes=1)

    def c(self, t):
        return np.tensordot(self._sin_cos(t)[0], self.v, axes=1)

    def c_dot(self, t):
        return np.tensordot(self._sin_cos(t)[1], self.v, axes=1)

    def on(self, grid: TimeGrid, analytic=True) -> GaugeTransformLinear:
        t = grid.times
        # sin(pi m) is ~1e-16, pin the ends exactly
        G, c = self.G(t), self.c(t)
        G[0] = G[-1] = np.eye(G.shape[-1])
        c[0] = c[-1] = 0.0
        f = lambda v: TimeSeriesField(grid, v)
        if not analytic:
            return GaugeTransformLinear(f(G), f(c))
        return GaugeTransformLinear(f(G), f(c), f(self.G_dot(t)), f(self.c_dot(t)))


def smooth_gauge(rng, dim, t_end=1.0, amplitude=0.3, modes=2, shift=0.3):
    m = np.arange(1, modes + 1)[:, None, None]
    A = amplitude * rng.standard_normal((modes, dim, dim)) / (np.sqrt(dim) * m)
    v = shift * rng.standard_normal((modes, dim)) / m[:, :, 0]
    return SmoothGauge(A, v, float(t_end))


def neural_node(rng, dim, t_end=1.0, width=None, scale=0.8):
    """Nonlinear time-dependent node F(t, x) = A(t) tanh(B x + c(t))."""
    width = dim if width is None else width
    A0, A1 = scale * rng.standard_normal((2, dim, width)) / np.sqrt(width)
    B = scale * rng.standard_normal((width, dim)) / np.sqrt(dim)
    c0, c1 = 0.5 * rng.standard_normal((2, width))
    om = 2 * np.pi / t_end

    def force(t, x):
        A = A0 + np.sin(om * t) * A1
        return A @ np.tanh(B @ x + c0 + np.cos(om * t) * c1)

    return GenericNode(dim, force)


def smooth_generator(rng, dim, t_end=1.0, spatial_only=False, scale=1.0):
    """eps(t, x) = sin(pi t/T) (u + M x + q |x|^2 / 2), vanishing at t = 0, T."""
    n = dim + 1
    u = scale * rng.standard_normal(n)
    M = scale * rng.standard_normal((n, dim)) / np.sqrt(dim)
    q = 0.3 * scale * rng.standard_normal(n)
    if spatial_only:
        u[0], M[0], q[0] = 0.0, 0.0, 0.0
    om = np.pi / t_end

    def eps(t, x):
        return np.sin(om * t) * (u + M @ x + 0.5 * q * (x @ x))

    def d_dt(t, x):
        return om * np.cos(om * t) * (u + M @ x + 0.5 * q * (x @ x))

    def d_dx(t, x):
        return np.sin(om * t) * (M + np.outer(q, x))

    return DiffeoGenerator(dim, eps, d_dt, d_dx)
