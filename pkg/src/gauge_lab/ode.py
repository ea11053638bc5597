"""Neural ODEs on uniform time grids.

Three model classes live here: a generic force F(t, x), the linear force
w(t) x + b(t) with piecewise-linear parameter fields, and the spacetime
lift in which time becomes the zeroth state component.  All of them are
integrated with classical fourth-order Runge-Kutta, one step per grid cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import GridMismatch, NonFiniteState, OutOfDomain, ShapeError

Force = Callable[[float, np.ndarray], np.ndarray]


def fd_step(x):
    """Central-difference step used for every finite-difference derivative."""
    return np.maximum(1e-6, 1e-6 * np.abs(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * (t_end / n_steps), k = 0..n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def step(self):
        return self.t_end / self.n_steps

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.step

    def time(self, k):
        return k * self.step

    def node_index(self, t, rtol=1e-9):
        """Index k with t_k == t (to rtol * step), or None when t is off-grid."""
        k = int(round(t / self.step))
        if 0 <= k <= self.n_steps and abs(t - k * self.step) <= rtol * self.step:
            return k
        return None

    def refine(self, factor):
        return TimeGrid(self.t_end, self.n_steps * int(factor))

    def check_time(self, t, slack=1e-12):
        if not (-slack * self.t_end <= t <= self.t_end * (1 + slack)):
            raise OutOfDomain(f"t={t} outside [0, {self.t_end}]")


def _snap(u):
    # times built as k * step land a few ulps off integer k; treat them as nodes
    r = np.round(u)
    return np.where(np.abs(u - r) <= 1e-9 * np.maximum(1.0, np.abs(r)), r, u)


class TimeSeriesField:
    """Values on the nodes of a TimeGrid, piecewise-linear in between.

    Each node carries a scalar, a vector or a matrix; all nodes share one
    shape.  Evaluation slightly outside [0, T] (at most one step) extrapolates
    the end cells, which is what finite-difference time derivatives near the
    boundary need.
    """

    def __init__(self, grid: TimeGrid, values):
        values = np.array(values, dtype=float)
        if values.ndim == 0 or values.shape[0] != grid.n_steps + 1:
            raise ShapeError(
                f"expected {grid.n_steps + 1} node values, got array of shape {values.shape}"
            )
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, [fn(t) for t in grid.times])

    @classmethod
    def constant(cls, grid, value):
        value = np.asarray(value, dtype=float)
        return cls(grid, np.broadcast_to(value, (grid.n_steps + 1,) + value.shape))

    @classmethod
    def zeros(cls, grid, shape=()):
        return cls(grid, np.zeros((grid.n_steps + 1,) + tuple(shape)))

    @property
    def shape(self):
        return self.values.shape[1:]

    def __repr__(self):
        return f"TimeSeriesField(n_steps={self.grid.n_steps}, shape={self.shape})"

    def __neg__(self):
        return TimeSeriesField(self.grid, -self.values)

    def _locate(self, t):
        g = self.grid
        if not (-g.step <= t <= g.t_end + g.step):
            raise OutOfDomain(f"t={t} outside [0, {g.t_end}]")
        u = _snap(t / g.step)
        k = min(max(int(np.floor(u)), 0), g.n_steps - 1)
        return k, u - k

    def __call__(self, t):
        k, frac = self._locate(t)
        v = (1.0 - frac) * self.values[k] + frac * self.values[k + 1]
        return float(v) if v.ndim == 0 else v

    def sample(self, ts):
        """Vectorized evaluation at an array of times."""
        g = self.grid
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < -g.step or ts.max() > g.t_end + g.step):
            raise OutOfDomain(f"sample times outside [0, {g.t_end}]")
        u = _snap(ts / g.step)
        k = np.clip(np.floor(u).astype(int), 0, g.n_steps - 1)
        frac = (u - k).reshape(k.shape + (1,) * len(self.shape))
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]

    def slope(self, t):
        """d/dt of the piecewise-linear interpolant (right-continuous at nodes)."""
        k, _ = self._locate(t)
        v = (self.values[k + 1] - self.values[k]) / self.grid.step
        return float(v) if v.ndim == 0 else v

    def midpoints(self):
        return 0.5 * (self.values[:-1] + self.values[1:])

    def node_derivative(self):
        """Derivative at every node: centered inside, 2nd-order one-sided at the ends."""
        if self.grid.n_steps < 2:
            return np.broadcast_to(
                (self.values[1] - self.values[0]) / self.grid.step, self.values.shape
            ).copy()
        return np.gradient(self.values, self.grid.step, axis=0, edge_order=2)


@dataclass(frozen=True)
class LinearNodeParams:
    """Parameters of dx/dt = w(t) x + b(t)."""

    w: TimeSeriesField
    b: TimeSeriesField

    def __post_init__(self):
        if self.w.grid != self.b.grid:
            raise GridMismatch("w and b must share a grid")
        d = self.b.shape
        if len(d) != 1 or self.w.shape != (d[0], d[0]):
            raise ShapeError(f"w values must be dxd and b values length d; got {self.w.shape}, {d}")

    @property
    def dim(self):
        return self.b.shape[0]

    @property
    def grid(self):
        return self.w.grid

    @classmethod
    def zeros(cls, grid, dim):
        return cls(TimeSeriesField.zeros(grid, (dim, dim)), TimeSeriesField.zeros(grid, (dim,)))

    def as_node(self) -> "GenericNode":
        w, b = self.w, self.b
        return GenericNode(
            self.dim,
            lambda t, x: w(t) @ x + b(t),
            jacobian_x=lambda t, x: w(t),
            time_derivative=lambda t, x: w.slope(t) @ x + b.slope(t),
        )


@dataclass(frozen=True)
class GenericNode:
    """dx/dt = force(t, x) in R^dim, optionally with analytic derivatives."""

    dim: int
    force: Force
    jacobian_x: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    time_derivative: Optional[Force] = None

    def __call__(self, t, x):
        return np.asarray(self.force(t, x), dtype=float)

    def jacobian(self, t, x):
        """dF/dx as a dim x dim matrix; central differences when no analytic form."""
        if self.jacobian_x is not None:
            return np.asarray(self.jacobian_x(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        h = fd_step(x)
        cols = []
        for j in range(self.dim):
            e = np.zeros_like(x)
            e[j] = h[j]
            cols.append((self(t, x + e) - self(t, x - e)) / (2 * h[j]))
        return np.stack(cols, axis=-1)

    def dt(self, t, x):
        """dF/dt at fixed x."""
        if self.time_derivative is not None:
            return np.asarray(self.time_derivative(t, x), dtype=float)
        h = float(fd_step(t))
        return (self(t + h, x) - self(t - h, x)) / (2 * h)


@dataclass(frozen=True)
class SpacetimeNode:
    """Lifted system d/ds (t, x) = (F0, F(t, x)).

    ``f0`` maps (s, y) to the zeroth component, where y = (t, x) is the full
    lifted state; ``None`` means F0 = 1 so that t(s) = s.
    """

    base: GenericNode
    f0: Optional[Callable[[float, np.ndarray], float]] = None

    @property
    def dim(self):
        return self.base.dim + 1

    def force(self, s, y):
        f0 = 1.0 if self.f0 is None else float(self.f0(s, y))
        return np.concatenate(([f0], self.base(y[0], y[1:])))


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray = field(repr=False)

    @property
    def final(self):
        return self.states[-1]

    @property
    def times(self):
        return self.grid.times


def _rk4(force, y0, grid):
    h = grid.step
    states = np.empty((grid.n_steps + 1,) + y0.shape)
    states[0] = y0
    y = y0
    for k in range(grid.n_steps):
        t = k * h
        k1 = force(t, y)
        k2 = force(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = force(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = force(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"non-finite state after step {k + 1} (t={t + h:g})")
        states[k + 1] = y
    return states


def _as_state(x0, dim):
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.shape != (dim,):
        raise ShapeError(f"initial state has length {x0.size}, node dimension is {dim}")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteState("initial state is not finite")
    return x0


def integrate(node: GenericNode, x0, grid: TimeGrid) -> Trajectory:
    """RK4 trajectory of a generic node sampled at every grid node."""
    x0 = _as_state(x0, node.dim)
    return Trajectory(grid, _rk4(node, x0, grid))


def linear_final_states(params: LinearNodeParams, X0):
    """x(T) of the linear node for a batch of inputs, shape (m, d) -> (m, d).

    Same RK4 scheme as :func:`integrate_linear`, vectorized over inputs.
    """
    X = np.array(X0, dtype=float)
    w, b, h = params.w.values, params.b.values, params.grid.step
    wm, bm = params.w.midpoints(), params.b.midpoints()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(params.grid.n_steps):
            k1 = X @ w[k].T + b[k]
            k2 = (X + (0.5 * h) * k1) @ wm[k].T + bm[k]
            k3 = (X + (0.5 * h) * k2) @ wm[k].T + bm[k]
            k4 = (X + h * k3) @ w[k + 1].T + b[k + 1]
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(X)):
        raise NonFiniteState("non-finite state in linear integration")
    return X


def integrate_linear(params: LinearNodeParams, x0) -> Trajectory:
    """RK4 for dx/dt = w(t) x + b(t) on the parameters' own grid."""
    x0 = _as_state(x0, params.dim)
    w, b, h = params.w.values, params.b.values, params.grid.step
    wm, bm = params.w.midpoints(), params.b.midpoints()

    states = np.empty((params.grid.n_steps + 1, params.dim))
    states[0] = x = x0
    for k in range(params.grid.n_steps):
        k1 = w[k] @ x + b[k]
        k2 = wm[k] @ (x + (0.5 * h) * k1) + bm[k]
        k3 = wm[k] @ (x + (0.5 * h) * k2) + bm[k]
        k4 = w[k + 1] @ (x + h * k3) + b[k + 1]
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"non-finite state after step {k + 1}")
        states[k + 1] = x
    return Trajectory(params.grid, states)


def lift_to_spacetime(node: GenericNode) -> SpacetimeNode:
    """Spacetime extension with F0 = 1."""
    return SpacetimeNode(node)


def integrate_spacetime(node: SpacetimeNode, y0, grid: TimeGrid) -> Trajectory:
    """Integrate a lifted system in the flow parameter s over ``grid``.

    ``y0`` is either the full lifted state (t0, x0) or just x0, in which case
    t0 = 0.  States are returned with time in column 0.
    """
    y0 = np.array(y0, dtype=float).reshape(-1)
    if y0.size == node.base.dim:
        y0 = np.concatenate(([0.0], y0))
    y0 = _as_state(y0, node.dim)
    return Trajectory(grid, _rk4(node.force, y0, grid))
