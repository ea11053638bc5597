"""Gauge transformations of neural ODEs and numerical invariance checks.

Finite transformations act on linear nodes through x -> G(t) x + c(t) with
G = I, c = 0 at both ends of [0, T].  Infinitesimal ones act on generic
nodes as spacetime deformations generated by a vector field eps(t, x) that
vanishes at t = 0 and t = T; they leave x(T) unchanged to first order in
their amplitude.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import GridMismatch, NonFiniteState, ShapeError, SingularGauge
from .ode import (
    GenericNode,
    LinearNodeParams,
    SpacetimeNode,
    TimeGrid,
    TimeSeriesField,
    fd_step,
    integrate,
)

MAX_CONDITION = 1e12
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class GaugeTransformLinear:
    """Finite gauge x -> G(t) x + c(t) of the linear neural ODE.

    ``G_dot`` and ``c_dot`` hold analytic derivatives sampled at the nodes;
    when absent, derivatives come from finite differences of the node values.
    Set ``open_ends=True`` to build gauges that deliberately violate the
    boundary conditions (negative controls).
    """

    G: TimeSeriesField
    c: TimeSeriesField
    G_dot: Optional[TimeSeriesField] = None
    c_dot: Optional[TimeSeriesField] = None
    open_ends: bool = False

    def __post_init__(self):
        grid = self.G.grid
        d = self.c.shape
        if len(d) != 1 or self.G.shape != (d[0], d[0]):
            raise ShapeError(f"G values must be dxd and c values length d; got {self.G.shape}, {d}")
        for f in (self.c, self.G_dot, self.c_dot):
            if f is not None and f.grid != grid:
                raise GridMismatch("all gauge fields must share one grid")
        if self.G_dot is not None and self.G_dot.shape != self.G.shape:
            raise ShapeError("G_dot shape differs from G")
        if self.c_dot is not None and self.c_dot.shape != self.c.shape:
            raise ShapeError("c_dot shape differs from c")
        if not self.open_ends and self.boundary_defect() > BOUNDARY_TOL:
            raise ValueError(
                f"gauge violates G(0)=G(T)=I, c(0)=c(T)=0 (defect {self.boundary_defect():.3g})"
            )
        cond = np.linalg.cond(self.G.values)
        if not np.all(cond <= MAX_CONDITION):
            k = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
            raise SingularGauge(f"G(t_{k}) has condition number {cond[k]:.3g}")

    @property
    def dim(self):
        return self.c.shape[0]

    @property
    def grid(self) -> TimeGrid:
        return self.G.grid

    @classmethod
    def identity(cls, grid, dim):
        return cls(
            TimeSeriesField.constant(grid, np.eye(dim)),
            TimeSeriesField.zeros(grid, (dim,)),
            TimeSeriesField.zeros(grid, (dim, dim)),
            TimeSeriesField.zeros(grid, (dim,)),
        )

    @classmethod
    def from_functions(cls, grid, G, c, G_dot=None, c_dot=None, open_ends=False):
        """Sample callables of t on the grid nodes."""
        sample = lambda fn: None if fn is None else TimeSeriesField.from_function(grid, fn)
        return cls(sample(G), sample(c), sample(G_dot), sample(c_dot), open_ends)

    def boundary_defect(self):
        eye = np.eye(self.dim)
        G, c = self.G.values, self.c.values
        return float(max(
            np.abs(G[0] - eye).max(), np.abs(G[-1] - eye).max(),
            np.abs(c[0]).max(), np.abs(c[-1]).max(),
        ))

    def G_dot_values(self):
        return self.G.node_derivative() if self.G_dot is None else self.G_dot.values

    def c_dot_values(self):
        return self.c.node_derivative() if self.c_dot is None else self.c_dot.values

    def compose(self, other: "GaugeTransformLinear") -> "GaugeTransformLinear":
        """Gauge equivalent to applying ``self`` first and ``other`` second.

        With x = G1 x1 + c1 and x1 = G2 x2 + c2 the combined map is
        x = (G1 G2) x2 + (G1 c2 + c1).
        """
        G1, c1, G2, c2 = self.G.values, self.c.values, other.G.values, other.c.values
        dG1, dc1 = self.G_dot_values(), self.c_dot_values()
        dG2, dc2 = other.G_dot_values(), other.c_dot_values()
        grid = self.grid
        f = lambda v: TimeSeriesField(grid, v)
        return GaugeTransformLinear(
            f(G1 @ G2),
            f(np.einsum("kij,kj->ki", G1, c2) + c1),
            f(dG1 @ G2 + G1 @ dG2),
            f(np.einsum("kij,kj->ki", dG1, c2) + np.einsum("kij,kj->ki", G1, dc2) + dc1),
            open_ends=self.open_ends or other.open_ends,
        )


def _check_grid(params, gauge):
    if params.grid != gauge.grid:
        raise GridMismatch("parameters and gauge live on different grids")
    if params.dim != gauge.dim:
        raise ShapeError(f"dimension mismatch: params {params.dim}, gauge {gauge.dim}")


def transform_weight(w: TimeSeriesField, gauge: GaugeTransformLinear) -> TimeSeriesField:
    """w' = G^-1 w G - G^-1 dG/dt at every node."""
    G = gauge.G.values
    return TimeSeriesField(w.grid, np.linalg.solve(G, w.values @ G - gauge.G_dot_values()))


def apply_linear_gauge(params: LinearNodeParams, gauge: GaugeTransformLinear) -> LinearNodeParams:
    """Parameters whose ODE is solved by x when G x + c solves the original one.

        w' = G^-1 w G - G^-1 G_dot
        b' = G^-1 (b + w c - c_dot)
    """
    _check_grid(params, gauge)
    G, c = gauge.G.values, gauge.c.values
    w, b = params.w.values, params.b.values
    rhs_b = b + np.einsum("kij,kj->ki", w, c) - gauge.c_dot_values()
    b_new = np.linalg.solve(G, rhs_b[..., None])[..., 0]
    return LinearNodeParams(transform_weight(params.w, gauge), TimeSeriesField(params.grid, b_new))


def linearized_gauge(params: LinearNodeParams, dG, dc, amplitude) -> LinearNodeParams:
    """First-order truncation of apply_linear_gauge for G = I + a dG, c = a dc.

    dG and dc are node-value arrays (or fields) vanishing at both ends; their
    time derivatives are taken by finite differences.  The result differs from
    the exact transform at O(a^2), so it changes x(T) at O(a^2) only.
    """
    grid = params.grid
    dG = TimeSeriesField(grid, getattr(dG, "values", dG))
    dc = TimeSeriesField(grid, getattr(dc, "values", dc))
    w, b = params.w.values, params.b.values
    dw = w @ dG.values - dG.values @ w - dG.node_derivative()
    db = (
        -np.einsum("kij,kj->ki", dG.values, b)
        + np.einsum("kij,kj->ki", w, dc.values)
        - dc.node_derivative()
    )
    return LinearNodeParams(
        TimeSeriesField(grid, w + amplitude * dw), TimeSeriesField(grid, b + amplitude * db)
    )


def time_reparam_as_gauge(params: LinearNodeParams, eps0: TimeSeriesField) -> GaugeTransformLinear:
    """Gauge G = I + eps w, c = eps b realizing the shift t -> t + eps(t)."""
    e = np.asarray(eps0.values, dtype=float)
    if e.ndim != 1:
        raise ShapeError("eps0 must be a scalar field")
    if abs(e[0]) > BOUNDARY_TOL or abs(e[-1]) > BOUNDARY_TOL:
        raise ValueError("eps0 must vanish at t=0 and t=T")
    grid = params.grid
    G = np.eye(params.dim) + e[:, None, None] * params.w.values
    c = e[:, None] * params.b.values
    return GaugeTransformLinear(TimeSeriesField(grid, G), TimeSeriesField(grid, c))


@dataclass(frozen=True)
class DiffeoGenerator:
    """Spacetime vector field eps(t, x) in R^(d+1); component 0 moves time.

    ``d_dt`` returns d eps / dt (length d+1) and ``d_dx`` the (d+1) x d
    matrix d eps^mu / d x^j.  Both fall back to central differences.
    """

    dim: int
    epsilon: Callable[[float, np.ndarray], np.ndarray]
    d_dt: Optional[Callable] = None
    d_dx: Optional[Callable] = None

    def __call__(self, t, x):
        return np.asarray(self.epsilon(t, x), dtype=float)

    def dt(self, t, x):
        if self.d_dt is not None:
            return np.asarray(self.d_dt(t, x), dtype=float)
        h = float(fd_step(t))
        return (self(t + h, x) - self(t - h, x)) / (2 * h)

    def dx(self, t, x):
        if self.d_dx is not None:
            return np.asarray(self.d_dx(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        h = fd_step(x)
        cols = []
        for j in range(self.dim):
            e = np.zeros_like(x)
            e[j] = h[j]
            cols.append((self(t, x + e) - self(t, x - e)) / (2 * h[j]))
        return np.stack(cols, axis=-1)

    def boundary_defect(self, t_end, probes):
        """max |eps| over probe points at t = 0 and t = T."""
        return max(
            float(np.abs(self(t, np.asarray(p, dtype=float))).max())
            for t in (0.0, float(t_end))
            for p in probes
        )

    @classmethod
    def spatial(cls, dim, eps_x, d_dt=None, d_dx=None):
        """Generator with eps^0 = 0 from a map (t, x) -> R^d."""
        pad = lambda v: np.concatenate(([0.0], np.asarray(v, dtype=float)))
        return cls(
            dim,
            lambda t, x: pad(eps_x(t, x)),
            None if d_dt is None else (lambda t, x: pad(d_dt(t, x))),
            None if d_dx is None else (lambda t, x: np.vstack((np.zeros(dim), d_dx(t, x)))),
        )


def _assert_spatial(eps: DiffeoGenerator):
    for t, x in ((0.37, np.zeros(eps.dim)), (0.61, np.ones(eps.dim))):
        if eps(t, x)[0] != 0.0:
            raise ValueError("spatial diffeomorphism needs eps^0 == 0")


def spatial_diffeo_deform(node: GenericNode, eps: DiffeoGenerator, amplitude) -> GenericNode:
    """Force after x -> x + a eps(t, x):  F + a (F,j eps^j - eps^i,j F^j - d_t eps^i)."""
    _assert_spatial(eps)
    a = float(amplitude)

    def force(t, x):
        F = node(t, x)
        e = eps(t, x)[1:]
        return F + a * (node.jacobian(t, x) @ e - eps.dx(t, x)[1:] @ F - eps.dt(t, x)[1:])

    return GenericNode(node.dim, force)


def time_reparam_deform(node: GenericNode, eps0, amplitude, eps0_dot=None) -> GenericNode:
    """Force after the space-independent shift t -> t + a eps0(t).

    F' = F + a (F d(eps0)/dt + eps0 dF/dt).  ``eps0`` is any callable of t
    (a scalar TimeSeriesField works); its derivative is ``eps0_dot`` if given,
    the interpolant's slope for fields, else a central difference.
    """
    a = float(amplitude)
    if eps0_dot is None:
        if isinstance(eps0, TimeSeriesField):
            eps0_dot = eps0.slope
        else:
            def eps0_dot(t):
                h = float(fd_step(t))
                return (eps0(t + h) - eps0(t - h)) / (2 * h)

    def force(t, x):
        F = node(t, x)
        return F + a * (F * eps0_dot(t) + eps0(t) * node.dt(t, x))

    return GenericNode(node.dim, force)


def lie_deform(node: GenericNode, eps: DiffeoGenerator, amplitude) -> SpacetimeNode:
    """Lifted node with F'^mu = F^mu + a (eps^nu d_nu F^mu - F^nu d_nu eps^mu).

    F^0 = 1 before the deformation.  For eps^0 = 0 the spatial components
    reproduce :func:`spatial_diffeo_deform`.
    """
    a = float(amplitude)

    def spatial(t, x):
        F = node(t, x)
        e = eps(t, x)
        e_t, e_x = eps.dt(t, x), eps.dx(t, x)
        along_eps = e[0] * node.dt(t, x) + node.jacobian(t, x) @ e[1:]
        along_F = e_t[1:] + e_x[1:] @ F
        return F + a * (along_eps - along_F)

    def f0(s, y):
        t, x = y[0], y[1:]
        return 1.0 - a * (eps.dt(t, x)[0] + eps.dx(t, x)[0] @ node(t, x))

    return SpacetimeNode(GenericNode(node.dim, spatial), f0)


@dataclass
class InvarianceReport:
    max_abs: float
    max_rel: float
    tolerance: float
    per_input: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures and self.max_abs <= self.tolerance


def probe_inputs(dim, count=10, seed=0):
    """Deterministic standard-normal probe inputs."""
    return np.random.default_rng(seed).standard_normal((count, dim))


def verify_invariance(node_a, node_b, inputs, grid, tolerance=1e-6) -> InvarianceReport:
    """Integrate both nodes from every input and compare x(T).

    Nodes may be GenericNode, SpacetimeNode (read at s = T, spatial part) or
    LinearNodeParams (integrated on their own grid, ``grid`` ignored).
    """
    from .ode import integrate_linear, integrate_spacetime

    def output(node, x0):
        if isinstance(node, LinearNodeParams):
            return integrate_linear(node, x0).final
        if isinstance(node, SpacetimeNode):
            return integrate_spacetime(node, x0, grid).final[1:]
        return integrate(node, x0, grid).final

    report = InvarianceReport(0.0, 0.0, tolerance)
    for i, x0 in enumerate(np.atleast_2d(inputs)):
        try:
            ya, yb = output(node_a, x0), output(node_b, x0)
        except NonFiniteState as exc:
            report.failures.append((i, str(exc)))
            continue
        dev = float(np.linalg.norm(ya - yb))
        rel = dev / max(float(np.linalg.norm(ya)), 1e-300)
        report.per_input.append((i, dev, rel))
        report.max_abs = max(report.max_abs, dev)
        report.max_rel = max(report.max_rel, rel)
    return report
