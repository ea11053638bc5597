"""Uniform-motion regularizer and gradient-descent training of linear nodes.

The data loss only sees x(T), so it is constant along gauge orbits and its
gradient has no component along orbit tangents.  The regularizer

    strength * int_0^T ( ||w' + w^2||_F^2 + ||b' + w b||^2 ) dt

vanishes exactly on uniform motion (x'' = 0) and varies along orbits, which
is what lets it pick representatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional

import numpy as np
from scipy.integrate import simpson

from .errors import Divergence, NonFiniteState, ShapeError
from .gauge import GaugeTransformLinear, apply_linear_gauge
from .ode import LinearNodeParams, TimeGrid, TimeSeriesField, linear_final_states


@dataclass(frozen=True)
class RegularizerConfig:
    strength: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.strength) and self.strength >= 0):
            raise ValueError(f"regularizer strength must be >= 0, got {self.strength}")


@dataclass(frozen=True)
class TrainConfig:
    """Plain gradient descent settings.

    ``gradient`` is "fd" (central differences with step ``fd_step``) or
    "adjoint" (exact reverse pass through the RK4 steps).  ``seed`` drives
    :func:`init_params`; training itself draws no random numbers.
    """

    learning_rate: float = 0.1
    iterations: int = 100
    seed: int = 0
    fd_step: float = 1e-6
    gradient: str = "fd"
    drift_modes: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations}")
        if not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")
        if self.gradient not in ("fd", "adjoint"):
            raise ValueError(f"gradient must be 'fd' or 'adjoint', got {self.gradient!r}")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.array(self.inputs, dtype=float))
        Y = np.atleast_2d(np.array(self.targets, dtype=float))
        if X.shape != Y.shape or X.shape[0] == 0:
            raise ShapeError(f"need matching non-empty (m, d) inputs and targets; got {X.shape}, {Y.shape}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return self.inputs.shape[0]


# --- parameter vectors -------------------------------------------------------


def flatten(params: LinearNodeParams):
    """All node values of w, then all node values of b, as one vector."""
    return np.concatenate((params.w.values.ravel(), params.b.values.ravel()))


def _split(theta, n1, d):
    theta = np.asarray(theta, dtype=float)
    lead = theta.shape[:-1]
    cut = n1 * d * d
    return theta[..., :cut].reshape(lead + (n1, d, d)), theta[..., cut:].reshape(lead + (n1, d))


def unflatten(theta, grid: TimeGrid, dim) -> LinearNodeParams:
    n1 = grid.n_steps + 1
    if np.shape(theta) != (n1 * dim * (dim + 1),):
        raise ShapeError(f"parameter vector has shape {np.shape(theta)}, expected {(n1 * dim * (dim + 1),)}")
    W, B = _split(theta, n1, dim)
    return LinearNodeParams(TimeSeriesField(grid, W), TimeSeriesField(grid, B))


def init_params(grid: TimeGrid, dim, tcfg: TrainConfig, scale=0.1) -> LinearNodeParams:
    """Small constant-in-time random start drawn from ``tcfg.seed``."""
    rng = np.random.default_rng(tcfg.seed)
    w = scale * rng.standard_normal((dim, dim))
    b = scale * rng.standard_normal(dim)
    return LinearNodeParams(TimeSeriesField.constant(grid, w), TimeSeriesField.constant(grid, b))


# --- regularizer -------------------------------------------------------------


def _residuals(W, B, h):
    """Nodewise w' + w^2 and b' + w b for stacks (..., n1, d, d) and (..., n1, d)."""
    Wdot = np.gradient(W, h, axis=-3, edge_order=2)
    Bdot = np.gradient(B, h, axis=-2, edge_order=2)
    return Wdot + W @ W, Bdot + np.einsum("...ij,...j->...i", W, B)


def uniform_motion_residual(params: LinearNodeParams):
    """(w' + w^2, b' + w b) at every node; derivatives by centered differences."""
    if params.grid.n_steps < 2:
        raise ShapeError("the residual needs at least two grid cells")
    Rw, Rb = _residuals(params.w.values, params.b.values, params.grid.step)
    return TimeSeriesField(params.grid, Rw), TimeSeriesField(params.grid, Rb)


def _regularizer_stack(W, B, h, strength):
    Rw, Rb = _residuals(W, B, h)
    density = (Rw ** 2).sum(axis=(-2, -1)) + (Rb ** 2).sum(axis=-1)
    return strength * simpson(density, dx=h, axis=-1)


def regularizer(params: LinearNodeParams, cfg: RegularizerConfig = RegularizerConfig(1.0)):
    if params.grid.n_steps < 2:
        raise ShapeError("the regularizer needs at least two grid cells")
    if cfg.strength == 0:
        return 0.0
    return float(_regularizer_stack(params.w.values, params.b.values, params.grid.step, cfg.strength))


@lru_cache(maxsize=16)
def _simpson_weights(n1, h):
    # simpson is linear in the samples, so its weights are its action on unit vectors
    return simpson(np.eye(n1), dx=h, axis=-1)


def _gradient_transpose(G, h):
    """Adjoint of np.gradient(., h, axis=0, edge_order=2) applied to G."""
    out = np.zeros_like(G)
    c = 1.0 / (2.0 * h)
    out[:-2] -= c * G[1:-1]
    out[2:] += c * G[1:-1]
    out[0] += -3 * c * G[0]
    out[1] += 4 * c * G[0]
    out[2] += -c * G[0]
    out[-1] += 3 * c * G[-1]
    out[-2] += -4 * c * G[-1]
    out[-3] += c * G[-1]
    return out


def regularizer_gradient(params: LinearNodeParams, cfg: RegularizerConfig):
    """Exact gradient of :func:`regularizer` with respect to the node values, flattened."""
    W, B, h = params.w.values, params.b.values, params.grid.step
    Rw, Rb = _residuals(W, B, h)
    s = 2.0 * cfg.strength * _simpson_weights(len(W), h)
    SRw, SRb = s[:, None, None] * Rw, s[:, None] * Rb
    gW = _gradient_transpose(SRw, h) + SRw @ np.swapaxes(W, -1, -2) + np.swapaxes(W, -1, -2) @ SRw
    gW += np.einsum("ki,kj->kij", SRb, B)
    gB = _gradient_transpose(SRb, h) + np.einsum("kji,kj->ki", W, SRb)
    return np.concatenate((gW.ravel(), gB.ravel()))


# --- data loss ---------------------------------------------------------------


def data_loss(params: LinearNodeParams, data: Dataset):
    """Mean over pairs of ||x(T; input) - target||^2, x(T) from RK4 on the grid."""
    if data.dim != params.dim:
        raise ShapeError(f"data dimension {data.dim} differs from model dimension {params.dim}")
    out = linear_final_states(params, data.inputs)
    return float(np.mean(((out - data.targets) ** 2).sum(axis=1)))


def _final_states_stack(W, B, X0, h):
    """The RK4 of linear_final_states for a stack of parameter sets: (P, m, d)."""
    Wm, Bm = 0.5 * (W[:, :-1] + W[:, 1:]), 0.5 * (B[:, :-1] + B[:, 1:])
    X = np.broadcast_to(X0, (len(W),) + X0.shape).copy()
    mv = lambda M, Y: np.einsum("pij,pmj->pmi", M, Y)
    for k in range(W.shape[1] - 1):
        k1 = mv(W[:, k], X) + B[:, k, None]
        k2 = mv(Wm[:, k], X + (0.5 * h) * k1) + Bm[:, k, None]
        k3 = mv(Wm[:, k], X + (0.5 * h) * k2) + Bm[:, k, None]
        k4 = mv(W[:, k + 1], X + h * k3) + B[:, k + 1, None]
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X


def _objective_stack(thetas, grid, dim, data, rcfg):
    W, B = _split(thetas, grid.n_steps + 1, dim)
    out = _final_states_stack(W, B, data.inputs, grid.step)
    loss = ((out - data.targets) ** 2).sum(axis=-1).mean(axis=-1)
    if rcfg.strength:
        loss = loss + _regularizer_stack(W, B, grid.step, rcfg.strength)
    return loss


def fd_gradient(params: LinearNodeParams, data: Dataset, rcfg: RegularizerConfig, step=1e-6, chunk=256):
    """Central-difference gradient of data_loss + regularizer over every node value."""
    theta = flatten(params)
    P = theta.size
    grad = np.empty(P)
    for lo in range(0, P, chunk):
        idx = np.arange(lo, min(lo + chunk, P))
        bump = np.zeros((len(idx), P))
        bump[np.arange(len(idx)), idx] = step
        up = _objective_stack(theta + bump, params.grid, params.dim, data, rcfg)
        down = _objective_stack(theta - bump, params.grid, params.dim, data, rcfg)
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def adjoint_gradient(params: LinearNodeParams, data: Dataset, rcfg: RegularizerConfig = RegularizerConfig()):
    """Exact gradient of the discrete objective by a reverse pass through RK4."""
    W, B, h = params.w.values, params.b.values, params.grid.step
    n = params.grid.n_steps
    Wm, Bm = 0.5 * (W[:-1] + W[1:]), 0.5 * (B[:-1] + B[1:])
    X = data.inputs
    xs = [X]
    for k in range(n):
        k1 = X @ W[k].T + B[k]
        k2 = (X + 0.5 * h * k1) @ Wm[k].T + Bm[k]
        k3 = (X + 0.5 * h * k2) @ Wm[k].T + Bm[k]
        k4 = (X + h * k3) @ W[k + 1].T + B[k + 1]
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xs.append(X)
    if not np.all(np.isfinite(X)):
        raise NonFiniteState("non-finite state in linear integration")

    gW, gB = np.zeros_like(W), np.zeros_like(B)
    g = 2.0 * (X - data.targets) / len(data)
    for k in range(n - 1, -1, -1):
        x = xs[k]
        k1 = x @ W[k].T + B[k]
        u2 = x + 0.5 * h * k1
        k2 = u2 @ Wm[k].T + Bm[k]
        u3 = x + 0.5 * h * k2
        k3 = u3 @ Wm[k].T + Bm[k]
        u4 = x + h * k3

        g1, g2, g3, g4 = (h / 6.0) * g, (h / 3.0) * g, (h / 3.0) * g, (h / 6.0) * g
        gx = g.copy()
        gWm, gBm = np.zeros_like(W[0]), np.zeros_like(B[0])

        gW[k + 1] += g4.T @ u4
        gB[k + 1] += g4.sum(axis=0)
        gu = g4 @ W[k + 1]
        gx += gu
        g3 = g3 + h * gu

        gWm += g3.T @ u3
        gBm += g3.sum(axis=0)
        gu = g3 @ Wm[k]
        gx += gu
        g2 = g2 + 0.5 * h * gu

        gWm += g2.T @ u2
        gBm += g2.sum(axis=0)
        gu = g2 @ Wm[k]
        gx += gu
        g1 = g1 + 0.5 * h * gu

        gW[k] += g1.T @ x
        gB[k] += g1.sum(axis=0)
        gx += g1 @ W[k]

        gW[k] += 0.5 * gWm
        gW[k + 1] += 0.5 * gWm
        gB[k] += 0.5 * gBm
        gB[k + 1] += 0.5 * gBm
        g = gx

    grad = np.concatenate((gW.ravel(), gB.ravel()))
    if rcfg.strength:
        grad = grad + regularizer_gradient(params, rcfg)
    return grad


def objective_gradient(params, data, rcfg, tcfg: Optional[TrainConfig] = None):
    tcfg = TrainConfig() if tcfg is None else tcfg
    if tcfg.gradient == "adjoint":
        return adjoint_gradient(params, data, rcfg)
    return fd_gradient(params, data, rcfg, tcfg.fd_step)


# --- gauge orbits --------------------------------------------------------------


@dataclass(frozen=True)
class GaugeGenerator:
    """Infinitesimal gauge (dG, dc), both vanishing at t = 0 and t = T."""

    dG: TimeSeriesField
    dc: TimeSeriesField
    dG_dot: Optional[TimeSeriesField] = None
    dc_dot: Optional[TimeSeriesField] = None

    def finite(self, amplitude) -> GaugeTransformLinear:
        a = float(amplitude)
        grid = self.dG.grid
        f = lambda v: None if v is None else TimeSeriesField(grid, a * v.values)
        G = TimeSeriesField(grid, np.eye(self.dc.shape[0]) + a * self.dG.values)
        return GaugeTransformLinear(G, f(self.dc), f(self.dG_dot), f(self.dc_dot))

    @classmethod
    def sine_mode(cls, grid: TimeGrid, dG, dc, mode=1):
        """sin(pi m t / T) times constant dG and dc, ends pinned to zero."""
        t = grid.times
        om = np.pi * mode / grid.t_end
        s, ds = np.sin(om * t), om * np.cos(om * t)
        s[0] = s[-1] = 0.0
        dG, dc = np.asarray(dG, dtype=float), np.asarray(dc, dtype=float)
        f = lambda prof, v: TimeSeriesField(grid, np.multiply.outer(prof, v))
        return cls(f(s, dG), f(s, dc), f(ds, dG), f(ds, dc))

    @classmethod
    def random(cls, rng, grid, dim, mode=1, scale=1.0):
        return cls.sine_mode(
            grid, scale * rng.standard_normal((dim, dim)), scale * rng.standard_normal(dim), mode
        )


def orbit_tangent(params: LinearNodeParams, gen: GaugeGenerator, step=1e-5):
    """d/da of the gauge-transformed parameters at a = 0, by central differences."""
    up = flatten(apply_linear_gauge(params, gen.finite(step)))
    down = flatten(apply_linear_gauge(params, gen.finite(-step)))
    return (up - down) / (2.0 * step)


def orbit_basis(params: LinearNodeParams, modes=1):
    """Tangents for every matrix unit in dG and unit vector in dc, sine modes 1..modes."""
    d, grid = params.dim, params.grid
    tangents = []
    for m in range(1, modes + 1):
        for i in range(d):
            for j in range(d):
                E = np.zeros((d, d))
                E[i, j] = 1.0
                tangents.append(orbit_tangent(params, GaugeGenerator.sine_mode(grid, E, np.zeros(d), m)))
            tangents.append(orbit_tangent(params, GaugeGenerator.sine_mode(grid, np.zeros((d, d)), np.eye(d)[i], m)))
    return np.array(tangents)


def orbit_component(update, basis):
    """Norm of the part of ``update`` lying in the span of the rows of ``basis``."""
    Q, _ = np.linalg.qr(basis.T)
    return float(np.linalg.norm(Q.T @ update))


def normalized_inner(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(abs(u @ v) / (nu * nv))


def directional_derivative(fn, params: LinearNodeParams, direction, step=1e-5):
    theta = flatten(params)
    grid, d = params.grid, params.dim
    up = fn(unflatten(theta + step * direction, grid, d))
    down = fn(unflatten(theta - step * direction, grid, d))
    return (up - down) / (2.0 * step)


# --- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: LinearNodeParams
    loss: List[float] = field(default_factory=list)
    regularizer: List[float] = field(default_factory=list)
    orbit_drift: List[float] = field(default_factory=list)

    @property
    def history(self):
        return [
            {"iteration": i, "loss": l, "regularizer": r, "orbit_drift": o}
            for i, (l, r, o) in enumerate(zip(self.loss, self.regularizer, self.orbit_drift))
        ]


def train(params0: LinearNodeParams, data: Dataset, tcfg: TrainConfig, rcfg: RegularizerConfig) -> TrainResult:
    """Full-batch gradient descent on data_loss + regularizer.

    History entry i describes the parameters after i updates: data loss,
    unit-strength regularizer, and the orbit component of the update that
    produced them (0 for the starting point).
    """
    unit = RegularizerConfig(1.0)
    grid, d = params0.grid, params0.dim
    theta = flatten(params0)
    params = params0
    result = TrainResult(params0)

    def record(p, drift):
        loss = data_loss(p, data)
        if not np.isfinite(loss):
            raise Divergence(f"data loss became {loss} after {len(result.loss)} updates")
        result.loss.append(loss)
        result.regularizer.append(regularizer(p, unit))
        result.orbit_drift.append(drift)

    try:
        record(params, 0.0)
        for _ in range(int(tcfg.iterations)):
            step = -tcfg.learning_rate * objective_gradient(params, data, rcfg, tcfg)
            drift = orbit_component(step, orbit_basis(params, tcfg.drift_modes))
            theta = theta + step
            if not np.all(np.isfinite(theta)):
                raise Divergence("parameters became non-finite")
            params = unflatten(theta, grid, d)
            record(params, drift)
    except NonFiniteState as exc:
        raise Divergence(str(exc)) from exc
    result.params = params
    return result
