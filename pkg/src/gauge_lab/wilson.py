"""Time-ordered exponentials (Wilson lines) of piecewise-linear matrix fields.

The ordered exponential is realized as a product of short-step exponentials
exp(w(t_mid) * h), one per sub-interval between consecutive grid nodes.
Forward lines (t1 >= t2) put later times on the left, so that

    x(t1) = W(w)[t1:t2] x(t2)   solves   dx/dt = w(t) x.

Reverse lines (t1 < t2) multiply exp(-w h) with earlier times on the left,
which makes W(w)[t1:t2] the inverse of W(w)[t2:t1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, OutOfDomain
from .ode import LinearNodeParams, TimeSeriesField

_THETA = 0.25
_TAYLOR_DEGREE = 12


def expm(A):
    """Matrix exponential of one matrix or a stack of them, shape (..., d, d).

    Scaling and squaring around a degree-12 Taylor kernel: each matrix is
    scaled by 2**-s so its 1-norm is at most 0.25, where the truncation error
    is below 3e-18, then squared s times.
    """
    A = np.asarray(A, dtype=float)
    batch = A.reshape((-1,) + A.shape[-2:])
    d = batch.shape[-1]
    norms = np.abs(batch).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norms, 1e-300) / _THETA))
    s = np.maximum(s, 0).astype(int)
    X = batch / np.ldexp(1.0, s)[:, None, None]

    eye = np.eye(d)
    E = eye + X / _TAYLOR_DEGREE
    for j in range(_TAYLOR_DEGREE - 1, 0, -1):
        E = eye + (X @ E) / j
    for j in range(int(s.max(initial=0))):
        todo = s > j
        E[todo] = E[todo] @ E[todo]
    return E.reshape(A.shape)


@dataclass(frozen=True)
class WilsonLine:
    matrix: np.ndarray
    t1: float
    t2: float

    @property
    def orientation(self):
        return "forward" if self.t1 >= self.t2 else "reverse"


def _breakpoints(grid, ta, tb):
    """ta, every grid node strictly inside (ta, tb), tb; nodes within 1e-9*step snap."""
    tol = 1e-9 * grid.step
    k_lo = int(np.floor((ta + tol) / grid.step)) + 1
    k_hi = int(np.ceil((tb - tol) / grid.step)) - 1
    inner = np.arange(k_lo, k_hi + 1) * grid.step
    ka, kb = grid.node_index(ta), grid.node_index(tb)
    ta = ta if ka is None else ka * grid.step
    tb = tb if kb is None else kb * grid.step
    return np.concatenate(([ta], inner, [tb]))


def _exponents(w: TimeSeriesField, ta, tb, substeps):
    """Midpoint exponents w(t_mid) * h for each sub-interval of [ta, tb], earliest first."""
    if tb <= ta:
        return np.zeros((0,) + w.shape)
    pts = _breakpoints(w.grid, ta, tb)
    if substeps > 1:
        frac = np.arange(substeps) / substeps
        left = (pts[:-1, None] + frac[None, :] * np.diff(pts)[:, None]).ravel()
        pts = np.concatenate((left, [pts[-1]]))
    h = np.diff(pts)
    mid = 0.5 * (pts[:-1] + pts[1:])
    return w.sample(mid) * h[:, None, None]


def ordered_product(factors, later_left=True):
    """Product of a stack of matrices listed earliest first."""
    out = np.eye(factors.shape[-1]) if len(factors) == 0 else factors[0].copy()
    for F in factors[1:]:
        out = F @ out if later_left else out @ F
    return out


def _check_endpoints(w, *ts):
    for t in ts:
        if not (-1e-12 * w.grid.t_end <= t <= w.grid.t_end * (1 + 1e-12)):
            raise OutOfDomain(f"endpoint {t} outside [0, {w.grid.t_end}]")


def wilson_line(w: TimeSeriesField, t1, t2, substeps=1) -> WilsonLine:
    """W(w)[t1:t2]: time-ordered for t1 >= t2, reverse-time-ordered otherwise."""
    t1, t2 = float(t1), float(t2)
    _check_endpoints(w, t1, t2)
    if t1 >= t2:
        E = expm(_exponents(w, t2, t1, substeps))
        M = ordered_product(E, later_left=True)
    else:
        E = expm(-_exponents(w, t1, t2, substeps))
        M = ordered_product(E, later_left=False)
    return WilsonLine(M, t1, t2)


@dataclass(frozen=True)
class InverseReport:
    inverse_residual: float
    b_factor_residual: float
    literal_reading_deviation: float
    tolerance: float

    @property
    def passed(self):
        return self.inverse_residual <= self.tolerance and self.b_factor_residual <= self.tolerance


def wilson_inverse_identity(w: TimeSeriesField, t1, t2, tolerance=1e-9) -> InverseReport:
    """Check that the two orientations of a Wilson line are mutual inverses.

    ``inverse_residual`` is the larger of ||W[t1:t2] W[t2:t1] - I|| and the
    product in the other order.  ``b_factor_residual`` compares the reverse
    line W(w)[lo:hi] with the explicit inverse of W(w)[hi:lo]; that inverse is
    the factor the bias integral of the closed-form solution needs.  The
    notation W(-w)[lo:hi] read literally (exp(-w h) factors with later times on
    the left) only coincides with it for fields commuting at different times;
    ``literal_reading_deviation`` records by how much it misses.
    """
    A = wilson_line(w, t1, t2).matrix
    B = wilson_line(w, t2, t1).matrix
    eye = np.eye(A.shape[0])
    inv_res = max(np.linalg.norm(A @ B - eye), np.linalg.norm(B @ A - eye))

    lo, hi = min(t1, t2), max(t1, t2)
    fwd = wilson_line(w, hi, lo).matrix
    fwd_inv = np.linalg.inv(fwd)
    rev = wilson_line(w, lo, hi).matrix
    literal = ordered_product(expm(-_exponents(w, lo, hi, 1)), later_left=True)
    scale = max(np.linalg.norm(fwd_inv), 1e-300)
    return InverseReport(
        float(inv_res),
        float(np.linalg.norm(rev - fwd_inv) / scale),
        float(np.linalg.norm(literal - fwd_inv) / scale),
        tolerance,
    )


def propagate_affine(params: LinearNodeParams, k0, k1):
    """Propagator and bias integral of the linear node across cells k0..k1-1.

    Returns ``(P, I)`` with P = W(w)[t_k1:t_k0] and
    I = int_{t_k0}^{t_k1} W(w)[t_k0:t'] b(t') dt', so x(t_k1) = P (x(t_k0) + I).
    The integral is composite Simpson on the grid refined by cell midpoints;
    the reverse line to each midpoint uses one extra half-cell exponential.
    """
    w, b, grid = params.w, params.b, params.grid
    d = params.dim
    h = grid.step
    k = np.arange(k0, k1)
    A = w.sample((k + 0.5) * h) * h
    E = expm(A)
    E_inv = expm(-A)
    H_inv = expm(-w.sample((k + 0.25) * h) * (0.5 * h))
    b_nodes = b.values
    b_mid = b.sample((k + 0.5) * h)

    P = np.eye(d)
    Q = np.eye(d)
    integral = np.zeros(d)
    for i, kk in enumerate(k):
        Q_next = Q @ E_inv[i]
        Q_mid = Q @ H_inv[i]
        integral += (h / 6.0) * (Q @ b_nodes[kk] + 4.0 * (Q_mid @ b_mid[i]) + Q_next @ b_nodes[kk + 1])
        Q = Q_next
        P = E[i] @ P
    return P, integral


def linear_solution(params: LinearNodeParams, x0):
    """x(T) = W[T:0] (x0 + int_0^T W[0:t'] b(t') dt')."""
    P, I = propagate_affine(params, 0, params.grid.n_steps)
    x = P @ (np.asarray(x0, dtype=float) + I)
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("closed-form solution is not finite")
    return x


def wilson_gauge_covariance(w: TimeSeriesField, gauge, t1, t2):
    """Relative residual of W(w')[t1:t2] = G(t1)^-1 W(w)[t1:t2] G(t2)."""
    from .gauge import transform_weight

    w_new = transform_weight(w, gauge)
    lhs = wilson_line(w_new, t1, t2).matrix
    W = wilson_line(w, t1, t2).matrix
    rhs = np.linalg.solve(gauge.G(t1), W @ gauge.G(t2))
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(W))
