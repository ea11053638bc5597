"""Self-attention, its rescaling gauge, and its origin in a kicked neural ODE.

A linear node whose Wilson line around [0, T] is the identity, interrupted
at t0 by an instantaneous cubic kick

    x -> x + m * lam x (x^T lam_tilde x),

integrates to x + SA(x) for a single attention layer with identity
activation.  The kick is evaluated on the pre-kick state, which makes the
correspondence exact rather than first order in m.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConstraintViolation,
    GridMismatch,
    HolonomyViolation,
    OutOfDomain,
    ShapeError,
    SingularGauge,
)
from .gauge import MAX_CONDITION, GaugeTransformLinear, transform_weight
from .ode import TimeGrid, TimeSeriesField, _rk4
from .wilson import wilson_line

ACTIVATIONS = ("identity", "relu", "softmax")
HOLONOMY_TOL = 1e-6


def _softmax_rows(s):
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


_PHI = {
    "identity": lambda s: s,
    "relu": lambda s: np.maximum(s, 0.0),
    "softmax": _softmax_rows,
}


def _square(M, name, d=None):
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or (d is not None and M.shape[0] != d):
        raise ShapeError(f"{name} must be a {d or 'd'}x{d or 'd'} matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class AttentionLayer:
    """Row-vector convention: h_I = sum_J phi((x_I Wq) . (x_J Wk)) x_J Wv.

    Scores are raw dot products, neither scaled by 1/sqrt(d) nor normalized
    over J, except for the softmax activation, which normalizes over J and
    is kept as a symmetry-breaking reference.
    """

    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        Wq = _square(self.Wq, "Wq")
        d = Wq.shape[0]
        object.__setattr__(self, "Wq", Wq)
        object.__setattr__(self, "Wk", _square(self.Wk, "Wk", d))
        object.__setattr__(self, "Wv", _square(self.Wv, "Wv", d))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def dim(self):
        return self.Wq.shape[0]

    @classmethod
    def random(cls, rng, dim, activation="identity", scale=1.0):
        W = scale * rng.standard_normal((3, dim, dim)) / np.sqrt(dim)
        return cls(W[0], W[1], W[2], activation)


def self_attention(layer: AttentionLayer, X):
    """Attention output for n tokens stacked as rows of X (a single d-vector is one token)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.ndim != 2 or X2.shape[1] != layer.dim:
        raise ShapeError(f"tokens must have {layer.dim} features, got shape {X.shape}")
    scores = (X2 @ layer.Wq) @ (X2 @ layer.Wk).T
    H = _PHI[layer.activation](scores) @ (X2 @ layer.Wv)
    return H[0] if single else H


@dataclass(frozen=True)
class AttentionGauge:
    """(A, B, alpha) with A B = alpha I."""

    A: np.ndarray
    B: np.ndarray
    alpha: float = 1.0
    tolerance: float = 1e-12

    def __post_init__(self):
        A = _square(self.A, "A")
        B = _square(self.B, "B", A.shape[0])
        if not self.alpha > 0:
            raise ConstraintViolation(f"alpha must be positive, got {self.alpha}")
        if np.linalg.cond(A) > MAX_CONDITION:
            raise SingularGauge("A is numerically singular")
        defect = np.abs(A @ B - self.alpha * np.eye(A.shape[0])).max()
        if defect > self.tolerance * max(1.0, self.alpha):
            raise ConstraintViolation(f"A B differs from alpha I by {defect:.3e}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def from_A(cls, A, alpha=1.0):
        A = np.asarray(A, dtype=float)
        B = alpha * np.linalg.inv(A)
        # the inverse is good to ~cond(A) ulps; check against that, not 1e-12
        tol = max(1e-12, 64 * np.finfo(float).eps * np.linalg.cond(A))
        return cls(A, B, alpha, tol)


def apply_attention_gauge(layer: AttentionLayer, gauge: AttentionGauge, check_activation=True):
    """Wq -> Wq A, Wk -> Wk B^T, Wv -> Wv / alpha.

    Only identity and ReLU activations are positively homogeneous, so only
    they keep the output unchanged.  Pass ``check_activation=False`` to
    transform a softmax layer anyway, for example to see the symmetry fail.
    """
    if gauge.A.shape[0] != layer.dim:
        raise ShapeError(f"gauge acts on dimension {gauge.A.shape[0]}, layer has {layer.dim}")
    if check_activation and layer.activation == "softmax":
        raise ValueError("softmax attention has no rescaling symmetry")
    return replace(layer, Wq=layer.Wq @ gauge.A, Wk=layer.Wk @ gauge.B.T, Wv=layer.Wv / gauge.alpha)


def gauge_fix_qk(layer: AttentionLayer):
    """The combined query-key matrix Wq Wk^T; only it enters the scores."""
    return layer.Wq @ layer.Wk.T


# --- kicked neural ODE -------------------------------------------------------


@dataclass(frozen=True)
class InstantaneousCubic:
    """Kick at t0 with strength ``magnitude``: dx = m lam x (x^T lam_tilde x)."""

    t0: float
    lam: np.ndarray
    lam_tilde: np.ndarray
    magnitude: float

    def __post_init__(self):
        lam = _square(self.lam, "lam")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "lam_tilde", _square(self.lam_tilde, "lam_tilde", lam.shape[0]))
        if not self.t0 > 0:
            raise OutOfDomain(f"kick time must be positive, got {self.t0}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "magnitude", float(self.magnitude))

    @property
    def dim(self):
        return self.lam.shape[0]

    def increment(self, Y):
        """Kick increment for tokens stacked as rows of Y.

        Token I receives m sum_J lam y_J (y_I^T lam_tilde y_J).
        """
        scores = Y @ self.lam_tilde @ Y.T
        return self.magnitude * scores @ (Y @ self.lam.T)


def build_w_with_unit_holonomy(grid: TimeGrid, M) -> TimeSeriesField:
    """w = M before T/2 and -M after, so W[T:0] = exp(-M T/2) exp(M T/2) = I.

    With piecewise-linear interpolation the jump has to sit on a node or
    inside one cell; the node at T/2 (when there is one) carries 0.  Either
    way the midpoint exponents of the two halves are exact negatives of each
    other, so the ordered product cancels to rounding.
    """
    M = _square(M, "M")
    k = np.arange(grid.n_steps + 1)
    sign = np.sign(grid.n_steps - 2 * k).astype(float)
    return TimeSeriesField(grid, sign[:, None, None] * M)


def _kick_node(w: TimeSeriesField, kick: InstantaneousCubic):
    grid = w.grid
    k0 = grid.node_index(kick.t0)
    if k0 is None:
        raise GridMismatch(f"kick time {kick.t0} is not a grid node (step {grid.step})")
    if not 0 < k0 < grid.n_steps:
        raise OutOfDomain(f"kick time {kick.t0} must lie strictly inside (0, {grid.t_end})")
    if w.shape != (kick.dim, kick.dim):
        raise ShapeError(f"field has shape {w.shape}, kick acts on dimension {kick.dim}")
    return k0 * grid.step


def _tokens(x0, dim):
    X = np.asarray(x0, dtype=float)
    X2 = np.atleast_2d(X)
    if X2.ndim != 2 or X2.shape[1] != dim:
        raise ShapeError(f"expected a {dim}-vector or an n x {dim} token matrix, got {X.shape}")
    return X, X2


def integrate_cubic_node(w: TimeSeriesField, kick: InstantaneousCubic, x0):
    """Linear flow to t0, pre-kick cubic jump, linear flow to T.

    ``x0`` is one d-vector or n tokens as rows of an n x d matrix; each token
    flows independently and the kick couples them.
    """
    t0 = _kick_node(w, kick)
    X, Y = _tokens(x0, kick.dim)
    before = wilson_line(w, t0, 0.0).matrix
    after = wilson_line(w, w.grid.t_end, t0).matrix
    Y = Y @ before.T
    Y = Y + kick.increment(Y)
    out = Y @ after.T
    return out[0] if X.ndim == 1 else out


def bump(t, t0, sigma):
    """Raised-cosine pulse of unit area supported on |t - t0| < sigma."""
    u = (np.asarray(t, dtype=float) - t0) / sigma
    return np.where(np.abs(u) < 1.0, (1.0 + np.cos(np.pi * u)) / (2.0 * sigma), 0.0)


def integrate_smoothed_cubic(w: TimeSeriesField, kick: InstantaneousCubic, x0, sigma):
    """RK4 for dx/dt = w x + m bump(t - t0) lam x (x^T lam_tilde x).

    The delta is spread over a pulse of half-width ``sigma``, which should
    span several grid cells.  Comparing with :func:`integrate_cubic_node`
    exposes the O(m^2) ambiguity of evaluating the kick at a single state.
    """
    grid = w.grid
    if not (sigma > 0 and kick.t0 - sigma >= 0 and kick.t0 + sigma <= grid.t_end):
        raise OutOfDomain(f"pulse [t0 - sigma, t0 + sigma] must lie in [0, {grid.t_end}]")
    X, Y = _tokens(x0, kick.dim)

    def force(t, Y):
        return Y @ w(t).T + bump(t, kick.t0, sigma) * kick.increment(Y)

    out = _rk4(force, Y, grid)[-1]
    return out[0] if X.ndim == 1 else out


def holonomy_defect(w: TimeSeriesField):
    W = wilson_line(w, w.grid.t_end, 0.0).matrix
    return float(np.linalg.norm(W - np.eye(W.shape[0])))


def build_attention_from_node(w: TimeSeriesField, kick: InstantaneousCubic) -> AttentionLayer:
    """Identity-activation layer with x + SA(x) equal to the kicked node's output.

    Wq = W[t0:0]^T, Wk = (lam_tilde W[t0:0])^T and
    Wv = m (W[0:t0] lam W[t0:0])^T; the magnitude sits in Wv.
    """
    t0 = _kick_node(w, kick)
    defect = holonomy_defect(w)
    if defect > HOLONOMY_TOL:
        raise HolonomyViolation(f"||W[T:0] - I|| = {defect:.3e} exceeds {HOLONOMY_TOL}")
    U = wilson_line(w, t0, 0.0).matrix
    U_back = wilson_line(w, 0.0, t0).matrix
    return AttentionLayer(
        U.T,
        (kick.lam_tilde @ U).T,
        kick.magnitude * (U_back @ kick.lam @ U).T,
        "identity",
    )


@dataclass(frozen=True)
class InducedGaugeReport:
    weight_residual: float
    alpha_residual: float
    tolerance: float

    @property
    def passed(self):
        return self.weight_residual <= self.tolerance and self.alpha_residual <= 1e-12


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def verify_diffeo_induces_attention_gauge(
    w: TimeSeriesField,
    kick: InstantaneousCubic,
    gauge: GaugeTransformLinear,
    alpha=7.0,
    inputs=None,
    tolerance=1e-6,
):
    """Check that a linear change of frame x = G(t) y acts on the built layer as a gauge.

    In the new frame the field is G^-1 w G - G^-1 G' and the kick tensors
    become G^-1 lam G and G^T lam_tilde G at t0.  The rebuilt layer should
    equal the original one transformed with A = G(t0)^-T, B = G(t0)^T and
    alpha = 1; ``weight_residual`` is the largest relative Frobenius gap
    over Wq, Wk, Wv.  Only G is used: a shift c would turn the cubic kick
    into a polynomial with lower-order terms.

    ``alpha_residual`` checks the remaining freedom lam -> lam / alpha,
    lam_tilde -> alpha lam_tilde on the output of the built layer, over
    ``inputs`` (ten seeded probes by default).
    """
    t0 = _kick_node(w, kick)
    layer = build_attention_from_node(w, kick)

    G0 = gauge.G(t0)
    kick_new = replace(
        kick,
        lam=np.linalg.solve(G0, kick.lam @ G0),
        lam_tilde=G0.T @ kick.lam_tilde @ G0,
    )
    rebuilt = build_attention_from_node(transform_weight(w, gauge), kick_new)
    expected = apply_attention_gauge(layer, AttentionGauge.from_A(np.linalg.inv(G0).T))
    weight_res = max(
        _rel(getattr(rebuilt, name), getattr(expected, name)) for name in ("Wq", "Wk", "Wv")
    )

    scaled = build_attention_from_node(
        w, replace(kick, lam=kick.lam / alpha, lam_tilde=alpha * kick.lam_tilde)
    )
    if inputs is None:
        inputs = np.random.default_rng(0).standard_normal((10, kick.dim))
    alpha_res = max(
        _rel(self_attention(scaled, x), self_attention(layer, x)) for x in np.atleast_2d(inputs)
    )
    return InducedGaugeReport(weight_res, alpha_res, tolerance)


def kick_tensor(kick: InstantaneousCubic, n_tokens):
    """The kick as one rank-4 tensor on the flattened (token, feature) space.

    Entry [(I,i), (J,j), (K,k), (L,l)] is lam[i,j] lam_tilde[k,l] when K == I
    and L == J, else 0; flattened index is I * d + i.  Dense, so only for
    small d * n.
    """
    d = kick.dim
    eye = np.eye(n_tokens)
    T = np.einsum("ij,kl,IK,JL->IiJjKkLl", kick.lam, kick.lam_tilde, eye, eye)
    D = d * n_tokens
    return T.reshape(D, D, D, D)


def contract_kick_tensor(tensor, Y, magnitude):
    """m * Lambda[a, b, c, e] y_b y_c y_e for tokens stacked as rows of Y."""
    y = np.asarray(Y, dtype=float).ravel()
    return magnitude * np.einsum("abce,b,c,e->a", tensor, y, y, y).reshape(np.shape(Y))
