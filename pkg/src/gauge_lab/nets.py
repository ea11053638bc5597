"""Discrete networks and their rescaling gauges.

Linear feedforward nets are tied to linear neural ODEs by integrating the
ODE across each layer's time slice (rather than finite-differencing it); the
discrete gauge G_n, c_n then lifts to a continuous one with G(n L) = G_n.
ReLU MLPs and single-channel CNNs carry the positive rescaling symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    GridMismatch,
    NonPositiveAlpha,
    ShapeError,
    SingularGauge,
    StructureError,
)
from .gauge import MAX_CONDITION, GaugeTransformLinear, apply_linear_gauge, probe_inputs
from .ode import LinearNodeParams, TimeGrid, TimeSeriesField
from .wilson import propagate_affine


def _stack(arrs, ndim):
    out = np.array(arrs, dtype=float)
    if out.ndim != ndim:
        raise ShapeError(f"expected a stack of {ndim - 1}-d arrays, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class FeedforwardLinearNet:
    """x(n+1) = weights[n] x(n) + biases[n], n = 0..N-1."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        W, b = _stack(self.weights, 3), _stack(self.biases, 2)
        N, d = b.shape
        if N < 1 or W.shape != (N, d, d):
            raise ShapeError(f"need N >= 1 layers of dxd weights; got {W.shape} and {b.shape}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def depth(self):
        return len(self.biases)

    @property
    def dim(self):
        return self.biases.shape[1]


def forward_linear(net: FeedforwardLinearNet, x0):
    x = np.asarray(x0, dtype=float)
    for W, b in zip(net.weights, net.biases):
        x = W @ x + b
    return x


def closed_form_output(net: FeedforwardLinearNet, x0):
    """x(N) = (w_{N-1} ... w_0) (x(0) + sum_m (w_m ... w_0)^-1 b_m).

    The product is time ordered, later layers on the left; it is the only
    ordering that solves the layer recursion.
    """
    d = net.dim
    P = np.eye(d)
    acc = np.asarray(x0, dtype=float).copy()
    for W, b in zip(net.weights, net.biases):
        P = W @ P
        acc = acc + np.linalg.solve(P, b)
    return P @ acc


@dataclass(frozen=True)
class DiscreteGauge:
    """Layerwise gauge G_n, c_n, n = 0..N, with G_0 = G_N = I and c_0 = c_N = 0."""

    G: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        G, c = _stack(self.G, 3), _stack(self.c, 2)
        n1, d = c.shape
        if n1 < 2 or G.shape != (n1, d, d):
            raise ShapeError(f"need N+1 >= 2 gauge matrices; got {G.shape} and {c.shape}")
        eye = np.eye(d)
        if not (np.array_equal(G[0], eye) and np.array_equal(G[-1], eye)):
            raise ValueError("G_0 and G_N must equal the identity exactly")
        if np.any(c[0] != 0) or np.any(c[-1] != 0):
            raise ValueError("c_0 and c_N must vanish exactly")
        cond = np.linalg.cond(G)
        if not np.all(cond <= MAX_CONDITION):
            raise SingularGauge(f"G_{int(np.argmax(cond))} is numerically singular")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "c", c)

    @property
    def depth(self):
        return len(self.c) - 1

    @property
    def dim(self):
        return self.c.shape[1]

    @classmethod
    def identity(cls, depth, dim):
        return cls(np.broadcast_to(np.eye(dim), (depth + 1, dim, dim)), np.zeros((depth + 1, dim)))

    @classmethod
    def random(cls, rng, depth, dim, amplitude=0.3, shift=0.3):
        G = np.eye(dim) + amplitude * rng.standard_normal((depth + 1, dim, dim)) / np.sqrt(dim)
        c = shift * rng.standard_normal((depth + 1, dim))
        G[0] = G[-1] = np.eye(dim)
        c[0] = c[-1] = 0.0
        return cls(G, c)


def apply_discrete_gauge(net: FeedforwardLinearNet, gauge: DiscreteGauge) -> FeedforwardLinearNet:
    """w_n -> G_{n+1}^-1 w_n G_n,  b_n -> G_{n+1}^-1 (b_n + w_n c_n - c_{n+1})."""
    if gauge.depth != net.depth or gauge.dim != net.dim:
        raise ShapeError(
            f"gauge has depth {gauge.depth}, dim {gauge.dim}; net has {net.depth}, {net.dim}"
        )
    G, c = gauge.G, gauge.c
    W, b = net.weights, net.biases
    W_new = np.linalg.solve(G[1:], W @ G[:-1])
    rhs = b + np.einsum("nij,nj->ni", W, c[:-1]) - c[1:]
    b_new = np.linalg.solve(G[1:], rhs[..., None])[..., 0]
    return FeedforwardLinearNet(W_new, b_new)


def _cells_per_layer(grid: TimeGrid, depth):
    if depth < 1 or grid.n_steps % depth:
        raise GridMismatch(f"{grid.n_steps} grid steps cannot be split into {depth} layers")
    return grid.n_steps // depth


def discretize(params: LinearNodeParams, depth) -> FeedforwardLinearNet:
    """Integrate the linear node across each of ``depth`` equal time slices.

    Layer n gets the slice's Wilson line as weight and that line applied to
    the slice's bias integral as bias, so the net reproduces x(T) exactly up
    to the Wilson-line and quadrature error.
    """
    m = _cells_per_layer(params.grid, depth)
    W, b = [], []
    for n in range(depth):
        P, I = propagate_affine(params, n * m, (n + 1) * m)
        W.append(P)
        b.append(P @ I)
    return FeedforwardLinearNet(np.array(W), np.array(b))


def lift_gauge(gauge: DiscreteGauge, grid: TimeGrid) -> GaugeTransformLinear:
    """Continuous gauge through the layer knots with flat joins.

    Between knots n L and (n+1) L the gauge is (1 - s) G_n + s G_{n+1} with
    the quintic smoothstep s = 10 tau^3 - 15 tau^4 + 6 tau^5.  Knot values,
    including the identity ends, are reproduced exactly, and both G' and G''
    vanish at every knot.  The vanishing second derivative keeps the per-layer
    quadrature error of the transformed field from piling up at the knots;
    the cubic smoothstep leaves an O(step^2) residue there.
    """
    N = gauge.depth
    m = _cells_per_layer(grid, N)
    k = np.arange(grid.n_steps + 1)
    n = np.minimum(k // m, N - 1)
    tau = (k - n * m) / m
    s = (tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau))[:, None]
    ds = (30.0 * (tau * (1.0 - tau)) ** 2 / (m * grid.step))[:, None]

    G0, G1, c0, c1 = gauge.G[n], gauge.G[n + 1], gauge.c[n], gauge.c[n + 1]
    G = (1.0 - s[..., None]) * G0 + s[..., None] * G1
    c = (1.0 - s) * c0 + s * c1
    f = lambda v: TimeSeriesField(grid, v)
    return GaugeTransformLinear(f(G), f(c), f(ds[..., None] * (G1 - G0)), f(ds * (c1 - c0)))


@dataclass
class DiagramReport:
    weight_dev: np.ndarray
    bias_dev: np.ndarray
    io_dev: float

    @property
    def max_weight_dev(self):
        return float(self.weight_dev.max())

    @property
    def max_bias_dev(self):
        return float(self.bias_dev.max())

    @property
    def max_layer_dev(self):
        return max(self.max_weight_dev, self.max_bias_dev)


def commuting_diagram_check(params: LinearNodeParams, gauge: DiscreteGauge, depth=None, inputs=None):
    """Compare the two routes from NODE_A to NN_B.

    Route 1 discretizes then applies the discrete gauge; route 2 lifts the
    gauge, transforms the ODE and then discretizes.  Deviations are max-abs
    per layer; ``io_dev`` is the largest output difference over ``inputs``
    (ten seeded normal probes by default).
    """
    depth = gauge.depth if depth is None else depth
    if depth != gauge.depth:
        raise ShapeError(f"gauge depth {gauge.depth} differs from requested {depth}")
    net_1 = apply_discrete_gauge(discretize(params, depth), gauge)
    net_2 = discretize(apply_linear_gauge(params, lift_gauge(gauge, params.grid)), depth)
    wdev = np.abs(net_1.weights - net_2.weights).max(axis=(1, 2))
    bdev = np.abs(net_1.biases - net_2.biases).max(axis=1)
    inputs = probe_inputs(params.dim) if inputs is None else np.atleast_2d(inputs)
    io = max(float(np.abs(forward_linear(net_1, x) - forward_linear(net_2, x)).max()) for x in inputs)
    return DiagramReport(wdev, bdev, io)


# --- ReLU networks -----------------------------------------------------------


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class ReluNet:
    """x(n+1) = ReLU(weights[n] x(n) + biases[n]); every layer has width d."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        W, b = _stack(self.weights, 3), _stack(self.biases, 2)
        L, d = b.shape
        if L < 1 or W.shape != (L, d, d):
            raise ShapeError(f"need equal-width square layers; got {W.shape} and {b.shape}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def depth(self):
        return len(self.biases)

    @classmethod
    def random(cls, rng, depth, dim, scale=1.0):
        W = scale * rng.standard_normal((depth, dim, dim)) / np.sqrt(dim)
        return cls(W, 0.5 * scale * rng.standard_normal((depth, dim)))


def forward_relu(net: ReluNet, x):
    x = np.asarray(x, dtype=float)
    for W, b in zip(net.weights, net.biases):
        x = relu(W @ x + b)
    return x


@dataclass(frozen=True)
class RescaleParams:
    """Positive scale per hidden unit: alphas[n][j] acts on unit j of layer n+1's input."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float)
        if a.ndim != 2:
            raise ShapeError(f"alphas must be (depth-1, d), got shape {a.shape}")
        if not np.all(a > 0):
            raise NonPositiveAlpha("rescaling factors must be strictly positive")
        object.__setattr__(self, "alphas", a)


def rescale_relu(net: ReluNet, alpha: Union[RescaleParams, np.ndarray]) -> ReluNet:
    """Scale rows of w^(n), b^(n) by alpha and columns of w^(n+1) by 1/alpha."""
    if not isinstance(alpha, RescaleParams):
        alpha = RescaleParams(alpha)
    a = alpha.alphas
    if a.shape != (net.depth - 1, net.biases.shape[1]):
        raise ShapeError(f"alphas shape {a.shape}, expected {(net.depth - 1, net.biases.shape[1])}")
    W, b = net.weights.copy(), net.biases.copy()
    for n, an in enumerate(a):
        W[n] *= an[:, None]
        b[n] *= an
        W[n + 1] /= an[None, :]
    return ReluNet(W, b)


# --- convolutional networks -------------------------------------------------


@dataclass(frozen=True)
class Conv:
    """Valid-mode, stride-1, bias-free single-channel convolution followed by ReLU."""

    filter: np.ndarray

    def __post_init__(self):
        h = np.array(self.filter, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 1:
            raise ShapeError(f"filter must be a non-empty f x f matrix, got {h.shape}")
        object.__setattr__(self, "filter", h)


@dataclass(frozen=True)
class Pool:
    """L_s pooling over non-overlapping windows; s = inf is max pooling."""

    s: float = 1.0
    window: tuple = (2, 2)

    def __post_init__(self):
        if not self.s >= 1:
            raise ValueError(f"pooling exponent must satisfy 1 <= s <= inf, got {self.s}")
        if len(self.window) != 2 or min(self.window) < 1:
            raise ShapeError(f"pool window must be two positive ints, got {self.window}")


@dataclass(frozen=True)
class ConvNet:
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def conv_indices(self):
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv)]


def conv2d_valid(x, h):
    if h.shape[0] > x.shape[0] or h.shape[1] > x.shape[1]:
        raise ShapeError(f"filter {h.shape} larger than input {x.shape}")
    return np.einsum("ijpq,pq->ij", sliding_window_view(x, h.shape), h)


def lp_pool(y, s, window):
    p, q = window
    H, W = y.shape
    if H % p or W % q:
        raise ShapeError(f"pool window {window} does not tile a {y.shape} input")
    blocks = y.reshape(H // p, p, W // q, q)
    if np.isinf(s):
        return blocks.max(axis=(1, 3))
    if s == 1:
        return blocks.mean(axis=(1, 3))
    return np.mean(blocks ** s, axis=(1, 3)) ** (1.0 / s)


def forward_conv(net: ConvNet, image):
    x = np.asarray(image, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"image must be 2-D, got shape {x.shape}")
    for layer in net.layers:
        if isinstance(layer, Conv):
            x = relu(conv2d_valid(x, layer.filter))
        else:
            x = lp_pool(x, layer.s, layer.window)
    return x


def rescale_conv(net: ConvNet, alphas: Union[float, Sequence[float]]) -> ConvNet:
    """h^(n) -> alpha_n h^(n), next conv filter -> h / alpha_n; pools pass through.

    ``alphas`` holds one factor per conv layer that has a downstream conv
    layer (K - 1 values for K conv layers).  A K-th entry is accepted only if
    it equals 1, since nothing downstream can absorb it.
    """
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    convs = net.conv_indices
    K = len(convs)
    if len(a) == K and K > 0:
        if a[-1] != 1.0:
            raise StructureError("the last conv layer has no downstream conv layer to absorb alpha")
        a = a[:-1]
    if len(a) != max(K - 1, 0):
        raise StructureError(f"{len(a)} rescaling factors for {K} conv layers")
    if not np.all(a > 0):
        raise NonPositiveAlpha("rescaling factors must be strictly positive")

    layers = list(net.layers)
    for n, idx in enumerate(convs):
        h = layers[idx].filter
        if n < K - 1:
            h = h * a[n]
        if n > 0:
            h = h / a[n - 1]
        layers[idx] = Conv(h)
    return ConvNet(tuple(layers))
