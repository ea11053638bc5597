"""
From ODE to residual network and back
=====================================

Cutting the time axis into N slabs turns a linear neural ODE into an N-layer
linear network.  A layerwise gauge on the network lifts to a smooth gauge on
the ODE, and the two orders of operations agree as the grid is refined.
"""
import numpy as np

from gauge_lab import TimeGrid
from gauge_lab.nets import (
    DiscreteGauge,
    ReluNet,
    apply_discrete_gauge,
    commuting_diagram_check,
    discretize,
    forward_linear,
    forward_relu,
    rescale_relu,
)
from gauge_lab.samples import smooth_params

rng = np.random.default_rng(3)
sp = smooth_params(rng, 2)
dg = DiscreteGauge.random(rng, depth=4, dim=2, amplitude=0.15, shift=0.15)

net = discretize(sp.on(TimeGrid(1.0, 1024)), 4)
x0 = np.array([0.5, -1.0])
print("network output        :", forward_linear(net, x0))
print("after the layer gauge :", forward_linear(apply_discrete_gauge(net, dg), x0))

###############################################################################
# Discretize-then-gauge versus lift-gauge-then-discretize.
for n in (256, 512, 1024, 2048):
    report = commuting_diagram_check(sp.on(TimeGrid(1.0, n)), dg)
    print(f"{n:5d} steps  worst layer gap {report.max_layer_dev:.2e}  output gap {report.io_dev:.2e}")

###############################################################################
# ReLU networks keep a smaller symmetry: positive per-unit rescalings.
relu_net = ReluNet.random(rng, depth=4, dim=3)
alphas = np.exp(rng.uniform(np.log(0.1), np.log(10.0), (3, 3)))
x = rng.standard_normal(3)
print("relu output           :", forward_relu(relu_net, x))
print("rescaled relu output  :", forward_relu(rescale_relu(relu_net, alphas), x))
