"""
Gauge fixing while training
===========================

The data loss cannot tell gauge-equivalent parameters apart, so its gradient
has no component along gauge orbits.  A uniform-motion regularizer breaks
the tie and pulls training toward one representative.
"""
import numpy as np

from gauge_lab import TimeGrid
from gauge_lab import gauge_fixing as gf
from gauge_lab.samples import smooth_params

rng = np.random.default_rng(5)
grid = TimeGrid(1.0, 1024)
params = smooth_params(rng, 2).on(grid)
data = gf.Dataset(rng.standard_normal((5, 2)), rng.standard_normal((5, 2)))

tangent = gf.orbit_tangent(params, gf.GaugeGenerator.random(rng, grid, 2))
grad = gf.adjoint_gradient(params, data)
print("cos(loss gradient, orbit tangent):", gf.normalized_inner(grad, tangent))
print("regularizer slope along the orbit:", gf.directional_derivative(gf.regularizer, params, tangent))

###############################################################################
# Paired runs from the same start, with and without the regularizer.
X = rng.standard_normal((8, 2))
data = gf.Dataset(X, X @ (np.eye(2) + 0.5 * rng.standard_normal((2, 2))).T + 0.3)
tcfg = gf.TrainConfig(learning_rate=3.0, iterations=100, seed=0, gradient="adjoint")
p0 = gf.init_params(TimeGrid(1.0, 32), 2, tcfg)
for strength in (0.0, 1e-3):
    run = gf.train(p0, data, tcfg, gf.RegularizerConfig(strength))
    print(f"strength {strength:g}: loss {run.loss[-1]:.3e}  regularizer {run.regularizer[-1]:.4f}")
