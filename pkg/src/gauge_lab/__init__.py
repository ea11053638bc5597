"""Gauge symmetries of neural ODEs, their discretizations and self-attention.

Submodules: ``ode`` (grids, fields, RK4), ``wilson`` (ordered exponentials,
closed-form linear solution), ``gauge`` (finite and infinitesimal gauge
transformations), ``nets`` (discrete networks and rescalings), ``attention``
(self-attention and the kicked node), ``gauge_fixing`` (regularizer and
training), ``samples`` (seeded smooth test objects) and ``cli``.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConstraintViolation,
    Divergence,
    GaugeLabError,
    GridMismatch,
    HolonomyViolation,
    NonFiniteState,
    NonPositiveAlpha,
    OutOfDomain,
    ShapeError,
    SingularGauge,
    StructureError,
)
from .ode import (  # noqa: E402
    GenericNode,
    LinearNodeParams,
    SpacetimeNode,
    TimeGrid,
    TimeSeriesField,
    Trajectory,
    integrate,
    integrate_linear,
    integrate_spacetime,
    lift_to_spacetime,
)
from .wilson import expm, linear_solution, wilson_gauge_covariance, wilson_line  # noqa: E402
from .gauge import (  # noqa: E402
    DiffeoGenerator,
    GaugeTransformLinear,
    apply_linear_gauge,
    lie_deform,
    spatial_diffeo_deform,
    time_reparam_deform,
    verify_invariance,
)
