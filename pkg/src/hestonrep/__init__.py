"""Monte Carlo and finite-difference solvers for degenerate boundary value
and obstacle problems driven by the Heston process."""

__version__ = "0.1.0"

from .errors import (
    HestonRepError, ParameterError, GrowthViolation, QuadratureError,
    SolverError, StepCapExceeded, ConfigError,
)
from .model import (
    HestonParams, FellerIndices, GrowthBound, BoundaryKind,
    feller_indices, classify_boundary, validate_growth, apply_generator,
    hitting_probability, expected_exit_time,
)
from .geometry import (
    Domain, Rectangle, HalfPlane, StoppingRule, BoundaryConditionMode,
    PointClass, classify_point, default_boundary_mode, stopping_equivalence,
)
from .sde import Scheme, PathConfig, PathState, simulate_path
from .problems import ProblemData, ParabolicProblem, Estimate
from .estimators import (
    MCSettings, estimate_elliptic_bvp, estimate_parabolic_bvp,
    evaluate_J_e, evaluate_J_p,
)
from .stopping import (
    TimeSlabGrid, StoppingPolicy, value_obstacle_parabolic,
    value_obstacle_elliptic, continuation_region, validate_slab_length,
)
from .fourier import european_call, european_put
