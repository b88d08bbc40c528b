"""Order-k stochastic duals of one-dimensional Markov generators."""

from .duality import (
    AnalyticDual,
    DualGeneratorResult,
    FOperator,
    build_f_operator,
    check_monotone_order_k,
    check_self_dual,
    dual_diffusion_analytic,
    dual_jump_analytic,
    dual_matrix,
    dual_spec,
    intertwining_residual,
    local_coefficients,
)
from .errors import KDualityError
from .evolution import Propagator, dual_propagator, dual_semigroup_check, transition
from .expr import differentiate, evaluate, parse, serialize
from .fractional import FracOrder, Grid, GridFn
from .model import (
    DensityJump,
    GeneratorMatrix,
    GeneratorSpec,
    NoJump,
    StableLike,
    SymmetricStable,
    discretize,
)
from .montecarlo import PathConfig, duality_mc_report, simulate
from .options import putcall_symmetry_report, spread_symmetry_report, straddle_selfsymmetry_report

__version__ = "0.1.0"
