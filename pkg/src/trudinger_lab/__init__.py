"""Numerical laboratory for the doubly nonlinear equation d_t(u^{p-1}) = Δ_p u in one space dimension."""

from .barrier import (
    BarrierSpec,
    barrier_time_holder,
    eval_lower,
    eval_upper,
    make_barrier,
    rho,
    supersolution_residual,
)
from .energy import (
    build_cutoff,
    caccioppoli_check,
    caccioppoli_uniformity,
    cauchy_gradient_diagnostic,
    monte_carlo_battery,
    vector_inequality_check,
)
from .grid import (
    Cylinder,
    GridFunction,
    ModulusOfContinuity,
    SpaceTimeGrid,
    optimal_modulus,
    oscillation,
    read_grid_function,
    write_grid_function,
)
from .infconv import (
    InfConvolution,
    InfConvParams,
    augmented_weak_check,
    check_penalty_bounds,
    elementary_inequality_check,
    error_model,
    inf_convolve,
    jet_extract,
    semiconcavity_check,
)
from .metrology import (
    PhiProfile,
    PsiSpec,
    RegularityMeter,
    certify_phi,
    combined_constant,
    holder_constant,
    lipschitz_constant,
    minimal_L_certificate,
    psi_max,
    time_holder_constant,
)
from .solver import Params, SolverConfig, TrudingerSolver, comparison_check, solve, step_implicit, weak_residual

__version__ = "0.1.0"
