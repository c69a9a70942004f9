"""hklab: a desk-scale laboratory for chain metrics, scale functions,
weighted gasket Dirichlet forms, and heat-kernel estimate fitting."""

from .numerics import NumericalFailure
from .scale_calculus import (
    Certificate,
    ScaleFunction,
    certify_doubling,
    apply_chain_transform,
    invert_chain_transform,
    composed_beta_bounds,
    PhiReport,
    phi_from_scales,
    VariationalSupResult,
    variational_sup,
    MinimaxWindow,
    minimax_window,
)
from .chain_metric import (
    FiniteMetricSpace,
    ChainProfile,
    RhoFit,
    SandwichReport,
    chain_distance,
    chain_profile,
    fit_rho_exponent,
    check_transform_sandwich,
    solve_epsilon_star,
    space_from_csv,
    space_to_csv,
)
from .gasket import (
    GasketParams,
    GasketGraph,
    CornerChainGrowth,
    solve_renormalization,
    moran_exponents,
    build_gasket,
    effective_resistance,
    resistance_matrix,
    lattice_spacing,
    sample_interior_pairs,
    lift_pairs,
    corner_chain_growth,
    corner_resistance_report,
)
from .heat_lab import (
    DirichletOperator,
    HeatKernelGrid,
    local_generator,
    jump_generator,
    heat_kernel,
    ball_volume,
    markov_checks,
    valid_time_window,
    exit_time,
    calibrate_time_scale,
    nle_statistic,
    ondiagonal_slope,
)
from .estimate_verifier import (
    BoundSpec,
    MetricMeasureModel,
    SampleWindow,
    ComparabilityReport,
    CrossoverTable,
    evaluate_bound,
    fit_envelope,
    crossover_analysis,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
