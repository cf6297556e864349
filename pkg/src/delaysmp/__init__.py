"""Stochastic maximum principle for controlled delay equations, at desk scale.

Forward Euler-Maruyama simulation of delay SDEs with measure-weighted past
dependence, spike variations, anticipated adjoint BSDEs by regression, the
second-order kernel by representation and by an operator-valued backward
recursion, and checkers for the variational inequality and the cost expansion.
"""
from .absde import (
    AdjointSolution,
    ConditioningError,
    DualityReport,
    RegressionConfig,
    RegressionConfigError,
    duality_residual_first,
    duality_residual_second,
    solve_absde,
)
from .hilbert import (
    HilbertPoint,
    NumericalHealthError,
    PipelineError,
    assemble_operators,
    extract_p00,
    lift,
    shift_adjoint,
    shift_semigroup,
    solve_first_adjoint_h,
    solve_second_adjoint_h,
)
from .kernel import CoverageError, SecondOrderKernel
from .measures import (
    AlignmentError,
    DelayMeasure,
    PastSegment,
    ShapeError,
    dirac,
    exponential,
    mollify,
    node_masses,
    past_integral,
    total_variation,
    uniform,
)
from .model import (
    SCENARIOS,
    ControlPath,
    EvaluationError,
    ProblemSpec,
    build_scenario,
    scenario_lq_delay,
    scenario_pointwise,
    scenario_portfolio,
    scenario_tracking,
    validate_hypotheses,
)
from .paths import BrownianBundle, GridError, TimeGrid, coarsen, make_grid, sample_brownian
from .sdde import (
    ConsistencyError,
    DivergenceError,
    SpikeWindow,
    TrajectoryBundle,
    cost,
    simulate_first_variation,
    simulate_linearized,
    simulate_regularized_variations,
    simulate_second_variation,
    simulate_state,
    spike,
)
from .smp import (
    SMPReport,
    check_variational_inequality,
    cost_expansion_check,
    hamiltonian,
    p00_convergence_study,
    p00_kernel,
    p00_matrix,
    p00_quadratic_form,
)

__version__ = "0.1.0"
