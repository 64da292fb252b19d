"""Volterra-equation battery models and PV/diesel microgrid dispatch."""

from .errors import (
    BracketError,
    ConfigurationError,
    ConstraintError,
    GridMismatchError,
    HypothesisViolation,
    IngestError,
    KernelEvaluationError,
    NonConvergenceError,
    SingularKernelError,
    SolverError,
    UnitMismatchError,
)
from .microgrid import MetricsReport, MicrogridConfig, SimulationResult, compare_models, simulate
from .series import KW, KWH, KW_PER_H, Grid, SampledSeries
from .storage import BatteryParams, count_cycles, project_constraints, volterra_soc_solve
from .vie import (
    AlphaSearchOpts,
    KernelSegment,
    PiecewiseKernel,
    Solution,
    SolverOpts,
    check_theorem1_condition,
    forward_apply,
    residual_norm,
    select_alpha_discrepancy,
    solve_vie_first_kind,
    solve_vie_lavrentiev,
)

__version__ = "0.1.0"
