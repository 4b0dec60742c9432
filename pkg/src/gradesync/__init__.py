"""Clock synchronization protocols, closed-form analysis, and a deterministic simulator."""

from .analysis import (
    McEstimate,
    ProtocolComparison,
    SystemParams,
    compare_protocols,
    estimate_variance_mc,
    grades_eigenvalues,
    grades_steady_state,
    grades_variance,
    pisync_eigenvalues,
    pisync_steady_state,
    pisync_variance,
    rate_error_path,
    stability_bound,
)
from .clocks import (
    ConstantDrift,
    GaussianDelay,
    HardwareClock,
    LogicalClock,
    PiecewiseDrift,
    WhiteDrift,
)
from .errors import ContractViolation, InvalidRegimeError
from .protocols import (
    GRADES,
    PISYNC,
    PROTOCOLS,
    GradesState,
    PisyncState,
    SyncMessage,
    adapt_step,
    compute_error,
    error_gradient,
    grades_on_message,
    on_beacon_tick,
    pisync_on_message,
    step_size_limit,
)
from .sim import (
    SimConfig,
    SkewTrace,
    SyncEvent,
    Topology,
    convergence_time,
    fit_power_exponent,
    global_skew,
    run,
    scaling_experiment,
    write_skew_csv,
    write_trace_csv,
)

__version__ = "0.1.0"
