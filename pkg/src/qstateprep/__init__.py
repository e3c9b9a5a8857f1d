"""Single-qubit state preparation under pure dephasing: mean-path and
most-likely-path controls, unravelled trajectory ensembles and success rates."""

__version__ = "0.1.0"

from .bloch import (  # noqa: E402
    GROUND_STATE,
    ControlPulse,
    SystemParams,
    bloch_vector,
    exact_rotation_step,
    fidelity,
    ito_mean_step,
    lindblad_evolve,
    unravelled_step,
)
from .errors import (  # noqa: E402
    ControlCapExceeded,
    DivergentControl,
    DomainError,
    GradientCheckFailed,
    NonPureTarget,
    ResidualExceeded,
    SegmentGridMismatch,
)
from .mlp import (  # noqa: E402
    BoundaryPair,
    MlpControl,
    analytic_path,
    geometric_solve,
    optimal_rabi,
    optimal_time,
    solve_mlp,
    verify_variational_solution,
)
from .trajectories import (  # noqa: E402
    EnsembleResult,
    NoisePath,
    final_state_histogram,
    path_log_likelihood,
    sample_noise,
    simulate_ensemble,
    simulate_trajectory,
    success_rate,
)
