"""Gramian-based feedback stabilization of a truncated bilinear Schrodinger equation.

Modal (sine-basis) realization: dipole couplings, damped and finite-horizon
Gramians, linear and bilinear closed loops, finite-time stage schedules and
minimal-energy steering costs.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AliasingError,
    ConditioningError,
    ContractError,
    DomainError,
    GramstabError,
    IntegratorError,
    PositivityError,
    QuadratureError,
    ScheduleError,
)
from .spectral_core import (  # noqa: E402
    DipoleCoupling,
    SpectralState,
    basis_vector,
    build_coupling,
    ground_state,
    mu_condition_check,
    parse_dipole,
)
from .gramian import build_gramian, lambda_scaling_scan, lyapunov_residual  # noqa: E402
from .feedback_loop import certify_decay, costate_oracle, simulate_linear  # noqa: E402
from .bilinear_sim import NonlinearRunConfig, basin_probe, simulate_bilinear  # noqa: E402
from .finite_time import build_schedule, simulate_finite_time, stage_bound_audit  # noqa: E402
from .control_cost import (  # noqa: E402
    SteeringProblem,
    cost_scaling_experiment,
    finite_horizon_gramian,
    min_energy_control,
)

__all__ = [
    "AliasingError",
    "ConditioningError",
    "ContractError",
    "DomainError",
    "GramstabError",
    "IntegratorError",
    "PositivityError",
    "QuadratureError",
    "ScheduleError",
    "DipoleCoupling",
    "SpectralState",
    "basis_vector",
    "build_coupling",
    "ground_state",
    "mu_condition_check",
    "parse_dipole",
    "build_gramian",
    "lambda_scaling_scan",
    "lyapunov_residual",
    "certify_decay",
    "costate_oracle",
    "simulate_linear",
    "NonlinearRunConfig",
    "basin_probe",
    "simulate_bilinear",
    "build_schedule",
    "simulate_finite_time",
    "stage_bound_audit",
    "SteeringProblem",
    "cost_scaling_experiment",
    "finite_horizon_gramian",
    "min_energy_control",
]
