"""Electrical-machine models derived from magnetic Lagrangians with complex currents."""
from .dynamics import (
    ConstantVoltage,
    DriveInput,
    MachineState,
    PiecewiseVoltage,
    SinusoidalVoltage,
    Trajectory,
    flux,
    flux_state_simulate,
    mass_matrix,
    rhs,
    simulate,
    torque,
    zero_state,
)
from .energy import magnetic_energy, power_balance_audit
from .models import (
    KINDS,
    Harmonic,
    ImParams,
    MagneticLagrangianModel,
    PmParams,
    SaturationCurve,
    default_model,
    saturation_eval,
)
from .observability import (
    linearize,
    numerical_rank,
    observability_matrix,
    steady_state_solve,
    verify_prop1,
    zero_freq_steady_family,
)
from .wirtinger import DomainError, real_gradient, wirtinger_from_real

__all__ = [
    "KINDS",
    "ConstantVoltage",
    "DomainError",
    "DriveInput",
    "Harmonic",
    "ImParams",
    "MachineState",
    "MagneticLagrangianModel",
    "PiecewiseVoltage",
    "PmParams",
    "SaturationCurve",
    "SinusoidalVoltage",
    "Trajectory",
    "default_model",
    "flux",
    "flux_state_simulate",
    "linearize",
    "magnetic_energy",
    "mass_matrix",
    "numerical_rank",
    "observability_matrix",
    "power_balance_audit",
    "real_gradient",
    "rhs",
    "saturation_eval",
    "simulate",
    "steady_state_solve",
    "torque",
    "verify_prop1",
    "wirtinger_from_real",
    "zero_freq_steady_family",
    "zero_state",
]
