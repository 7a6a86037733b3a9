"""chronolab: a numerical laboratory for timeless quantum mechanics.

Solves the joint time-independent Schroedinger equation of a system+clock
composite on a grid, factorizes the joint eigenfunction exactly into marginal
and conditional amplitudes, solves the coupled pseudoeigenvalue equations
self-consistently, and quantifies how the time-dependent Schroedinger
equation emerges in the classical-clock limit.
"""

__version__ = "0.1.0"

from .lattice import Axis, ProductGrid, PotentialSpec, CompositeHamiltonian, build_hamiltonian
from .spectral import JointEigenstate, solve_eigenpairs, select_state
from .factorization import (
    FactorizedState,
    DensityReport,
    factorize,
    reconstruct,
    gauge_shift,
    canonical,
    density_report,
    conditional_expectation,
    effective_clock_potential,
    mean_clock_momentum,
)
from .coupled_scf import (
    CoupledResiduals,
    ScfConfig,
    ScfResult,
    residual_support,
    marginal_residual,
    conditional_residual,
    extract_multipliers,
    scf_solve,
    scf_sweep,
)
from .clockwork import (
    ClockModel,
    ClassicalTrajectory,
    TickSchedule,
    ClockQuality,
    marginal_ansatz,
    wkb_ansatz_harmonic,
    classical_trajectory,
    tick_schedule,
    discrete_kinetic_energy,
    discrete_group_velocity,
    clock_quality,
)
from .emergence import (
    ConditionalTimeSlice,
    GaugeFactor,
    EmergenceReport,
    slice_conditional,
    directional_derivative_2d,
    chain_rule_fields,
    gauge_to_tdse_frame,
    tdse_propagate,
    emergence_compare,
    mass_scaling_fit,
)
from .config import Scenario, load_config, build_scenario, physics_issues
from .runner import RunManifest, run, validate

__all__ = [
    "Axis",
    "ProductGrid",
    "PotentialSpec",
    "CompositeHamiltonian",
    "build_hamiltonian",
    "JointEigenstate",
    "solve_eigenpairs",
    "select_state",
    "FactorizedState",
    "DensityReport",
    "factorize",
    "reconstruct",
    "gauge_shift",
    "canonical",
    "density_report",
    "conditional_expectation",
    "effective_clock_potential",
    "mean_clock_momentum",
    "CoupledResiduals",
    "ScfConfig",
    "ScfResult",
    "residual_support",
    "marginal_residual",
    "conditional_residual",
    "extract_multipliers",
    "scf_solve",
    "scf_sweep",
    "ClockModel",
    "ClassicalTrajectory",
    "TickSchedule",
    "ClockQuality",
    "marginal_ansatz",
    "wkb_ansatz_harmonic",
    "classical_trajectory",
    "tick_schedule",
    "discrete_kinetic_energy",
    "discrete_group_velocity",
    "clock_quality",
    "ConditionalTimeSlice",
    "GaugeFactor",
    "EmergenceReport",
    "slice_conditional",
    "directional_derivative_2d",
    "chain_rule_fields",
    "gauge_to_tdse_frame",
    "tdse_propagate",
    "emergence_compare",
    "mass_scaling_fit",
    "Scenario",
    "load_config",
    "build_scenario",
    "physics_issues",
    "RunManifest",
    "run",
    "validate",
    "__version__",
]
