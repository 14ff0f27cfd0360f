"""Entanglement of two optically looped nanoparticles.

Two levitated nanoparticles exchange light through a one-way transmission
loop of transmittance eta and phase theta.  The package models the joint
normal modes that the loop creates, the transient entanglement reachable by
parking the system in a dynamically unstable phase window, the steady
entanglement available from continuous optimal measurement, and the
retrodiction protocol that certifies the state from measurement records.
"""

from .conditional import (
    ConditionalMap,
    MeasurementSettings,
    conditional_joint_state,
    conditional_witness_map,
    effective_efficiency,
    imprecision_backaction_correlator,
    measurement_settings,
    optimal_angle,
    signal_gain,
)
from .errors import (
    DegenerateAngleError,
    NonPhysicalStateError,
    NumericalError,
    UnstableModeError,
)
from .gaussian import (
    BASIS_SWAP,
    SYMPLECTIC_FORM,
    Basis,
    EllipseSummary,
    TwoModeState,
    basis_change,
    ellipse_summary,
    log_negativity,
    nu_min,
    symplectic_eigenvalues,
    vacuum_state,
    wiener_block,
    wiener_initial_state,
    witness_from_joint_cov,
)
from .model import (
    LoopCoefficients,
    ModePair,
    ModeSpectrum,
    NoiseCorrelations,
    StabilityBand,
    SystemParams,
    delay_validity,
    input_noise_correlations,
    loop_coefficients,
    mode_spectrum,
    stability_boundary,
)
from .transient import (
    NegativityMap,
    OptimalWitness,
    TransientConfig,
    WitnessSeries,
    coherent_cov,
    evolve,
    flow_matrix,
    incoherent_cov,
    lyapunov_oracle,
    negativity_map,
    optimal_negativity,
    squeezing_angle,
    wiener_sigma0_policy,
    witness_series,
)
from .verify import (
    BootstrapInterval,
    EnsembleEstimate,
    MeasurementModel,
    RetrodictionReport,
    RiccatiSolution,
    SimulationBatch,
    SystematicBudget,
    TrajectoryRecord,
    VerifyConfig,
    bootstrap_ci,
    build_measurement_model,
    ensemble_estimate,
    retrodict,
    riccati_retrodiction,
    simulate_ensemble,
    simulate_trajectory,
    systematic_error,
    trajectory_stream,
    verify_experiment,
    witness_statistic,
)

__version__ = "0.1.0"

__all__ = [
    "BASIS_SWAP",
    "Basis",
    "BootstrapInterval",
    "ConditionalMap",
    "DegenerateAngleError",
    "EllipseSummary",
    "EnsembleEstimate",
    "LoopCoefficients",
    "MeasurementModel",
    "MeasurementSettings",
    "ModePair",
    "ModeSpectrum",
    "NegativityMap",
    "NoiseCorrelations",
    "NonPhysicalStateError",
    "NumericalError",
    "OptimalWitness",
    "RetrodictionReport",
    "RiccatiSolution",
    "SimulationBatch",
    "StabilityBand",
    "SYMPLECTIC_FORM",
    "SystemParams",
    "SystematicBudget",
    "TrajectoryRecord",
    "TransientConfig",
    "TwoModeState",
    "UnstableModeError",
    "VerifyConfig",
    "WitnessSeries",
    "basis_change",
    "bootstrap_ci",
    "build_measurement_model",
    "coherent_cov",
    "conditional_joint_state",
    "conditional_witness_map",
    "delay_validity",
    "effective_efficiency",
    "ellipse_summary",
    "ensemble_estimate",
    "evolve",
    "flow_matrix",
    "imprecision_backaction_correlator",
    "incoherent_cov",
    "input_noise_correlations",
    "log_negativity",
    "loop_coefficients",
    "lyapunov_oracle",
    "measurement_settings",
    "mode_spectrum",
    "negativity_map",
    "nu_min",
    "optimal_angle",
    "optimal_negativity",
    "retrodict",
    "riccati_retrodiction",
    "signal_gain",
    "simulate_ensemble",
    "simulate_trajectory",
    "squeezing_angle",
    "stability_boundary",
    "symplectic_eigenvalues",
    "systematic_error",
    "trajectory_stream",
    "vacuum_state",
    "verify_experiment",
    "wiener_block",
    "witness_from_joint_cov",
    "wiener_initial_state",
    "wiener_sigma0_policy",
    "witness_series",
    "witness_statistic",
]
