"""Finite-temperature Nelson stochastic mechanics for the harmonic oscillator.

The package integrates the paired forward/backward stochastic equations of
the doubled (non-tilde, tilde) configuration space, provides the closed-form
thermal equilibrium as an oracle, and checks field equations and Monte Carlo
statistics against it.
"""

__version__ = "0.1.0"

from .core import (
    GridConvergenceError,
    InsufficientSamplesError,
    PathDivergedError,
    PhysicalParams,
    ThermalPoint,
    coth_half,
    csch_half,
    nondimensionalize,
    partition_function,
    thermal_occupation,
)
from .analytic import (
    EquilibriumSolution,
    StationaryCovariance,
    drift_eq,
    marginal_density,
    momentum_halfdiff_variance,
    r_eq,
    r_eq_gradient,
    stationary_covariance,
    uncertainty_product,
)
from .rng import WienerStream, wiener_increment
from .sde import (
    DriftSet,
    Ensemble,
    EnsembleConfig,
    Path,
    classical_noise_rate,
    inverse_transform,
    replay_path,
    sample_stationary,
    simulate_ensemble,
    simulate_transformed,
    step_backward_group,
    step_forward_group,
    step_transformed,
    transform_coordinates,
    transformed_noise_rate,
)
from .stats import (
    Histogram,
    MomentEstimates,
    UncertaintyReport,
    distribution_test,
    marginal_histogram,
    moment_estimates,
    uncertainty_estimate,
)
from .fields import (
    Grid,
    ScalarField2D,
    VelocityFields,
    continuity_residual,
    dynamical_residual,
    equilibrium_fields,
    fokker_planck_residual,
    kinematical_residual,
    mean_derivative_check,
    osmotic_residual,
    velocities_from_rs,
)
