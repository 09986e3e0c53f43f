"""Stochastic 2D Navier-Stokes with horizontal-only viscosity on the torus.

Spectral discretization, convection forms, noise models, time integrators,
the moderate-deviation rate function and Monte Carlo experiments.
"""

from .dynamics import (
    BlowUpError,
    DeviationScale,
    DynamicsError,
    IntegratorConfig,
    SkeletonOperator,
    TrajectoryRecord,
    energy_report,
    integrate_clt_limit,
    integrate_controlled,
    integrate_deterministic,
    integrate_primal,
    integrate_scaled,
    integrate_skeleton,
    moment_report,
    weighted_report,
)
from .forms import commutator_diagnostic, nonlinear_term, trilinear
from .noise import NoiseModel, WienerPath, make_noise_model, sigma_apply, sigma_hs_norm
from .ratefn import (
    ControlPath,
    RateOptions,
    RateResult,
    control_cost,
    level_set_probe,
    rate_function,
    rate_gradient,
    tail_rate_infimum,
)
from .spectral import (
    Grid,
    LittlewoodPaleyPartition,
    SpectralField,
    aniso_norm,
    dyadic_partition,
    load_fields,
    lp_block,
    lp_norm,
    mode_field,
    project_leray,
    random_field,
    save_fields,
)

__version__ = "0.1.0"
