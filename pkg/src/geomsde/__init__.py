"""Stochastic differential equations on the unit sphere under rotations.

Geometric Euler-Maruyama sampling of prior (spherical Brownian motion) and
posterior (learned drift, power spherical initial law) paths, the path KL
divergence between them, and a small variational fitting engine.
"""

__version__ = "0.1.0"

from ._backend import backend, set_backend, set_threads
from .distributions import (
    PowerSphericalParams,
    kl_power_spherical_to_uniform,
    log_density_power_spherical,
    log_normalizer,
    sample_power_spherical,
    sample_uniform_sphere,
)
from .drift import ChebyshevDrift, chebyshev_values, eval_drift, load_drift, save_drift
from .exceptions import (
    ExtrapolationWarning,
    GeomSDEError,
    InvalidDimensionError,
    InvalidInputError,
    NumericalError,
)
from .kl import KlEstimate, kl_frobenius_bound, kl_integrand_general, kl_integrand_sphere, kl_path_term, kl_total
from .lie import (
    basis_size,
    check_quadratic_membership,
    diffusion_outer_sum,
    expm_action,
    gen_skew_basis,
    matrix_exp,
    pinning_drift,
)
from .sde import (
    NoiseBlock,
    PathSample,
    SolverConfig,
    TimeGrid,
    draw_noise,
    euclidean_em_stroock,
    gem_step,
    sample_one_point_paths,
    sample_posterior_paths,
    sample_prior_paths,
    solve_group_sde,
    strong_convergence_study,
)
