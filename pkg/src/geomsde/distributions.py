"""Distributions on the unit sphere S^{n-1} in R^n.

The uniform distribution is the prior on the initial latent state; the power
spherical distribution, with density proportional to ``(1 + mu^T z)**kappa``
with respect to surface measure, is the variational initial law.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import InvalidDimensionError, InvalidInputError
from .rng import make_rng

KAPPA_MAX = 1e6


def log_sphere_area(n):
    """Log surface area of S^{n-1} in R^n, ``log(2 pi^{n/2} / Gamma(n/2))``."""
    if n < 1:
        raise InvalidDimensionError(f"sphere dimension needs n >= 1, got {n}")
    return float(np.log(2.0) + 0.5 * n * np.log(np.pi) - special.gammaln(0.5 * n))


@dataclass(frozen=True)
class PowerSphericalParams:
    """Location ``mu`` (unit vector) and concentration ``kappa >= 0``."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size < 2:
            raise InvalidDimensionError(f"mu must have dimension n >= 2, got {mu.size}")
        if not np.all(np.isfinite(mu)) or abs(np.linalg.norm(mu) - 1.0) > 1e-10:
            raise InvalidInputError(f"mu must be a unit vector (norm {np.linalg.norm(mu):.12g})")
        kappa = float(self.kappa)
        if not np.isfinite(kappa) or kappa < 0:
            raise InvalidInputError(f"kappa must be a finite nonnegative number, got {kappa}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n(self):
        return self.mu.size

    @classmethod
    def from_unnormalized(cls, loc, kappa):
        loc = np.asarray(loc, dtype=float)
        return cls(loc / np.linalg.norm(loc), kappa)

    def beta_params(self):
        beta = 0.5 * (self.n - 1)
        return self.kappa + beta, beta

    def mean_cosine(self):
        """``E[mu^T Z]``, i.e. the mean of ``2u - 1`` for the Beta marginal ``u``."""
        a, b = self.beta_params()
        return 2.0 * a / (a + b) - 1.0


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def sample_uniform_sphere(n, count, rng=None):
    """``count`` points uniform on S^{n-1}, shape ``(count, n)``."""
    if n < 2:
        raise InvalidDimensionError(f"dimension must satisfy n >= 2, got n={n}")
    rng = make_rng(rng)
    return _unit_rows(rng.standard_normal((count, n)))


def _sample_beta(a, b, count, rng):
    # Beta(a, b) as a ratio of Gamma draws.
    x = rng.gamma(a, size=count)
    y = rng.gamma(b, size=count)
    return x / (x + y)


def householder_to(mu, y):
    """Apply the reflection mapping ``e_1`` to ``mu`` to the rows of ``y``.

    When ``mu`` is within 1e-12 of ``e_1`` the identity is used.
    """
    mu = np.asarray(mu, dtype=float)
    u = -mu.copy()
    u[0] += 1.0
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        return np.array(y, dtype=float, copy=True)
    u /= norm
    return y - 2.0 * np.outer(y @ u, u) if y.ndim == 2 else y - 2.0 * (y @ u) * u


def tangent_basis(mu):
    """Orthonormal basis of the tangent space at ``mu``, shape ``(n - 1, n)``.

    These are the images of ``e_2, ..., e_n`` under :func:`householder_to`, so
    the frame varies smoothly with ``mu`` away from ``-e_1``.
    """
    n = len(mu)
    return householder_to(mu, np.eye(n)[1:])


def power_spherical_transform(params, u, v):
    """Deterministic map from base randomness to power spherical samples.

    ``u`` holds Beta(kappa + (n-1)/2, (n-1)/2) variates (or, via
    :func:`power_spherical_from_uniforms`, their uniform preimages) and ``v``
    points on S^{n-2} with shape ``(count, n - 1)``.
    """
    u = np.asarray(u, dtype=float)
    t = 2.0 * u - 1.0
    y = np.concatenate([t[:, None], np.sqrt(np.clip(1.0 - t * t, 0.0, None))[:, None] * v], axis=1)
    return householder_to(params.mu, y)


def power_spherical_from_uniforms(params, uniforms, normals):
    """Reparameterised sampler: inverse-CDF Beta of ``uniforms`` and normalised ``normals``.

    Smooth in ``(mu, kappa)`` for fixed base draws, which the finite-difference
    gradients in :mod:`geomsde.fitting` rely on.
    """
    a, b = params.beta_params()
    u = special.betaincinv(a, b, np.asarray(uniforms, dtype=float))
    return power_spherical_transform(params, u, _unit_rows(np.asarray(normals, dtype=float)))


def sample_power_spherical(params, count, rng=None):
    """Draw ``count`` samples, shape ``(count, n)``."""
    rng = make_rng(rng)
    n = params.n
    a, b = params.beta_params()
    u = _sample_beta(a, b, count, rng)
    v = _unit_rows(rng.standard_normal((count, n - 1)))
    return power_spherical_transform(params, u, v)


def log_normalizer(n, kappa):
    """Log of ``int_{S^{n-1}} (1 + mu^T z)^kappa dz``.

    Uses ``int_{-1}^{1} (1+t)^k (1-t^2)^{(n-3)/2} dt = 2^{k+n-2} B(k+(n-1)/2, (n-1)/2)``
    times the area of S^{n-2}.
    """
    if kappa == 0:
        return log_sphere_area(n)
    beta = 0.5 * (n - 1)
    alpha = kappa + beta
    log_beta_fn = special.gammaln(alpha) + special.gammaln(beta) - special.gammaln(alpha + beta)
    return float(log_sphere_area(n - 1) + (kappa + n - 2) * np.log(2.0) + log_beta_fn)


def log_density_power_spherical(params, z):
    """Log density at ``z`` (one point ``(n,)`` or rows ``(count, n)``).

    Returns ``-inf`` at the antipode ``-mu`` when ``kappa > 0``.
    """
    z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(z, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise InvalidInputError("log_density_power_spherical needs unit vectors")
    log_c = log_normalizer(params.n, params.kappa)
    if params.kappa == 0:
        return np.full(z.shape[:-1], -log_c) if z.ndim > 1 else -log_c
    cos = np.clip(z @ params.mu, -1.0, 1.0)
    with np.errstate(divide="ignore"):
        out = params.kappa * np.log1p(cos) - log_c
    return out if z.ndim > 1 else float(out)


def kl_power_spherical_to_uniform(params, mc_count, rng=None):
    """Monte Carlo ``KL(PS || Uniform)``; returns ``(estimate, standard_error)``."""
    if mc_count < 2:
        raise InvalidInputError("mc_count must be at least 2")
    if params.kappa == 0:
        return 0.0, 0.0
    z = sample_power_spherical(params, mc_count, rng)
    diff = log_density_power_spherical(params, z) + log_sphere_area(params.n)
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(mc_count))
