"""KL divergence between posterior and prior path measures on S^{n-1}.

With equal diffusion scales the divergence is an initial-law term plus

    1/(2 sigma^2) * int_0^T E_{q_t}[ ||K(t) Z_t||^2 ] dt,

estimated here by averaging over posterior sample paths and integrating in
time with the trapezoidal rule on the solver grid.
"""

import json
from dataclasses import dataclass

import numpy as np

from .distributions import kl_power_spherical_to_uniform
from .exceptions import InvalidInputError, NumericalError
from .rng import make_rng
from .sde import sample_posterior_paths

PINV_RCOND = 1e-10

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class KlEstimate:
    init_term: float
    path_term: float
    standard_error: float
    method: str = "monte_carlo"

    @property
    def total(self):
        return self.init_term + self.path_term

    def to_dict(self):
        return {"init_term": self.init_term, "path_term": self.path_term, "se": self.standard_error, "method": self.method}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["init_term"]), float(data["path_term"]), float(data["se"]), data["method"])


def kl_integrand_sphere(K_t, z, sigma):
    """``||K_t z||^2 / sigma^2``; ``z`` may be one vector or rows of vectors."""
    Kz = np.asarray(z, dtype=float) @ np.asarray(K_t, dtype=float).T
    return np.sum(Kz * Kz, axis=-1) / sigma**2


def kl_integrand_general(f_z, g_z, basis, z):
    """``(f - g)^T Sigma^+(z) (f - g)`` with ``Sigma(z) = sum_i V_i z z^T V_i^T``.

    The pseudo-inverse is taken by SVD, discarding singular values below
    ``1e-10`` times the largest.
    """
    delta = np.asarray(f_z, dtype=float) - np.asarray(g_z, dtype=float)
    Vz = np.einsum("mij,j->mi", np.asarray(basis, dtype=float), np.asarray(z, dtype=float))
    sigma_z = Vz.T @ Vz
    try:
        pinv = np.linalg.pinv(sigma_z, rcond=PINV_RCOND, hermitian=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of the diffusion matrix failed at z={z}: {exc}") from exc
    return float(delta @ pinv @ delta)


def path_integrals(drift_values, states, times, sigma):
    """Per-path ``1/2 int ||K(t) z_t||^2 / sigma^2 dt`` by the trapezoidal rule.

    ``drift_values`` is ``(T, n, n)`` aligned with ``times``; ``states`` is
    ``(count, T, n)``.
    """
    Kz = np.einsum("tij,ptj->pti", drift_values, states)
    integrand = 0.5 * np.sum(Kz * Kz, axis=-1) / sigma**2
    return _trapezoid(integrand, times, axis=1)


def kl_path_term(drift, config, posterior_paths):
    """Monte Carlo path term from paths sampled under the same posterior."""
    states = posterior_paths.states
    if states.shape[0] == 0:
        raise InvalidInputError("need at least one posterior path")
    times = posterior_paths.times
    per_path = path_integrals(drift.on_grid(times), states, times, config.sigma)
    count = per_path.size
    se = float(per_path.std(ddof=1) / np.sqrt(count)) if count > 1 else float("inf")
    return KlEstimate(0.0, float(per_path.mean()), se, "monte_carlo")


def kl_frobenius_bound(drift, config):
    """``1/(2 sigma^2) int ||K(t)||_F^2 dt``, an upper bound on the path term."""
    times = config.grid.times
    K = drift.on_grid(times)
    sq = np.sum(K * K, axis=(1, 2))
    integral = _trapezoid(sq, times)
    return float(0.5 * integral / config.sigma**2)


def kl_total(init, drift, config, path_count, init_mc_count=None, rng=None, method="monte_carlo"):
    """Initial-law KL plus path KL for a posterior with the config's sigma.

    ``method`` is ``"monte_carlo"`` (path samples) or ``"frobenius_bound"``.
    Standard errors of the two Monte Carlo terms add in quadrature.
    """
    rng = make_rng(config.seed if rng is None else rng)
    init_mc_count = path_count if init_mc_count is None else init_mc_count
    init_kl, init_se = kl_power_spherical_to_uniform(init, init_mc_count, rng)
    if method == "frobenius_bound":
        return KlEstimate(init_kl, kl_frobenius_bound(drift, config), init_se, method)
    if method != "monte_carlo":
        raise InvalidInputError(f"unknown KL method {method!r}")
    paths = sample_posterior_paths(init, drift, config, path_count, rng=rng)
    path = kl_path_term(drift, config, paths)
    return KlEstimate(init_kl, path.path_term, float(np.hypot(init_se, path.standard_error)), method)
