import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import random_unit
from geomsde.distributions import (
    PowerSphericalParams,
    householder_to,
    kl_power_spherical_to_uniform,
    log_density_power_spherical,
    log_normalizer,
    log_sphere_area,
    power_spherical_from_uniforms,
    sample_power_spherical,
    sample_uniform_sphere,
    tangent_basis,
)
from geomsde.exceptions import InvalidDimensionError, InvalidInputError

N_MC = 100_000


def t_marginal_integral(n, kappa, g=lambda t: 1.0):
    """int_{-1}^{1} g(t) (1+t)^kappa (1-t^2)^{(n-3)/2} dt by adaptive quadrature."""
    a = 0.5 * (n - 3)
    val, _ = integrate.quad(lambda t: g(t) * (1 + t) ** kappa, -1, 1, weight="alg", wvar=(a, a), epsabs=0, epsrel=1e-11, limit=200)
    return val


def moment_zscores(z):
    """Max |z-score| of E[Z] = 0 and E[ZZ^T] = I/n entries."""
    n = z.shape[1]
    mean = z.mean(axis=0)
    se = z.std(axis=0, ddof=1) / np.sqrt(len(z))
    outer = np.einsum("pi,pj->pij", z, z)
    m2 = outer.mean(axis=0)
    se2 = outer.std(axis=0, ddof=1) / np.sqrt(len(z))
    return max(np.max(np.abs(mean) / se), np.max(np.abs(m2 - np.eye(n) / n) / se2))


class TestSphereArea:
    @pytest.mark.parametrize("n,area", [(1, 2.0), (2, 2 * np.pi), (3, 4 * np.pi), (4, 2 * np.pi**2), (5, 8 * np.pi**2 / 3)])
    def test_closed_forms(self, n, area):
        assert log_sphere_area(n) == pytest.approx(np.log(area), abs=1e-14)


class TestUniform:
    def test_rejects_n1(self):
        with pytest.raises(InvalidDimensionError):
            sample_uniform_sphere(1, 5, 0)

    def test_moments_n3(self):
        z = sample_uniform_sphere(3, N_MC, 11)
        assert np.max(np.abs(np.linalg.norm(z, axis=1) - 1)) <= 1e-12
        assert np.linalg.norm(z.mean(axis=0)) <= 4 / np.sqrt(N_MC * 3)
        assert moment_zscores(z) < 4

    def test_angles_n2(self):
        z = sample_uniform_sphere(2, N_MC, 12)
        counts, _ = np.histogram(np.arctan2(z[:, 1], z[:, 0]) % (2 * np.pi), bins=36, range=(0, 2 * np.pi))
        chi2 = np.sum((counts - N_MC / 36) ** 2 / (N_MC / 36))
        assert chi2 < stats.chi2.ppf(0.999, 35)

    def test_seeded(self):
        np.testing.assert_array_equal(sample_uniform_sphere(4, 10, 5), sample_uniform_sphere(4, 10, 5))


class TestParams:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            PowerSphericalParams([1.0, 0.0, 0.0], -1.0)
        with pytest.raises(InvalidInputError):
            PowerSphericalParams([1.0, 1.0, 0.0], 1.0)
        with pytest.raises(InvalidDimensionError):
            PowerSphericalParams([1.0], 1.0)

    def test_from_unnormalized(self):
        p = PowerSphericalParams.from_unnormalized([0.0, 3.0, 4.0], 2.0)
        np.testing.assert_allclose(p.mu, [0.0, 0.6, 0.8])

    def test_mean_cosine_quadrature(self):
        for n, kappa in [(3, 50.0), (5, 3.0), (16, 7.5)]:
            expect = t_marginal_integral(n, kappa, lambda t: t) / t_marginal_integral(n, kappa)
            assert PowerSphericalParams(np.eye(n)[0], kappa).mean_cosine() == pytest.approx(expect, rel=1e-10)


class TestHouseholder:
    def test_identity_at_e1(self):
        y = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_array_equal(householder_to(np.eye(3)[0], y), y)

    def test_maps_e1(self):
        mu = random_unit(np.random.default_rng(1), 5)
        np.testing.assert_allclose(householder_to(mu, np.eye(5)[0]), mu, atol=1e-15)

    def test_tangent_basis(self):
        mu = random_unit(np.random.default_rng(2), 4)
        T = tangent_basis(mu)
        np.testing.assert_allclose(T @ T.T, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(T @ mu, 0, atol=1e-14)


class TestPowerSphericalSampler:
    def test_kappa_zero_is_uniform(self):
        mu = random_unit(np.random.default_rng(3), 3)
        z = sample_power_spherical(PowerSphericalParams(mu, 0.0), N_MC, 13)
        assert moment_zscores(z) < 4

    def test_mean_cosine_k50(self):
        p = PowerSphericalParams(np.eye(3)[0], 50.0)
        c = sample_power_spherical(p, N_MC, 14) @ p.mu
        assert p.mean_cosine() == pytest.approx(50 / 52)
        assert abs(c.mean() - 50 / 52) <= 4 * c.std(ddof=1) / np.sqrt(N_MC)

    @given(st.floats(0, 1e4), st.integers(2, 12), st.integers(0, 2**31))
    def test_unit_norm(self, kappa, n, seed):
        rng = np.random.default_rng(seed)
        z = sample_power_spherical(PowerSphericalParams(random_unit(rng, n), kappa), 64, rng)
        assert np.max(np.abs(np.linalg.norm(z, axis=1) - 1)) <= 1e-12

    def test_reparameterised_matches_sampler(self):
        rng = np.random.default_rng(15)
        p = PowerSphericalParams(random_unit(rng, 4), 6.0)
        a = power_spherical_from_uniforms(p, rng.random(N_MC), rng.standard_normal((N_MC, 3)))
        b = sample_power_spherical(p, N_MC, rng)
        ca, cb = a @ p.mu, b @ p.mu
        z = (ca.mean() - cb.mean()) / np.sqrt(ca.var() / N_MC + cb.var() / N_MC)
        assert abs(z) < 4

    def test_seeded(self):
        p = PowerSphericalParams(np.eye(3)[1], 4.0)
        np.testing.assert_array_equal(sample_power_spherical(p, 20, 3), sample_power_spherical(p, 20, 3))


class TestLogDensity:
    def test_uniform_s2(self):
        z = random_unit(np.random.default_rng(4), 3, 10)
        np.testing.assert_allclose(log_density_power_spherical(PowerSphericalParams(np.eye(3)[0], 0.0), z), -np.log(4 * np.pi))

    def test_antipode(self):
        p = PowerSphericalParams(np.eye(3)[0], 2.0)
        assert log_density_power_spherical(p, -np.eye(3)[0]) == -np.inf

    def test_non_unit(self):
        with pytest.raises(InvalidInputError):
            log_density_power_spherical(PowerSphericalParams(np.eye(3)[0], 1.0), np.ones(3))

    @pytest.mark.parametrize("kappa", [0.0, 1.0, 10.0, 100.0])
    @pytest.mark.parametrize("n", [2, 3, 8, 16])
    def test_normalizer_quadrature(self, n, kappa):
        oracle = log_sphere_area(n - 1) + np.log(t_marginal_integral(n, kappa))
        assert abs(log_normalizer(n, kappa) - oracle) <= 1e-8

    @pytest.mark.parametrize("kappa", [2.0, 100.0])
    def test_normalisation_by_uniform_sampling(self, kappa):
        n = 3
        p = PowerSphericalParams(np.eye(n)[0], kappa)
        u = sample_uniform_sphere(n, N_MC, 16)
        w = np.exp(log_density_power_spherical(p, u) + log_sphere_area(n))
        assert abs(w.mean() - 1) <= 4 * w.std(ddof=1) / np.sqrt(N_MC)

    @given(st.floats(0, 500), st.integers(2, 10), st.integers(0, 2**31))
    def test_rotation_equivariance(self, kappa, n, seed):
        rng = np.random.default_rng(seed)
        R, _ = np.linalg.qr(rng.standard_normal((n, n)))
        mu = random_unit(rng, n)
        z = random_unit(rng, n, 8)
        a = log_density_power_spherical(PowerSphericalParams(mu, kappa), z)
        Rmu = R @ mu
        b = log_density_power_spherical(PowerSphericalParams(Rmu / np.linalg.norm(Rmu), kappa), z @ R.T)
        finite = np.isfinite(a)
        np.testing.assert_allclose(a[finite], b[finite], atol=1e-12 * max(1.0, kappa) * 10)


class TestKlToUniform:
    def test_kappa_zero(self):
        assert kl_power_spherical_to_uniform(PowerSphericalParams(np.eye(3)[0], 0.0), 10, 0) == (0.0, 0.0)

    def test_needs_two_samples(self):
        with pytest.raises(InvalidInputError):
            kl_power_spherical_to_uniform(PowerSphericalParams(np.eye(3)[0], 1.0), 1, 0)

    def test_quadrature(self):
        n, kappa = 3, 10.0
        log_c = log_normalizer(n, kappa)
        area = log_sphere_area(n - 1)
        integrand = lambda t: (kappa * np.log1p(t) - log_c + np.log(4 * np.pi)) * np.exp(area - log_c)
        oracle = t_marginal_integral(n, kappa, integrand)
        est, se = kl_power_spherical_to_uniform(PowerSphericalParams(np.eye(n)[0], kappa), N_MC, 17)
        assert abs(est - oracle) <= 4 * se

    def test_monotone_in_kappa(self):
        lo, se_lo = kl_power_spherical_to_uniform(PowerSphericalParams(np.eye(3)[0], 2.0), 20_000, 18)
        hi, se_hi = kl_power_spherical_to_uniform(PowerSphericalParams(np.eye(3)[0], 20.0), 20_000, 19)
        assert hi - lo > 4 * np.hypot(se_lo, se_hi)
