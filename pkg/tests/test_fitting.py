import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_skew, random_unit
from geomsde.drift import ChebyshevDrift
from geomsde.exceptions import InvalidDimensionError, InvalidInputError, NumericalError
from geomsde.fitting import (
    AdamState,
    DecoderParams,
    ObservationSeries,
    SyntheticSpec,
    TrainConfig,
    VariationalParams,
    adam_update,
    align,
    decode,
    draw_frozen,
    elbo,
    elbo_terms,
    fit,
    gaussian_loglik,
    grad_fd,
    grad_params,
    initial_params,
    load_params,
    merge_grid,
    optimizer_step,
    read_manifest,
    read_series_csv,
    read_trace,
    retract,
    save_params,
    series_dim,
    synthetic_dataset,
    write_manifest,
    write_series_csv,
    write_trace,
)
from geomsde.kl import kl_path_term
from geomsde.sde import SolverConfig, draw_noise, sample_posterior_paths


def small_problem(S=3, n=3, steps=10, seed=0, sigma=0.1):
    cfg = SolverConfig.uniform(n, sigma, 1.0, steps)
    rng = np.random.default_rng(seed)
    data = [ObservationSeries(cfg.grid.times, random_unit(rng, n, steps + 1)) for _ in range(S)]
    train = TrainConfig(mc_samples=3, epochs=5)
    params = initial_params(data, cfg, train)
    params.drift = np.stack([random_skew(rng, n, 0.5)[None] for _ in range(S)])
    return cfg, data, train, params


class TestDecoder:
    def test_identity(self):
        z = random_unit(np.random.default_rng(0), 3)
        np.testing.assert_array_equal(decode(z, DecoderParams.identity(3, 3)), z)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        dec = DecoderParams(rng.standard_normal((5, 3)), rng.standard_normal(5))
        z = random_unit(rng, 3)
        np.testing.assert_allclose(decode(z, dec) - decode(-z, dec), 2 * dec.weight @ z, atol=1e-14)

    def test_naive_loop(self):
        rng = np.random.default_rng(2)
        dec = DecoderParams(rng.standard_normal((4, 6)), rng.standard_normal(4))
        z = random_unit(rng, 6)
        naive = [sum(dec.weight[i, j] * z[j] for j in range(6)) + dec.bias[i] for i in range(4)]
        np.testing.assert_allclose(decode(z, dec), naive, atol=1e-13)

    def test_errors(self):
        with pytest.raises(InvalidDimensionError):
            decode(np.ones(2), DecoderParams.identity(3, 3))
        with pytest.raises(InvalidInputError):
            DecoderParams(np.eye(2), np.zeros(2), obs_std=0.0)


class TestLoglik:
    def test_single_point(self):
        s = ObservationSeries([0.0], [[0.5]])
        dec = DecoderParams.identity(1, 1)
        val = gaussian_loglik(s, [[0.5]], dec)
        assert val == pytest.approx(np.log(1 / (0.01 * np.sqrt(2 * np.pi))), abs=1e-12)
        assert val == pytest.approx(3.6862, abs=1e-4)
        assert gaussian_loglik(s, [[0.51]], dec) == pytest.approx(val - 0.5, abs=1e-9)

    def test_mask(self):
        s = ObservationSeries([0.0, 1.0], [[1.0, np.nan], [2.0, 3.0]])
        dec = DecoderParams.identity(2, 2)
        assert s.mask.sum() == 3
        perfect = gaussian_loglik(s, np.array([[1.0, 99.0], [2.0, 3.0]]), dec)
        assert perfect == pytest.approx(3 * np.log(1 / (0.01 * np.sqrt(2 * np.pi))))

    def test_fully_masked(self):
        s = ObservationSeries([0.0], [[1.0]], mask=[[False]])
        with pytest.raises(InvalidInputError):
            gaussian_loglik(s, [[1.0]], DecoderParams.identity(1, 1))


class TestElbo:
    def test_pure_function(self):
        cfg, data, train, params = small_problem()
        frozen = draw_frozen(3, 3, cfg, 0)
        assert elbo(params, data, cfg, train, frozen) == elbo(params, data, cfg, train, frozen)

    def test_zero_kl_weight_is_loglik(self):
        cfg, data, _, params = small_problem()
        train = TrainConfig(mc_samples=3, kl_weight=0.0)
        frozen = draw_frozen(3, 3, cfg, 1)
        terms = elbo_terms(params, data, cfg, train, frozen)
        np.testing.assert_array_equal(terms["elbo"], terms["loglik"])
        # and the loglik is the Monte Carlo mean of per-sample series logliks
        from geomsde.fitting import _initial_samples
        from geomsde.sde import gem_paths

        z0 = _initial_samples(params, frozen)
        kdt = params.drift[:, :, None].repeat(cfg.grid.steps, axis=2)[:, 0] * cfg.grid.dt[0]
        paths = gem_paths(z0.reshape(9, 3), kdt, np.repeat(np.arange(3), 3), cfg, frozen.noise.time_major())
        Z = paths.states.reshape(3, 3, -1, 3)
        for i, s in enumerate(data):
            direct = np.mean([gaussian_loglik(s, decode(Z[i, k], params.decoder), params.decoder) for k in range(3)])
            assert terms["loglik"][i] == pytest.approx(direct, rel=1e-12)

    def test_obs_std_halving(self):
        cfg, data, train, params = small_problem()
        frozen = draw_frozen(3, 3, cfg, 2)
        base = elbo(params, data, cfg, train, frozen)
        params.decoder.obs_std = 0.005
        assert elbo(params, data, cfg, train, frozen) < base

    def test_task_hook(self):
        cfg, data, _, params = small_problem()
        train = TrainConfig(mc_samples=3, task_weight=2.0)
        frozen = draw_frozen(3, 3, cfg, 3)
        plain = elbo_terms(params, data, cfg, train, frozen)
        with_targets = [ObservationSeries(s.times, s.values, targets=np.zeros_like(s.values)) for s in data]
        t = elbo_terms(params, with_targets, cfg, train, frozen)
        assert np.all(t["task"] > 0)
        np.testing.assert_allclose(t["elbo"], plain["elbo"] - 2.0 * t["task"])

    def test_shape_checks(self):
        cfg, data, train, params = small_problem()
        with pytest.raises(InvalidDimensionError):
            elbo(params, data, cfg, train, draw_frozen(3, 2, cfg, 0))

    def test_off_grid(self):
        cfg = SolverConfig.uniform(3, 0.1, 1.0, 10)
        with pytest.raises(InvalidInputError):
            align([ObservationSeries([0.05], [[1.0, 0.0, 0.0]])], cfg.grid.times)
        np.testing.assert_allclose(merge_grid([ObservationSeries([0.05, 0.3], np.ones((2, 1)))]), [0.0, 0.05, 0.3])


class TestGradients:
    def test_quadratic(self):
        p = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(grad_fd(lambda x: np.sum(x * x), p, 1e-4), 2 * p, atol=1e-6)

    def test_linearity(self):
        f = lambda x: np.sin(x).sum()
        g = lambda x: np.sum(x**3)
        p = np.array([0.1, 0.7])
        lhs = grad_fd(lambda x: 2 * f(x) - 3 * g(x), p)
        np.testing.assert_allclose(lhs, 2 * grad_fd(f, p) - 3 * grad_fd(g, p), atol=1e-8)

    def test_planar_kl_closed_form(self):
        T, sigma, omega = 1.0, 0.5, 1.3
        closed = lambda w: w[0] ** 2 * T / (2 * sigma**2)
        g = grad_fd(closed, np.array([omega]))[0]
        assert g == pytest.approx(omega * T / sigma**2, rel=1e-5)

    def test_planar_kl_simulated(self):
        # the same derivative through the sampler and the path-term estimator, with frozen noise
        T, sigma, omega = 1.0, 0.5, 1.3
        cfg = SolverConfig.uniform(2, sigma, T, 20)
        noise = draw_noise(cfg, 8, 0)
        z0 = random_unit(np.random.default_rng(1), 2, 8)

        def objective(w):
            drift = ChebyshevDrift.constant_drift([[0.0, w[0]], [-w[0], 0.0]])
            paths = sample_posterior_paths(z0, drift, cfg, 8, noise=noise)
            return kl_path_term(drift, cfg, paths).path_term

        g = grad_fd(objective, np.array([omega]))[0]
        assert g == pytest.approx(omega * T / sigma**2, rel=1e-5)

    def test_separable_matches_single_series(self):
        cfg, data, train, params = small_problem(S=2)
        frozen = draw_frozen(2, 3, cfg, 4)
        terms = lambda p: elbo_terms(p, data, cfg, train, frozen)["elbo"]
        g, _ = grad_params(params, terms, 1e-5)
        c = series_dim(3, 1)
        for j in [0, 2, 4]:
            d = np.zeros((2, c))
            d[1, j] = 1e-5
            one = (terms(retract(params, d)).sum() - terms(retract(params, -d)).sum()) / 2e-5
            assert g[1, j] == pytest.approx(one, rel=1e-6)

    def test_decoder_gradient_shapes(self):
        cfg, data, train, params = small_problem(S=2)
        frozen = draw_frozen(2, 3, cfg, 5)
        g, gs = grad_params(params, lambda p: elbo_terms(p, data, cfg, train, frozen)["elbo"], 1e-5, train_decoder=True)
        assert g.shape == (2, series_dim(3, 1)) and gs.shape == (12,)


class TestOptimizer:
    def test_zero_gradient(self):
        cfg, data, train, params = small_problem()
        new, _ = optimizer_step(params, (np.zeros((3, series_dim(3, 1))), np.zeros(0)), None, 0.1)
        np.testing.assert_allclose(new.mu, params.mu, atol=1e-15)
        np.testing.assert_array_equal(new.kappa, params.kappa)
        np.testing.assert_allclose(new.drift, params.drift, atol=1e-15)

    def test_descent_1d(self):
        p = 1.0
        step, _ = adam_update(np.array([-2 * p]), AdamState.zeros(1), 0.1)
        assert p + step[0] < p

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e6])
    def test_first_step_scale_free(self, scale):
        g = np.array([1.0, -2.0, 0.5]) * scale
        step, state = adam_update(g, AdamState.zeros(3), 0.01)
        np.testing.assert_allclose(step, 0.01 * np.sign(g), rtol=1e-4)
        assert state.t == 1

    @given(st.floats(1e-3, 10), st.integers(0, 2**31))
    def test_manifold_preserved(self, lr, seed):
        cfg, data, train, params = small_problem(seed=seed % 1000)
        rng = np.random.default_rng(seed)
        grad = (rng.standard_normal((3, series_dim(3, 1))) * 1e3, np.zeros(0))
        new, _ = optimizer_step(params, grad, None, lr)
        assert np.max(np.abs(np.linalg.norm(new.mu, axis=1) - 1)) <= 1e-12
        assert np.all(new.kappa >= 0)
        assert np.max(np.abs(new.drift + np.swapaxes(new.drift, -1, -2))) <= 1e-12


class TestFit:
    def test_degenerate_data(self):
        cfg = SolverConfig.uniform(3, 0.05, 1.0, 50)
        t = cfg.grid.times
        data = [ObservationSeries(t, np.tile(np.eye(3)[0], (t.size, 1))) for _ in range(8)]
        res = fit(data, TrainConfig(epochs=100), cfg)
        assert np.linalg.norm(res.params.mean_drift().coefficients) < 0.1 * np.linalg.norm([[0, np.pi], [-np.pi, 0]])
        assert res.final_elbo > res.initial_elbo

    def test_kl_weight_zero_fits_decoder(self):
        cfg = SolverConfig.uniform(3, 1e-3, 1.0, 20)
        t = cfg.grid.times
        rng = np.random.default_rng(1)
        data = [ObservationSeries(t, np.tile(random_unit(rng, 3), (t.size, 1))) for _ in range(4)]
        dec = DecoderParams(np.eye(3) + 0.05 * rng.standard_normal((3, 3)), 0.05 * rng.standard_normal(3))
        train = TrainConfig(epochs=400, kl_weight=0.0, train_decoder=True, learning_rate=0.01, lr_decay=0.99, init_kappa=1000)
        res = fit(data, train, cfg, decoder=dec)
        p = res.params
        for i, s in enumerate(data):
            # reconstruction = decoded posterior mean path
            paths = sample_posterior_paths(p.init_law(i), p.series_drift(i), cfg, 4000, rng=i)
            recon = decode(paths.states, p.decoder).mean(axis=0)
            assert np.max(np.abs(recon - s.values)) < p.decoder.obs_std

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts(self):
        cfg = SolverConfig.uniform(3, 0.1, 1.0, 5)
        data = [ObservationSeries(cfg.grid.times, np.full((6, 3), 1e200))]
        with pytest.raises(NumericalError, match="epoch 0"):
            fit(data, TrainConfig(epochs=2), cfg)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            fit([], TrainConfig(), SolverConfig.uniform(3, 0.1, 1.0, 5))

    def test_deterministic(self):
        cfg, data, train, _ = small_problem()
        a = fit(data, train, cfg)
        b = fit(data, train, cfg)
        assert a.trace == b.trace

    def test_train_config_validation(self):
        for bad in [dict(kl_weight=-1.0), dict(fd_epsilon=0.0), dict(mc_samples=0), dict(epochs=-1), dict(constant=True, n_polys=2)]:
            with pytest.raises(InvalidInputError):
                TrainConfig(**bad)


class TestIO:
    def test_series_csv(self, tmp_path):
        s = ObservationSeries([0.0, 0.5], [[1 / 3, np.nan], [2.0, -1e-300]])
        write_series_csv(s, tmp_path / "s.csv")
        text = (tmp_path / "s.csv").read_text().splitlines()
        assert text[0] == "t,x_1,x_2" and text[1].endswith(",")
        back = read_series_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.mask, s.mask)
        np.testing.assert_array_equal(back.values[s.mask], s.values[s.mask])

    def test_bad_csv(self, tmp_path):
        (tmp_path / "b.csv").write_text("t,x_1\n0.0,abc\n")
        with pytest.raises(InvalidInputError):
            read_series_csv(tmp_path / "b.csv")

    def test_manifest(self, tmp_path):
        data = synthetic_dataset(SyntheticSpec(num_series=3, steps=5))
        path = write_manifest(data, tmp_path / "d")
        back, doc = read_manifest(path)
        assert len(back) == 3 and doc["series"][0] == "series_0000.csv"
        np.testing.assert_array_equal(back[2].values, data[2].values)
        (tmp_path / "empty.json").write_text('{"series": []}')
        with pytest.raises(InvalidInputError):
            read_manifest(tmp_path / "empty.json")

    def test_params_round_trip(self, tmp_path):
        _, _, _, params = small_problem()
        save_params(params, tmp_path / "p.json")
        back = load_params(tmp_path / "p.json")
        np.testing.assert_array_equal(back.mu, params.mu)
        np.testing.assert_array_equal(back.drift, params.drift)
        np.testing.assert_array_equal(back.decoder.weight, params.decoder.weight)
        assert isinstance(back, VariationalParams) and back.sigma == params.sigma

    def test_trace(self, tmp_path):
        trace = [(0, -1.5, 0.25, -1.0), (1, -1.0 / 3, 0.5, 2.0)]
        write_trace(trace, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "epoch,elbo,kl_term,loglik_term"
        assert read_trace(tmp_path / "t.csv") == trace
