"""Variational fitting of per-series latent SDEs on S^{n-1} to time series.

Each series gets its own power spherical initial law and tangential drift;
a linear decoder with fixed Gaussian noise maps latent states to
observations. The objective is

    ELBO = sum_s [ -kl_weight * KL_s + loglik_weight * E[log p(x_s | z)]
                   - task_weight * E[sq. error to targets] ].

Gradients are central finite differences with common random numbers: every
evaluation within an epoch reuses the same frozen base randomness (uniforms
for the Beta marginal, normals for the tangent direction, Brownian
increments), so the objective is a deterministic smooth function of the
parameters.

Per-series parameters live on a product manifold and are perturbed in local
coordinates: tangent coordinates of ``mu`` (then re-projected), ``log kappa``,
and the upper-triangle entries of each drift coefficient (mirrored to keep
skew-symmetry). Because series do not interact, one perturbation of
coordinate ``j`` applied to every series at once yields all per-series
partial derivatives of that coordinate.
"""

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import (
    KAPPA_MAX,
    PowerSphericalParams,
    log_normalizer,
    log_sphere_area,
    power_spherical_from_uniforms,
    tangent_basis,
)
from .drift import ChebyshevDrift, chebyshev_values, drift_from_dict
from .exceptions import InvalidDimensionError, InvalidInputError, NumericalError
from .kl import _trapezoid
from .lie import basis_size, skew_from_coords, skew_part
from .rng import make_rng, stream
from .sde import NoiseBlock, SolverConfig, gem_paths, sample_posterior_paths

LOG_2PI = float(np.log(2.0 * np.pi))
GRID_TOL = 1e-9


@dataclass
class ObservationSeries:
    """Observations ``values`` ``(T, d)`` at ``times``.

    Missing entries are ``False`` in ``mask`` (or NaN in ``values``).
    ``targets`` optionally holds supervised targets on the same layout.
    """

    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None
    targets: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.times.size:
            raise InvalidDimensionError(f"{self.times.size} times but values have shape {self.values.shape}")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("observation times must be strictly increasing")
        observed = np.isfinite(self.values)
        if self.mask is None:
            self.mask = observed
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise InvalidDimensionError("mask must match the shape of values")
            self.mask = self.mask & observed
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=float)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
            if self.targets.shape[0] != self.times.size:
                raise InvalidDimensionError("targets must have one row per observation time")

    @property
    def d(self):
        return self.values.shape[1]


@dataclass
class DecoderParams:
    weight: np.ndarray
    bias: np.ndarray
    obs_std: float = 0.01

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if self.weight.ndim != 2 or self.bias.size != self.weight.shape[0]:
            raise InvalidDimensionError(f"decoder weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if not (np.isfinite(self.obs_std) and self.obs_std > 0):
            raise InvalidInputError(f"obs_std must be positive, got {self.obs_std}")
        self.obs_std = float(self.obs_std)

    @property
    def d(self):
        return self.weight.shape[0]

    @property
    def n(self):
        return self.weight.shape[1]

    @classmethod
    def identity(cls, d, n, obs_std=0.01):
        return cls(np.eye(d, n), np.zeros(d), obs_std)

    def to_dict(self):
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist(), "obs_std": self.obs_std}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["weight"], dtype=float), np.array(data["bias"], dtype=float), data.get("obs_std", 0.01))


def decode(z, dec):
    """``weight @ z + bias`` for one state or any leading batch shape."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != dec.n:
        raise InvalidDimensionError(f"state dimension {z.shape[-1]} does not match decoder input {dec.n}")
    return z @ dec.weight.T + dec.bias


def gaussian_loglik(series, decoded, dec):
    """Sum of ``log N(x | decoded, obs_std^2)`` over the unmasked entries."""
    decoded = np.asarray(decoded, dtype=float)
    if decoded.shape != series.values.shape:
        raise InvalidDimensionError(f"decoded shape {decoded.shape} differs from observations {series.values.shape}")
    mask = series.mask
    count = int(mask.sum())
    if count == 0:
        raise InvalidInputError("series has no unmasked observations")
    r = np.where(mask, series.values - decoded, 0.0) / dec.obs_std
    return float(-0.5 * np.sum(r * r) - count * (np.log(dec.obs_std) + 0.5 * LOG_2PI))


@dataclass
class VariationalParams:
    """Per-series initial laws and drifts plus shared sigma and decoder.

    ``mu`` is ``(S, n)``, ``kappa`` ``(S,)`` and ``drift`` ``(S, K, n, n)``.
    """

    mu: np.ndarray
    kappa: np.ndarray
    drift: np.ndarray
    sigma: float
    decoder: DecoderParams
    constant: bool = True
    interval: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.kappa = np.asarray(self.kappa, dtype=float).reshape(-1)
        self.drift = np.asarray(self.drift, dtype=float)
        S, n = self.mu.shape
        if self.drift.ndim != 4 or self.drift.shape[0] != S or self.drift.shape[2:] != (n, n):
            raise InvalidDimensionError(f"drift must be (S, K, n, n) with S={S}, n={n}, got {self.drift.shape}")
        if self.kappa.size != S:
            raise InvalidDimensionError("one kappa per series required")
        if self.constant and self.drift.shape[1] != 1:
            raise InvalidInputError("constant drift takes exactly one coefficient")
        if self.decoder.n != n:
            raise InvalidDimensionError("decoder input dimension must equal the latent dimension")

    @property
    def num_series(self):
        return self.mu.shape[0]

    @property
    def n(self):
        return self.mu.shape[1]

    @property
    def K(self):
        return self.drift.shape[1]

    def init_law(self, i):
        return PowerSphericalParams(self.mu[i], self.kappa[i])

    def series_drift(self, i):
        return ChebyshevDrift(self.drift[i], self.interval, self.constant)

    def mean_drift(self):
        """Average drift over series, the dataset-level estimate."""
        return ChebyshevDrift(self.drift.mean(axis=0), self.interval, self.constant)

    def copy(self):
        return replace(
            self,
            mu=self.mu.copy(),
            kappa=self.kappa.copy(),
            drift=self.drift.copy(),
            decoder=DecoderParams(self.decoder.weight.copy(), self.decoder.bias.copy(), self.decoder.obs_std),
        )

    def to_dict(self):
        return {
            "n": self.n,
            "sigma": self.sigma,
            "series": [
                {"mu": self.mu[i].tolist(), "kappa": float(self.kappa[i]), "drift": self.series_drift(i).to_dict()}
                for i in range(self.num_series)
            ],
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        series = data.get("series") or []
        if not series:
            raise InvalidInputError("parameter document lists no series")
        drifts = [drift_from_dict(s["drift"]) for s in series]
        return cls(
            np.array([s["mu"] for s in series], dtype=float),
            np.array([s["kappa"] for s in series], dtype=float),
            np.stack([d.coefficients for d in drifts]),
            float(data["sigma"]),
            DecoderParams.from_dict(data["decoder"]),
            drifts[0].constant,
            drifts[0].interval,
        )


def save_params(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)


def load_params(path):
    with open(path) as fh:
        return VariationalParams.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    kl_weight: float = 1e-5
    mc_samples: int = 4
    fd_epsilon: float = 1e-4
    seed: int = 0
    loglik_weight: float = 1.0
    task_weight: float = 1.0
    train_decoder: bool = False
    n_polys: int = 1
    constant: bool = True
    init_kappa: float = 10.0
    lr_decay: float = 1.0

    def __post_init__(self):
        if not self.kl_weight >= 0:
            raise InvalidInputError(f"kl_weight must be nonnegative, got {self.kl_weight}")
        if not self.fd_epsilon > 0:
            raise InvalidInputError(f"fd_epsilon must be positive, got {self.fd_epsilon}")
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise InvalidInputError(f"epochs must be a nonnegative integer, got {self.epochs}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 1:
            raise InvalidInputError(f"mc_samples must be a positive integer, got {self.mc_samples}")
        if self.constant and self.n_polys != 1:
            raise InvalidInputError("constant drift uses n_polys = 1")
        if not 0 < self.init_kappa <= KAPPA_MAX:
            raise InvalidInputError(f"init_kappa must lie in (0, {KAPPA_MAX:g}]")
        if not 0 < self.lr_decay <= 1:
            raise InvalidInputError("lr_decay must lie in (0, 1]")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FrozenRandomness:
    """Base draws for ``S`` series and ``M`` Monte Carlo samples.

    Path ``s * M + k`` carries sample ``k`` of series ``s``.
    """

    uniforms: np.ndarray  # (S, M)
    normals: np.ndarray  # (S, M, n - 1)
    noise: NoiseBlock  # count S * M

    @property
    def mc_samples(self):
        return self.uniforms.shape[1]


def draw_frozen(num_series, mc_samples, config, rng=None):
    rng = make_rng(rng)
    uniforms = rng.random((num_series, mc_samples))
    # keep inverse-CDF arguments off the endpoints
    np.clip(uniforms, 1e-15, 1.0 - 1e-15, out=uniforms)
    normals = rng.standard_normal((num_series, mc_samples, config.n - 1))
    inc = rng.standard_normal((config.grid.steps, num_series * mc_samples, config.m))
    inc *= np.sqrt(config.grid.dt)[:, None, None]
    return FrozenRandomness(uniforms, normals, NoiseBlock(np.swapaxes(inc, 0, 1)))


@dataclass
class _Aligned:
    """Observations scattered onto the solver grid, ``(S, len(grid), d)``."""

    values: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    counts: np.ndarray


def grid_indices(times, grid_times):
    """Positions of ``times`` on ``grid_times``; raises if any is off-grid."""
    idx = np.searchsorted(grid_times, times - GRID_TOL)
    idx = np.clip(idx, 0, grid_times.size - 1)
    if np.any(np.abs(grid_times[idx] - times) > GRID_TOL * max(1.0, grid_times[-1])):
        raise InvalidInputError("observation times must lie on the solver grid (merge them with merge_grid)")
    return idx


def merge_grid(dataset, t_end=None):
    """Union of all observation times with 0, as a master solver grid."""
    times = np.concatenate([[0.0]] + [s.times for s in dataset] + ([[t_end]] if t_end else []))
    times = np.unique(np.round(times, 12))
    if times[0] < 0:
        raise InvalidInputError("observation times must be nonnegative")
    return times


def align(dataset, grid_times):
    if not dataset:
        raise InvalidInputError("dataset is empty")
    d = dataset[0].d
    S, T = len(dataset), grid_times.size
    values = np.zeros((S, T, d))
    mask = np.zeros((S, T, d), dtype=bool)
    targets = None
    target_mask = None
    if any(s.targets is not None for s in dataset):
        dt = next(s.targets for s in dataset if s.targets is not None).shape[1]
        targets = np.zeros((S, T, dt))
        target_mask = np.zeros((S, T, dt), dtype=bool)
    for i, s in enumerate(dataset):
        if s.d != d:
            raise InvalidDimensionError("all series must share the observation dimension")
        idx = grid_indices(s.times, grid_times)
        values[i, idx] = np.where(s.mask, s.values, 0.0)
        mask[i, idx] = s.mask
        if s.targets is not None:
            ok = np.isfinite(s.targets)
            targets[i, idx] = np.where(ok, s.targets, 0.0)
            target_mask[i, idx] = ok
    counts = mask.sum(axis=(1, 2))
    if np.any(counts == 0):
        raise InvalidInputError(f"series {int(np.argmin(counts))} has no unmasked observations")
    return _Aligned(values, mask, targets, target_mask, counts)


def _initial_samples(params, frozen):
    S, M = frozen.uniforms.shape
    z0 = np.empty((S, M, params.n))
    for i in range(S):
        z0[i] = power_spherical_from_uniforms(params.init_law(i), frozen.uniforms[i], frozen.normals[i])
    return z0


def elbo_terms(params, dataset, config, train, frozen, aligned=None):
    """Per-series ``elbo``, ``kl``, ``loglik`` and ``task`` arrays, each ``(S,)``.

    ``dataset`` may be a list of series or an already aligned view.
    """
    if params.n != config.n:
        raise InvalidDimensionError(f"parameters have n={params.n}, config n={config.n}")
    S, M = params.num_series, train.mc_samples
    if frozen.uniforms.shape != (S, M) or frozen.normals.shape != (S, M, config.n - 1):
        raise InvalidDimensionError("frozen randomness does not match (series, mc_samples)")
    frozen.noise.check(config, S * M)
    if aligned is None:
        aligned = align(dataset, config.grid.times)
    times = config.grid.times
    z0 = _initial_samples(params, frozen)

    # drift on the grid, per series: (S, T, n, n)
    if params.constant:
        weights = np.ones((times.size, 1))
    else:
        weights = chebyshev_values(params.K, times)
    K_grid = np.einsum("tk,skij->stij", weights, params.drift)
    kdt = K_grid[:, :-1] * config.grid.dt[None, :, None, None]
    gid = np.repeat(np.arange(S), M)
    paths = gem_paths(z0.reshape(S * M, -1), kdt, gid, config, frozen.noise.time_major())
    Z = paths.states.reshape(S, M, times.size, config.n)

    # initial KL by the frozen samples, path KL by trapezoid over the grid
    log_area = log_sphere_area(config.n)
    kl_init = np.empty(S)
    for i in range(S):
        k = params.kappa[i]
        if k == 0:
            kl_init[i] = 0.0
            continue
        cos = np.clip(z0[i] @ params.mu[i], -1.0, 1.0)
        kl_init[i] = np.mean(k * np.log1p(cos)) - log_normalizer(config.n, k) + log_area
    Kz = np.einsum("stij,smtj->smti", K_grid, Z)
    integrand = 0.5 * np.sum(Kz * Kz, axis=-1) / config.sigma**2
    kl_path = _trapezoid(integrand, times, axis=-1).mean(axis=1)
    kl = kl_init + kl_path

    dec = params.decoder
    X = Z @ dec.weight.T + dec.bias  # (S, M, T, d)
    r = np.where(aligned.mask[:, None], aligned.values[:, None] - X, 0.0) / dec.obs_std
    loglik = -0.5 * np.sum(r * r, axis=(2, 3)).mean(axis=1)
    loglik -= aligned.counts * (np.log(dec.obs_std) + 0.5 * LOG_2PI)

    task = np.zeros(S)
    if aligned.targets is not None and train.task_weight != 0:
        e = np.where(aligned.target_mask[:, None], aligned.targets[:, None] - X[..., : aligned.targets.shape[-1]], 0.0)
        task = np.sum(e * e, axis=(2, 3)).mean(axis=1)

    elbo = -train.kl_weight * kl + train.loglik_weight * loglik - train.task_weight * task
    return {"elbo": elbo, "kl": kl, "loglik": loglik, "task": task}


def elbo(params, dataset, config, train, frozen, aligned=None):
    """Total ELBO summed over series; a pure function of its arguments."""
    return float(elbo_terms(params, dataset, config, train, frozen, aligned)["elbo"].sum())


# -- local coordinates ------------------------------------------------------


def series_dim(n, K):
    """Local coordinates per series: tangent ``mu``, ``log kappa``, drift."""
    return (n - 1) + 1 + K * basis_size(n)


def shared_dim(params, train_decoder):
    return params.decoder.weight.size + params.decoder.bias.size if train_decoder else 0


def retract(params, delta_series, delta_shared=None):
    """Move ``params`` by local coordinates and project back onto the constraints."""
    S, n, K = params.num_series, params.n, params.K
    delta_series = np.asarray(delta_series, dtype=float).reshape(S, series_dim(n, K))
    out = params.copy()
    dmu = delta_series[:, : n - 1]
    if np.any(dmu):
        for i in range(S):
            step = dmu[i] @ tangent_basis(params.mu[i])
            v = params.mu[i] + step
            out.mu[i] = v / np.linalg.norm(v)
    dlk = delta_series[:, n - 1]
    out.kappa = np.clip(params.kappa * np.exp(dlk), 0.0, KAPPA_MAX)
    m = basis_size(n)
    ddrift = delta_series[:, n:].reshape(S, K, m)
    if np.any(ddrift):
        out.drift = skew_part(params.drift + skew_from_coords(ddrift, n))
    if delta_shared is not None and np.size(delta_shared):
        w = params.decoder.weight
        ds = np.asarray(delta_shared, dtype=float)
        out.decoder.weight = w + ds[: w.size].reshape(w.shape)
        out.decoder.bias = params.decoder.bias + ds[w.size :]
    return out


def grad_fd(objective, x, eps=1e-4):
    """Central differences ``(f(x + eps e_j) - f(x - eps e_j)) / (2 eps)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    flat = g.reshape(-1)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = eps
        e = e.reshape(x.shape)
        flat[j] = (objective(x + e) - objective(x - e)) / (2.0 * eps)
    return g


def grad_params(params, terms_fn, eps, train_decoder=False):
    """Finite-difference gradient of the ELBO in local coordinates.

    ``terms_fn(p)`` returns per-series ELBO values ``(S,)``. Returns the
    per-series gradient ``(S, c)`` and the shared (decoder) gradient.
    """
    S = params.num_series
    c = series_dim(params.n, params.K)
    g = np.empty((S, c))
    for j in range(c):
        d = np.zeros((S, c))
        d[:, j] = eps
        g[:, j] = (terms_fn(retract(params, d)) - terms_fn(retract(params, -d))) / (2.0 * eps)
    ns = shared_dim(params, train_decoder)
    gs = np.empty(ns)
    zero = np.zeros((S, c))
    for j in range(ns):
        e = np.zeros(ns)
        e[j] = eps
        gs[j] = (terms_fn(retract(params, zero, e)).sum() - terms_fn(retract(params, zero, -e)).sum()) / (2.0 * eps)
    return g, gs


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))


def adam_update(grad, state, learning_rate):
    """Ascent step ``lr * m_hat / (sqrt(v_hat) + eps)`` and the advanced state."""
    grad = np.asarray(grad, dtype=float).reshape(-1)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    step = learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return step, replace(state, m=m, v=v, t=t)


def optimizer_step(params, gradient, state, learning_rate):
    """Apply one Adam ascent step; ``gradient`` is ``(series_grad, shared_grad)``."""
    gs_series, gs_shared = gradient
    flat = np.concatenate([np.ravel(gs_series), np.ravel(gs_shared)])
    if state is None:
        state = AdamState.zeros(flat.size)
    step, state = adam_update(flat, state, learning_rate)
    k = np.size(gs_series)
    new = retract(params, step[:k].reshape(np.shape(gs_series)), step[k:])
    # the retraction already projects; repeat cheaply to absorb rounding
    new.mu /= np.linalg.norm(new.mu, axis=1, keepdims=True)
    new.drift = skew_part(new.drift)
    return new, state


# -- training -----------------------------------------------------------------


@dataclass
class FitResult:
    params: VariationalParams
    trace: list = field(default_factory=list)  # (epoch, elbo, kl_term, loglik_term)
    initial_elbo: float = float("nan")
    final_elbo: float = float("nan")

    def write_trace(self, path):
        write_trace(self.trace, path)


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "elbo", "kl_term", "loglik_term"])
        for epoch, e, k, l in trace:
            w.writerow([epoch, repr(float(e)), repr(float(k)), repr(float(l))])


def read_trace(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]


def initial_params(dataset, config, train, decoder=None):
    """Start from ``mu`` at the decoded-back first observation, zero drift."""
    d = dataset[0].d
    dec = DecoderParams.identity(d, config.n) if decoder is None else decoder
    pinv = np.linalg.pinv(dec.weight)
    S = len(dataset)
    mu = np.empty((S, config.n))
    for i, s in enumerate(dataset):
        rows = np.flatnonzero(s.mask.all(axis=1))
        x = s.values[rows[0]] if rows.size else np.nan_to_num(s.values[0])
        v = pinv @ (x - dec.bias)
        big = np.max(np.abs(v))
        ok = np.isfinite(big) and big > 1e-300
        v = v / big if ok else v
        nv = np.linalg.norm(v) if ok else 0.0
        mu[i] = v / nv if nv > 1e-12 else np.eye(config.n)[0]
    K = 1 if train.constant else train.n_polys
    return VariationalParams(
        mu,
        np.full(S, train.init_kappa),
        np.zeros((S, K, config.n, config.n)),
        config.sigma,
        DecoderParams(dec.weight.copy(), dec.bias.copy(), dec.obs_std),
        train.constant,
        (0.0, config.grid.t_end),
    )


def _check_finite(values, params, epoch):
    if not np.all(np.isfinite(values)):
        raise NumericalError(
            f"non-finite objective at epoch {epoch}; "
            f"kappa range [{params.kappa.min():.6g}, {params.kappa.max():.6g}], "
            f"max |drift| {np.abs(params.drift).max():.6g}, "
            f"decoder |W| {np.abs(params.decoder.weight).max():.6g}"
        )


def fit(dataset, train, config, init=None, decoder=None, callback=None):
    """Maximise the ELBO by Adam on common-random-number finite differences.

    Fresh training randomness is drawn for every epoch from
    ``stream(seed, epoch + 1)``; the reported trace and the initial/final
    ELBO use one fixed evaluation draw from ``stream(seed, 0)``.
    """
    if not dataset:
        raise InvalidInputError("dataset is empty")
    aligned = align(dataset, config.grid.times)
    params = initial_params(dataset, config, train, decoder) if init is None else init.copy()
    S, M = params.num_series, train.mc_samples
    frozen_eval = draw_frozen(S, M, config, stream(train.seed, 0))

    def evaluate(p, frozen):
        return elbo_terms(p, None, config, train, frozen, aligned)

    terms = evaluate(params, frozen_eval)
    _check_finite(terms["elbo"], params, 0)
    initial = float(terms["elbo"].sum())
    trace = [(0, initial, float(terms["kl"].sum()), float(terms["loglik"].sum()))]
    state = None
    lr = train.learning_rate
    for epoch in range(1, train.epochs + 1):
        frozen = draw_frozen(S, M, config, stream(train.seed, epoch))

        def per_series(p):
            e = evaluate(p, frozen)["elbo"]
            _check_finite(e, p, epoch)
            return e

        grad = grad_params(params, per_series, train.fd_epsilon, train.train_decoder)
        _check_finite(np.concatenate([grad[0].ravel(), grad[1]]), params, epoch)
        params, state = optimizer_step(params, grad, state, lr)
        lr *= train.lr_decay
        terms = evaluate(params, frozen_eval)
        _check_finite(terms["elbo"], params, epoch)
        trace.append((epoch, float(terms["elbo"].sum()), float(terms["kl"].sum()), float(terms["loglik"].sum())))
        if callback is not None:
            callback(epoch, params, trace[-1])
    return FitResult(params, trace, initial, trace[-1][1])


def relative_drift_error(estimate, truth):
    """``||K_hat - K*||_F / ||K*||_F`` over all coefficients."""
    a = np.asarray(getattr(estimate, "coefficients", estimate), dtype=float)
    b = np.asarray(getattr(truth, "coefficients", truth), dtype=float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# -- synthetic data and dataset files ------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    num_series: int = 64
    n: int = 3
    sigma: float = 0.05
    kappa: float = 200.0
    omega: float = float(np.pi)
    t_end: float = 1.0
    steps: int = 50
    obs_std: float = 0.01
    seed: int = 0

    def truth(self):
        K = np.zeros((self.n, self.n))
        K[0, 1], K[1, 0] = self.omega, -self.omega
        return ChebyshevDrift.constant_drift(K, (0.0, self.t_end))

    def config(self):
        return SolverConfig.uniform(self.n, self.sigma, self.t_end, self.steps, self.seed)

    def to_dict(self):
        return dict(self.__dict__)


def synthetic_dataset(spec=SyntheticSpec()):
    """Rotation data: latent paths from the posterior sampler, identity decoder, Gaussian noise.

    Initial states follow a power spherical law at ``e_1``; observations are
    taken at every grid point.
    """
    config = spec.config()
    rng = make_rng(spec.seed)
    mu0 = np.eye(spec.n)[0]
    init = PowerSphericalParams(mu0, spec.kappa)
    paths = sample_posterior_paths(init, spec.truth(), config, spec.num_series, rng=rng)
    noisy = paths.states + spec.obs_std * rng.standard_normal(paths.states.shape)
    return [ObservationSeries(paths.times, noisy[i]) for i in range(spec.num_series)]


def write_series_csv(series, path):
    d = series.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i}" for i in range(1, d + 1)])
        for t, row, ok in zip(series.times, series.values, series.mask):
            w.writerow([repr(float(t))] + [repr(float(x)) if k else "" for x, k in zip(row, ok)])


def read_series_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise InvalidInputError(f"{path}: expected a header starting with 't'")
    d = len(rows[0]) - 1
    body = [r for r in rows[1:] if r]
    values = np.full((len(body), d), np.nan)
    times = np.empty(len(body))
    for i, r in enumerate(body):
        if len(r) != d + 1:
            raise InvalidInputError(f"{path}: row {i + 2} has {len(r)} fields, expected {d + 1}")
        try:
            times[i] = float(r[0])
            for j, cell in enumerate(r[1:]):
                if cell.strip():
                    values[i, j] = float(cell)
        except ValueError as exc:
            raise InvalidInputError(f"{path}: row {i + 2}: {exc}") from None
    return ObservationSeries(times, values)


def write_manifest(dataset, directory, name="manifest.json", extra=None):
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, s in enumerate(dataset):
        fname = f"series_{i:04d}.csv"
        write_series_csv(s, os.path.join(directory, fname))
        files.append(fname)
    doc = {"series": files}
    if extra:
        doc.update(extra)
    path = os.path.join(directory, name)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path


def read_manifest(path):
    """Series listed in a JSON manifest (paths relative to the manifest), plus the document."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not isinstance(doc.get("series"), list):
        raise InvalidInputError(f"{path}: manifest needs a 'series' list")
    if not doc["series"]:
        raise InvalidInputError(f"{path}: manifest lists no series")
    base = os.path.dirname(os.path.abspath(path))
    return [read_series_csv(os.path.join(base, f)) for f in doc["series"]], doc


__all__ = [
    "AdamState",
    "DecoderParams",
    "FitResult",
    "FrozenRandomness",
    "ObservationSeries",
    "SyntheticSpec",
    "TrainConfig",
    "VariationalParams",
    "adam_update",
    "align",
    "decode",
    "draw_frozen",
    "elbo",
    "elbo_terms",
    "fit",
    "gaussian_loglik",
    "grad_fd",
    "grad_params",
    "initial_params",
    "load_params",
    "merge_grid",
    "optimizer_step",
    "read_manifest",
    "read_series_csv",
    "read_trace",
    "relative_drift_error",
    "retract",
    "save_params",
    "synthetic_dataset",
    "write_manifest",
    "write_series_csv",
    "write_trace",
]
