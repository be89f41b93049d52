"""Path simulation on S^{n-1} and in O(n) with the geometric Euler-Maruyama scheme.

Every interval ``[t_j, t_{j+1}]`` is advanced by a left action

    Z_{j+1} = exp(Omega_{j+1}) Z_j,   Omega_{j+1} = K(t_j) dt_j + sigma * sum_i dw_j^i E_i,

with ``E_i`` the lexicographic basis of so(n) and ``dw_j^i ~ N(0, dt_j)``.
The pinning part of the drift is not added to ``Omega``; it is the Ito
correction carried by the exponential itself.

Randomness is drawn from one generator per call: initial states first, then
Brownian increments in time-major order ``(step, path, channel)``. Drawing in
time blocks reproduces the single full draw exactly, so the streamed solvers
and an explicit :class:`NoiseBlock` from :func:`draw_noise` agree bit for bit.
"""

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .distributions import PowerSphericalParams, sample_power_spherical, sample_uniform_sphere
from .drift import ChebyshevDrift
from .exceptions import InvalidDimensionError, InvalidInputError, NumericalError
from .lie import basis_pairs, basis_size, check_quadratic_membership, expm_action, matrix_exp
from .rng import make_rng

NOISE_MAGIC = b"GSNB"
NOISE_VERSION = 1
_NOISE_HEADER = struct.Struct("<4sHIIH")

# Doubles per streamed noise block.
_BLOCK_BUDGET = 1 << 21


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        if t.size < 2:
            raise InvalidInputError("a time grid needs at least two points")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("time grid has non-finite entries")
        if t[0] != 0.0:
            raise InvalidInputError(f"time grid must start at 0, got {t[0]}")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t_end, steps):
        if steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {steps}")
        if not t_end > 0:
            raise InvalidInputError(f"t_end must be positive, got {t_end}")
        return cls(np.linspace(0.0, t_end, steps + 1))

    @property
    def dt(self):
        return np.diff(self.times)

    @property
    def steps(self):
        return self.times.size - 1

    @property
    def t_end(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class SolverConfig:
    n: int
    sigma: float
    grid: TimeGrid
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidDimensionError(f"latent dimension must satisfy n >= 2, got n={self.n}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if not isinstance(self.grid, TimeGrid):
            object.__setattr__(self, "grid", TimeGrid(self.grid))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def m(self):
        return basis_size(self.n)

    @classmethod
    def uniform(cls, n, sigma, t_end, steps, seed=0):
        return cls(n, sigma, TimeGrid.uniform(t_end, steps), seed)

    def to_dict(self):
        return {"n": self.n, "sigma": self.sigma, "times": self.grid.times.tolist(), "seed": self.seed}


@dataclass
class PathSample:
    """States recorded at ``times``: ``(count, len(times), d)``.

    ``manifold`` is ``"sphere"``, ``"group"`` (flattened row-major n x n
    matrices) or ``"euclidean"``.
    """

    times: np.ndarray
    states: np.ndarray
    manifold: str = "sphere"
    meta: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.states.shape[0]

    @property
    def final(self):
        return self.states[:, -1]

    def max_norm_deviation(self):
        if self.manifold == "group":
            n = math.isqrt(self.states.shape[-1])
            G = self.states.reshape(self.states.shape[:-1] + (n, n))
            return float(np.max(np.abs(np.swapaxes(G, -1, -2) @ G - np.eye(n))))
        return float(np.max(np.abs(np.linalg.norm(self.states, axis=-1) - 1.0)))

    def matrices(self):
        n = math.isqrt(self.states.shape[-1])
        return self.states.reshape(self.states.shape[:-1] + (n, n))

    def to_csv(self, dest):
        """Write ``path_id,t,<coords>`` rows with 17 significant digits."""
        d = self.states.shape[-1]
        if self.manifold == "group":
            n = math.isqrt(d)
            cols = [f"g_{i}{j}" if n < 10 else f"g_{i}_{j}" for i in range(1, n + 1) for j in range(1, n + 1)]
        else:
            cols = [f"z_{i}" for i in range(1, d + 1)]
        header = ",".join(["path_id", "t"] + cols)
        P, T = self.states.shape[:2]
        ids = np.repeat(np.arange(P), T)
        ts = np.tile(self.times, P)
        body = np.column_stack([ids, ts, self.states.reshape(P * T, d)])
        fmt = ["%d", "%.17g"] + ["%.17g"] * d
        buf = io.StringIO()
        np.savetxt(buf, body, fmt=fmt, delimiter=",", header=header, comments="")
        text = buf.getvalue()
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)


def read_path_csv(path, manifold="sphere"):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(int)
    count = ids.max() + 1
    T = data.shape[0] // count
    times = data[:T, 1]
    states = data[:, 2:].reshape(count, T, len(header) - 2)
    return PathSample(times, states, manifold)


@dataclass
class NoiseBlock:
    """Brownian increments ``(count, steps, m)``; entry ``(p, j, i) ~ N(0, dt_j)``."""

    increments: np.ndarray

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.increments.ndim != 3:
            raise InvalidDimensionError(f"noise increments must be 3-D, got shape {self.increments.shape}")

    @property
    def count(self):
        return self.increments.shape[0]

    @property
    def steps(self):
        return self.increments.shape[1]

    @property
    def m(self):
        return self.increments.shape[2]

    def time_major(self):
        return np.ascontiguousarray(np.swapaxes(self.increments, 0, 1))

    def check(self, config, count):
        if self.increments.shape != (count, config.grid.steps, config.m):
            raise InvalidDimensionError(
                f"noise block shape {self.increments.shape} does not match "
                f"(count={count}, steps={config.grid.steps}, m={config.m})"
            )

    def to_bytes(self):
        header = _NOISE_HEADER.pack(NOISE_MAGIC, NOISE_VERSION, self.count, self.steps, self.m)
        return header + np.ascontiguousarray(self.increments, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < _NOISE_HEADER.size:
            raise InvalidInputError("noise file is shorter than its header")
        magic, version, count, steps, m = _NOISE_HEADER.unpack_from(raw)
        if magic != NOISE_MAGIC:
            raise InvalidInputError(f"bad noise file magic {magic!r}")
        if version != NOISE_VERSION:
            raise InvalidInputError(f"unsupported noise file version {version}")
        expected = _NOISE_HEADER.size + 8 * count * steps * m
        if len(raw) != expected:
            raise InvalidInputError(f"noise file has {len(raw)} bytes, expected {expected}")
        data = np.frombuffer(raw, dtype="<f8", offset=_NOISE_HEADER.size).astype(float)
        return cls(data.reshape(count, steps, m))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _block_steps(steps, count, width):
    return max(1, min(steps, _BLOCK_BUDGET // max(1, count * width)))


def _noise_blocks(rng, grid, count, width):
    """Yield ``(start, increments)`` with increments ``(B, count, width)``."""
    scale = np.sqrt(grid.dt)
    steps = grid.steps
    B = _block_steps(steps, count, width)
    for start in range(0, steps, B):
        stop = min(steps, start + B)
        yield start, rng.standard_normal((stop - start, count, width)) * scale[start:stop, None, None]


def draw_noise(config, count, rng=None):
    """Independent increments ``N(0, dt_j)`` for ``count`` paths, drawn time-major."""
    rng = make_rng(config.seed if rng is None else rng)
    inc = np.empty((config.grid.steps, count, config.m))
    for start, block in _noise_blocks(rng, config.grid, count, config.m):
        inc[start : start + block.shape[0]] = block
    return NoiseBlock(np.swapaxes(inc, 0, 1))


def gem_step(z, K_t, increments, dt, sigma):
    """One g-EM step ``exp(K_t dt + sigma * sum_i dw_i E_i) z`` for a single state."""
    z = np.asarray(z, dtype=float)
    if abs(np.linalg.norm(z) - 1.0) > 1e-9:
        raise InvalidInputError(f"gem_step needs a unit vector, got norm {np.linalg.norm(z):.12g}")
    n = z.size
    k, l = basis_pairs(n)
    omega = np.array(K_t, dtype=float) * dt
    w = sigma * np.asarray(increments, dtype=float)
    omega[k, l] += w
    omega[l, k] -= w
    return expm_action(omega, z)


def _record_plan(steps, save_at):
    """Slots per step (after-step indexing) plus the recorded grid indices."""
    if save_at is None:
        idx = np.arange(steps + 1)
    else:
        idx = np.unique(np.asarray(save_at, dtype=np.int64))
        if idx.size == 0 or idx[0] < 0 or idx[-1] > steps:
            raise InvalidInputError(f"save_at indices must lie in [0, {steps}]")
    rec = np.full(steps, -1, dtype=np.int64)
    for slot, j in enumerate(idx):
        if j > 0:
            rec[j - 1] = slot
    return idx, rec


def _init_states(init, n, count, rng):
    if init is None:
        return sample_uniform_sphere(n, count, rng)
    if isinstance(init, PowerSphericalParams):
        if init.n != n:
            raise InvalidDimensionError(f"initial law has dimension {init.n}, config has n={n}")
        return sample_power_spherical(init, count, rng)
    z0 = np.asarray(init, dtype=float)
    if z0.ndim == 1:
        z0 = np.broadcast_to(z0, (count, z0.size))
    if z0.shape != (count, n):
        raise InvalidDimensionError(f"initial states have shape {z0.shape}, expected ({count}, {n})")
    return np.array(z0, dtype=float)


def _drift_values(drift, config, scale_by_dt):
    """Drift per step at left endpoints, shape ``(G, S, n, n)``."""
    grid = config.grid
    if drift is None:
        return np.zeros((1, grid.steps, config.n, config.n))
    drifts = drift if isinstance(drift, (list, tuple)) else [drift]
    out = np.empty((len(drifts), grid.steps, config.n, config.n))
    for g, d in enumerate(drifts):
        if d.n != config.n:
            raise InvalidDimensionError(f"drift dimension {d.n} does not match config n={config.n}")
        out[g] = d.on_grid(grid.times[:-1])
    if scale_by_dt:
        out *= grid.dt[None, :, None, None]
    return out


def simulate_sphere(z0, config, drift=None, groups=None, rng=None, noise=None, save_at=None):
    """Core g-EM driver used by the prior/posterior samplers.

    ``drift`` is a :class:`ChebyshevDrift`, a list of them (one per group,
    selected per path by ``groups``), or ``None`` for the driftless prior.
    """
    z = np.array(z0, dtype=float)
    count = z.shape[0]
    kdt = _drift_values(drift, config, scale_by_dt=True)
    if noise is not None:
        noise.check(config, count)
        blocks = [(0, noise.time_major())]
    else:
        blocks = _noise_blocks(make_rng(config.seed if rng is None else rng), config.grid, count, config.m)
    return gem_paths(z, kdt, groups, config, blocks, save_at)


def gem_paths(z0, kdt, groups, config, blocks, save_at=None):
    """Run g-EM from ``z0`` given step-scaled drifts ``kdt`` ``(G, S, n, n)``.

    ``blocks`` is an iterable of ``(start_step, increments)`` with time-major
    increments, or a single ``(S, count, m)`` array.
    """
    z = np.array(z0, dtype=float)
    count, n = z.shape
    grid = config.grid
    gid = np.zeros(count, dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
    if gid.shape != (count,) or gid.min(initial=0) < 0 or gid.max(initial=0) >= kdt.shape[0]:
        raise InvalidDimensionError("groups must assign each path to a drift")
    if isinstance(blocks, np.ndarray):
        if blocks.shape != (grid.steps, count, config.m):
            raise InvalidDimensionError(f"increments have shape {blocks.shape}")
        blocks = [(0, blocks)]
    pk, pl = basis_pairs(n)
    idx, rec = _record_plan(grid.steps, save_at)
    out = np.empty((count, idx.size, n))
    if idx[0] == 0:
        out[:, 0] = z
    for start, dw in blocks:
        stop = start + dw.shape[0]
        _kernels.sphere_gem(z, kdt[:, start:stop], gid, dw, config.sigma, pk, pl, rec[start:stop], out)
    return PathSample(grid.times[idx], out, "sphere")


def sample_prior_paths(config, count, rng=None, save_at=None):
    """Driftless prior: uniform initial states, spherical Brownian motion."""
    rng = make_rng(config.seed if rng is None else rng)
    z0 = sample_uniform_sphere(config.n, count, rng)
    return simulate_sphere(z0, config, None, rng=rng, save_at=save_at)


def sample_posterior_paths(init, drift, config, count, rng=None, noise=None, save_at=None):
    """Posterior paths with learnable initial law and drift.

    ``init`` is :class:`PowerSphericalParams`, an array of initial states
    (``(n,)`` for a point mass or ``(count, n)``), or ``None`` for uniform.
    A supplied ``noise`` block replaces the internally drawn increments.
    """
    rng = make_rng(config.seed if rng is None else rng)
    z0 = _init_states(init, config.n, count, rng)
    return simulate_sphere(z0, config, drift, rng=rng, noise=noise, save_at=save_at)


def solve_group_sde(V0, basis, grid, count=1, rng=None, noise=None, P=None, tol=1e-9):
    """Group-valued paths of ``dG = (V0(t) dt + sum_i dw^i V_i) G``, ``G_0 = I``.

    ``basis`` holds the (already scaled) ``V_i``. ``V0(t)`` must equal a
    Lie-algebra element plus the pinning drift ``0.5 * sum_i V_i^2``. Each step
    is checked for membership ``G^T P G = P`` within ``tol``.
    """
    basis = np.asarray(basis, dtype=float)
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    m, n, _ = basis.shape
    P = np.eye(n) if P is None else np.asarray(P, dtype=float)
    pin = 0.5 * np.einsum("mij,mjk->ik", basis, basis)
    if noise is not None:
        if noise.increments.shape != (count, grid.steps, m):
            raise InvalidDimensionError(f"noise block shape {noise.increments.shape} does not match")
        dw = noise.time_major()
    else:
        rng = make_rng(rng)
        dw = rng.standard_normal((grid.steps, count, m)) * np.sqrt(grid.dt)[:, None, None]
    G = np.broadcast_to(np.eye(n), (count, n, n)).copy()
    out = np.empty((count, grid.steps + 1, n, n))
    out[:, 0] = G
    for j, (t, dt) in enumerate(zip(grid.times[:-1], grid.dt)):
        K = np.asarray(V0(t), dtype=float) - pin
        viol = float(np.max(np.abs(K.T @ P + P @ K)))
        if viol > 1e-10:
            raise InvalidInputError(f"tangential drift at t={t} is not in the Lie algebra (violation {viol:.2e})")
        omega = K * dt + np.einsum("pi,ijk->pjk", dw[j], basis)
        G = matrix_exp(omega) @ G
        out[:, j + 1] = G
        worst = max(check_quadratic_membership(g, P, tol)[1] for g in G)
        if worst > tol:
            raise NumericalError(f"group membership lost at step {j + 1} (violation {worst:.2e})")
    return PathSample(grid.times, out.reshape(count, grid.steps + 1, n * n), "group")


def sample_one_point_paths(z0, drift, basis, grid, rng=None, noise=None):
    """One-point motion ``Z = G Z_0`` for an arbitrary noise basis.

    ``drift`` is a callable ``t -> (n, n)`` tangential drift (or ``None``),
    ``basis`` the scaled ``V_i``. Dense and unoptimised; the sphere solvers
    above are the fast path for the standard basis.
    """
    basis = np.asarray(basis, dtype=float)
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    m, n, _ = basis.shape
    z = np.array(np.atleast_2d(z0), dtype=float)
    count = z.shape[0]
    if noise is not None:
        dw = noise.time_major()
        if dw.shape != (grid.steps, count, m):
            raise InvalidDimensionError(f"noise block shape {noise.increments.shape} does not match")
    else:
        dw = make_rng(rng).standard_normal((grid.steps, count, m)) * np.sqrt(grid.dt)[:, None, None]
    out = np.empty((count, grid.steps + 1, n))
    out[:, 0] = z
    for j, (t, dt) in enumerate(zip(grid.times[:-1], grid.dt)):
        omega = np.einsum("pi,ijk->pjk", dw[j], basis)
        if drift is not None:
            omega = omega + np.asarray(drift(t), dtype=float) * dt
        z = expm_action(omega, z)
        out[:, j + 1] = z
    return PathSample(grid.times, out, "sphere")


def euclidean_em_stroock(init, drift, config, count, rng=None, save_at=None):
    """Euler-Maruyama on ``dZ = (K(t) - sigma^2 (n-1)/2) Z dt + sigma (I - Z Z^T) dW``.

    Uses full n-dimensional Gaussian increments and never renormalises, so
    states drift off the sphere at a rate set by the step size.
    """
    rng = make_rng(config.seed if rng is None else rng)
    z = _init_states(init, config.n, count, rng)
    grid = config.grid
    kmat = _drift_values(drift, config, scale_by_dt=False)
    gid = np.zeros(count, dtype=np.int64)
    idx, rec = _record_plan(grid.steps, save_at)
    out = np.empty((count, idx.size, config.n))
    if idx[0] == 0:
        out[:, 0] = z
    dt = grid.dt
    for start, dw in _noise_blocks(rng, grid, count, config.n):
        stop = start + dw.shape[0]
        _kernels.stroock_em(z, kmat[:, start:stop], gid, dt[start:stop], dw, config.sigma, rec[start:stop], out)
    return PathSample(grid.times[idx], out, "euclidean")


@dataclass
class ConvergenceResult:
    dts: np.ndarray
    errors: np.ndarray
    standard_errors: np.ndarray
    order: float
    ref_dt: float

    def to_rows(self):
        return [(float(d), float(e), float(s)) for d, e, s in zip(self.dts, self.errors, self.standard_errors)]


def fit_order(dts, errors):
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 3:
        raise InvalidInputError("fitting an order needs at least 3 step sizes")
    if np.any(errors <= 0):
        raise NumericalError("cannot fit an order to non-positive errors")
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def _ratio(a, b, what):
    r = a / b
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * max(1.0, r):
        raise InvalidInputError(f"{what}: {a} is not an integer multiple of {b}")
    return k


def strong_convergence_study(drift, config, dt_list, ref_dt, count, rng=None, init=None, chunk=256):
    """Mean pathwise endpoint error of coarse g-EM runs against a shared-noise reference.

    The horizon is ``config.grid.t_end``. Coarse increments are sums of the
    fine reference increments, so all runs see the same Brownian path.
    """
    T = config.grid.t_end
    dt_list = sorted((float(d) for d in dt_list), reverse=True)
    if len(dt_list) < 3:
        raise InvalidInputError("a convergence study needs at least 3 step sizes")
    n_ref = _ratio(T, ref_dt, "reference step")
    ratios = [_ratio(d, ref_dt, "coarse step") for d in dt_list]
    for d in dt_list:
        _ratio(T, d, "horizon")
    rng = make_rng(config.seed if rng is None else rng)
    z0_all = _init_states(init, config.n, count, rng)
    m = config.m
    errs = [np.empty(count) for _ in dt_list]
    ref_cfg = SolverConfig(config.n, config.sigma, TimeGrid.uniform(T, n_ref), config.seed)
    coarse_cfgs = [SolverConfig(config.n, config.sigma, TimeGrid.uniform(T, n_ref // r), config.seed) for r in ratios]
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        c = stop - start
        fine = rng.standard_normal((n_ref, c, m)) * math.sqrt(ref_dt)
        ref = _endpoint(z0_all[start:stop], ref_cfg, drift, fine)
        for e, r, cfg in zip(errs, ratios, coarse_cfgs):
            coarse = fine.reshape(n_ref // r, r, c, m).sum(axis=1)
            e[start:stop] = np.linalg.norm(_endpoint(z0_all[start:stop], cfg, drift, coarse) - ref, axis=1)
    errors = np.array([e.mean() for e in errs])
    ses = np.array([e.std(ddof=1) / math.sqrt(count) for e in errs])
    return ConvergenceResult(np.array(dt_list), errors, ses, fit_order(dt_list, errors), float(ref_dt))


def _endpoint(z0, config, drift, dw_time_major):
    noise = NoiseBlock(np.swapaxes(dw_time_major, 0, 1))
    return simulate_sphere(z0, config, drift, noise=noise, save_at=[config.grid.steps]).final
