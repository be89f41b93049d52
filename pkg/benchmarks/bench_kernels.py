"""Compare the numba and numpy stepping kernels.

Run with ``python benchmarks/bench_kernels.py [--paths P] [--steps S]``.
Both backends advance identical states with identical increments; the
script reports wall time per backend and the largest disagreement.
"""

import argparse
import time

import numpy as np

from geomsde import _backend, _kernels
from geomsde.lie import basis_pairs, basis_size


def _setup(n, paths, steps, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((paths, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    k, l = basis_pairs(n)
    K = np.zeros((n, n))
    K[0, 1], K[1, 0] = 1.0, -1.0
    dt = 1.0 / steps
    kdt = np.broadcast_to(K * dt, (1, steps, n, n)).copy()
    gid = np.zeros(paths, dtype=np.int64)
    dw_gem = rng.standard_normal((steps, paths, basis_size(n))) * np.sqrt(dt)
    dw_em = rng.standard_normal((steps, paths, n)) * np.sqrt(dt)
    rec = np.full(steps, -1, dtype=np.int64)
    rec[-1] = 0
    return z, k, l, kdt, gid, dw_gem, dw_em, rec, np.full(steps, dt)


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(n, paths, steps, repeats=3):
    z, k, l, kdt, gid, dw_gem, dw_em, rec, dt = _setup(n, paths, steps)
    kmat = kdt / dt[0]
    rows = []
    for name, call in [
        ("g-EM", lambda zz, out: _kernels.sphere_gem(zz, kdt, gid, dw_gem, 0.5, k, l, rec, out)),
        ("Euclidean EM", lambda zz, out: _kernels.stroock_em(zz, kmat, gid, dt, dw_em, 0.5, rec, out)),
    ]:
        results = {}
        for backend in ("numba", "numpy"):
            previous = _backend.set_backend(backend)
            try:
                # warm-up on the same layouts so compilation is not timed
                call(z.copy(), np.empty((paths, 1, n)))

                def run():
                    zz = z.copy()
                    out = np.empty((paths, 1, n))
                    call(zz, out)
                    return out

                results[backend] = _time(run, repeats)
            finally:
                _backend.set_backend(previous)
        (t_nb, a), (t_np, b) = results["numba"], results["numpy"]
        rows.append((name, n, paths, steps, t_nb, t_np, float(np.max(np.abs(a - b)))))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=2000)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--dims", type=str, default="2,3,8")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if not _backend.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<13} {'n':>3} {'paths':>7} {'steps':>6} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'max diff':>9}")
    for n in (int(x) for x in args.dims.split(",")):
        for name, n_, P, S, t_nb, t_np, diff in bench(n, args.paths, args.steps, args.repeats):
            print(f"{name:<13} {n_:>3} {P:>7} {S:>6} {t_nb:>9.4f} {t_np:>9.4f} {t_np / t_nb:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
