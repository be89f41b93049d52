"""Inner stepping loops, compiled with numba or run as vectorised numpy.

Both variants have the same signature and advance a block of time steps in
place. Dispatch happens per call through :func:`geomsde._backend.use_jit`.

Shared argument conventions
---------------------------
z : (P, n)
    Current states, overwritten with the states after the block.
drift : (G, S, n, n)
    Per-group drift; g-EM kernels take it pre-multiplied by the step size.
gid : (P,) int64
    Drift group of each path.
dw : (S, P, m) or (S, P, n)
    Brownian increments for the block, time-major.
rec : (S,) int64
    Output slot for the state after each step, or -1 to skip recording.
out : (P, R, n)
    Recorded states.
"""

import numpy as np

from . import _backend
from .lie import expm_action

_MAX_TERMS = 30

if _backend.HAS_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _expv_taylor_nb(A, v, term, tmp):
        n = v.shape[0]
        norm = 0.0
        for i in range(n):
            row = 0.0
            for j in range(n):
                row += abs(A[i, j])
            if row > norm:
                norm = row
        s = 0
        while norm > 0.5:
            norm *= 0.5
            s += 1
        scale = 0.5**s
        for _ in range(1 << s):
            for i in range(n):
                term[i] = v[i]
            bound = 1.0
            for k in range(1, _MAX_TERMS + 1):
                c = scale / k
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += A[i, j] * term[j]
                    tmp[i] = acc * c
                for i in range(n):
                    term[i] = tmp[i]
                    v[i] += tmp[i]
                # ||term_k|| <= norm^k / k! * ||v||
                bound *= norm / k
                if bound < 1e-18:
                    break

    @njit(cache=True)
    def _gem2_nb(z, p, kdt, dw, sigma):
        # exp([[0, w], [-w, 0]]) is a planar rotation by -w
        w = kdt[0, 1] + sigma * dw[0]
        c = np.cos(w)
        s = np.sin(w)
        x = z[p, 0]
        y = z[p, 1]
        z[p, 0] = c * x + s * y
        z[p, 1] = -s * x + c * y

    @njit(cache=True)
    def _gem3_nb(z, p, kdt, dw, sigma):
        # Cayley-Hamilton for so(3): exp(W) = I + a W + b W^2,
        # a = sin(t)/t, b = (1 - cos t)/t^2, t^2 = sum of squared upper entries.
        w01 = kdt[0, 1] + sigma * dw[0]
        w02 = kdt[0, 2] + sigma * dw[1]
        w12 = kdt[1, 2] + sigma * dw[2]
        x0 = z[p, 0]
        x1 = z[p, 1]
        x2 = z[p, 2]
        y0 = w01 * x1 + w02 * x2
        y1 = -w01 * x0 + w12 * x2
        y2 = -w02 * x0 - w12 * x1
        q0 = w01 * y1 + w02 * y2
        q1 = -w01 * y0 + w12 * y2
        q2 = -w02 * y0 - w12 * y1
        th2 = w01 * w01 + w02 * w02 + w12 * w12
        th = np.sqrt(th2)
        if th < 1e-8:
            a = 1.0 - th2 / 6.0
            b = 0.5 - th2 / 24.0
        else:
            h = 0.5 * th
            sh = np.sin(h) / h
            a = np.sin(th) / th
            b = 0.5 * sh * sh
        z[p, 0] = x0 + a * y0 + b * q0
        z[p, 1] = x1 + a * y1 + b * q1
        z[p, 2] = x2 + a * y2 + b * q2

    @njit(cache=True)
    def _gemn_nb(z, p, kdt, dw, sigma, pk, pl, omega, work):
        n = z.shape[1]
        v = work[0]
        for a in range(n):
            v[a] = z[p, a]
            for b in range(n):
                omega[a, b] = kdt[a, b]
        for i in range(pk.shape[0]):
            w = sigma * dw[i]
            omega[pk[i], pl[i]] += w
            omega[pl[i], pk[i]] -= w
        _expv_taylor_nb(omega, v, work[1], work[2])
        for a in range(n):
            z[p, a] = v[a]

    @njit(cache=True, parallel=True)
    def _sphere_gem_nb(z, kdt, gid, dw, sigma, pk, pl, rec, out):
        P, n = z.shape
        S = dw.shape[0]
        # per-path scratch, reused across steps
        big = n > 3
        omega = np.empty((P if big else 0, n, n))
        work = np.empty((P if big else 0, 3, n))
        for s in range(S):
            for p in prange(P):
                if n == 3:
                    _gem3_nb(z, p, kdt[gid[p], s], dw[s, p], sigma)
                elif n == 2:
                    _gem2_nb(z, p, kdt[gid[p], s], dw[s, p], sigma)
                else:
                    _gemn_nb(z, p, kdt[gid[p], s], dw[s, p], sigma, pk, pl, omega[p], work[p])
            r = rec[s]
            if r >= 0:
                for p in range(P):
                    for i in range(n):
                        out[p, r, i] = z[p, i]

    @njit(cache=True, parallel=True)
    def _stroock_em_nb(z, kmat, gid, dt, dw, sigma, rec, out):
        P, n = z.shape
        S = dw.shape[0]
        c = 0.5 * sigma * sigma * (n - 1)
        scratch = np.empty((P, n))
        for s in range(S):
            h = dt[s]
            for p in prange(P):
                g = gid[p]
                nxt = scratch[p]
                proj = 0.0
                for i in range(n):
                    proj += z[p, i] * dw[s, p, i]
                for i in range(n):
                    kz = 0.0
                    for j in range(n):
                        kz += kmat[g, s, i, j] * z[p, j]
                    nxt[i] = z[p, i] + (kz - c * z[p, i]) * h + sigma * (dw[s, p, i] - z[p, i] * proj)
                for i in range(n):
                    z[p, i] = nxt[i]
            r = rec[s]
            if r >= 0:
                for p in range(P):
                    for i in range(n):
                        out[p, r, i] = z[p, i]


def _sphere_gem_np(z, kdt, gid, dw, sigma, pk, pl, rec, out):
    for s in range(dw.shape[0]):
        omega = kdt[gid, s].copy()
        w = sigma * dw[s]
        omega[:, pk, pl] += w
        omega[:, pl, pk] -= w
        z[:] = expm_action(omega, z)
        if rec[s] >= 0:
            out[:, rec[s]] = z


def _stroock_em_np(z, kmat, gid, dt, dw, sigma, rec, out):
    n = z.shape[1]
    c = 0.5 * sigma * sigma * (n - 1)
    for s in range(dw.shape[0]):
        kz = np.einsum("pij,pj->pi", kmat[gid, s], z)
        proj = np.einsum("pi,pi->p", z, dw[s])
        z[:] = z + (kz - c * z) * dt[s] + sigma * (dw[s] - z * proj[:, None])
        if rec[s] >= 0:
            out[:, rec[s]] = z


def sphere_gem(z, kdt, gid, dw, sigma, pk, pl, rec, out):
    """g-EM steps on S^{n-1} with noise along the lexicographic so(n) basis."""
    fn = _sphere_gem_nb if _backend.use_jit() else _sphere_gem_np
    fn(z, kdt, gid, dw, float(sigma), pk, pl, rec, out)


def stroock_em(z, kmat, gid, dt, dw, sigma, rec, out):
    """Plain Euler-Maruyama on the ambient form with n-dimensional noise."""
    fn = _stroock_em_nb if _backend.use_jit() else _stroock_em_np
    fn(z, kmat, gid, dt, dw, float(sigma), rec, out)
