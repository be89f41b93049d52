"""Lie-algebraic building blocks for quadratic matrix groups.

Matrices are plain ``numpy`` arrays. A basis of ``so(n)`` is stored as an
``(m, n, n)`` array with ``m = n(n-1)/2``, ordered lexicographically by the
index pair ``(k, l)``, ``k < l``; element ``E_kl`` has ``+1`` at ``(k, l)``
and ``-1`` at ``(l, k)``.
"""

import math

import numpy as np

from .exceptions import InvalidDimensionError, InvalidInputError

SKEW_TOL = 1e-12
SKEW_TOL_ARITH = 1e-10

# After scaling ||A||_1 <= 1/2, so the Taylor series reaches double precision
# well before the term cap.
_EXP_SCALE_TARGET = 0.5
_EXP_MAX_TERMS = 30


def basis_size(n):
    return n * (n - 1) // 2


def basis_pairs(n):
    """Index pairs ``(k, l)`` of the lexicographic ``so(n)`` basis, as two arrays."""
    if n < 2:
        raise InvalidDimensionError(f"dimension must satisfy n >= 2, got n={n}")
    k, l = np.triu_indices(n, k=1)
    return k.astype(np.int64), l.astype(np.int64)


def gen_skew_basis(n):
    """Return the standard basis ``{E_kl : k < l}`` of ``so(n)`` as ``(m, n, n)``.

    >>> gen_skew_basis(2)[0]
    array([[ 0.,  1.],
           [-1.,  0.]])
    """
    k, l = basis_pairs(n)
    m = len(k)
    basis = np.zeros((m, n, n))
    idx = np.arange(m)
    basis[idx, k, l] = 1.0
    basis[idx, l, k] = -1.0
    return basis


def skew_violation(A):
    """Largest entry of ``|A + A^T|``."""
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A + np.swapaxes(A, -1, -2)))) if A.size else 0.0


def check_skew(A, tol=SKEW_TOL, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidDimensionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    viol = skew_violation(A)
    if viol > tol:
        raise InvalidInputError(f"{name} is not skew-symmetric (max |A + A^T| = {viol:.3e} > {tol:.1e})")
    return A


def skew_part(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def skew_from_coords(coords, n):
    """Build skew matrices from upper-triangle coordinates ``(..., m)``."""
    coords = np.asarray(coords, dtype=float)
    k, l = basis_pairs(n)
    out = np.zeros(coords.shape[:-1] + (n, n))
    out[..., k, l] = coords
    out[..., l, k] = -coords
    return out


def coords_from_skew(A):
    A = np.asarray(A, dtype=float)
    k, l = basis_pairs(A.shape[-1])
    return A[..., k, l]


def matrix_exp(A):
    """Matrix exponential by scaling and squaring of a truncated Taylor series.

    Accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``. The scaling
    power is chosen per matrix from its 1-norm so the scaled argument has norm
    at most 1/2.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidDimensionError(f"matrix_exp needs square input, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix_exp input has non-finite entries")
    if A.ndim > 2:
        flat = A.reshape((-1,) + A.shape[-2:])
        return np.stack([_expm_single(a) for a in flat]).reshape(A.shape)
    return _expm_single(A)


def _expm_single(A):
    n = A.shape[0]
    norm = np.abs(A).sum(axis=0).max() if n else 0.0
    s = 0
    if norm > _EXP_SCALE_TARGET:
        s = int(math.ceil(math.log2(norm / _EXP_SCALE_TARGET)))
    B = A / (2.0**s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, _EXP_MAX_TERMS + 1):
        term = term @ B / k
        result = result + term
        if np.abs(term).max() <= 1e-18 * np.abs(result).max():
            break
    for _ in range(s):
        result = result @ result
    return result


def expm_action(A, z):
    """``exp(A) @ z`` without forming ``exp(A)``, for vectors or stacks of vectors.

    ``A`` has shape ``(..., n, n)`` and ``z`` shape ``(..., n)`` with matching
    leading dimensions. Uses the same scaling rule as :func:`matrix_exp`,
    applying the scaled series ``2**s`` times.
    """
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float)
    norm = np.abs(A).sum(axis=-1).max() if A.size else 0.0
    s = 0
    if norm > _EXP_SCALE_TARGET:
        s = int(math.ceil(math.log2(norm / _EXP_SCALE_TARGET)))
    B = A / (2.0**s)
    out = z
    for _ in range(2**s):
        acc = out
        term = out
        for k in range(1, _EXP_MAX_TERMS + 1):
            term = np.einsum("...ij,...j->...i", B, term) / k
            acc = acc + term
            if np.abs(term).max() <= 1e-18 * np.abs(acc).max():
                break
        out = acc
    return out


def check_quadratic_membership(G, P, tol):
    """Test ``G^T P G = P``; returns ``(is_member, max_violation)``."""
    G = np.asarray(G, dtype=float)
    P = np.asarray(P, dtype=float)
    if G.shape != P.shape or G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidDimensionError(f"G and P must be square of equal shape, got {G.shape} and {P.shape}")
    violation = float(np.max(np.abs(G.T @ P @ G - P)))
    return violation <= tol, violation


def pinning_drift(basis, sigma):
    """Pinning component ``(sigma^2 / 2) * sum_i V_i^2`` for unit-scale ``V_i``.

    For the full ``so(n)`` basis this equals ``-sigma^2 (n - 1)/2 * I``.
    """
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 3 or basis.shape[0] == 0:
        raise InvalidInputError("pinning_drift needs a non-empty (m, n, n) basis")
    check_skew(basis, name="basis element")
    return 0.5 * sigma**2 * np.einsum("mij,mjk->ik", basis, basis)


def diffusion_outer_sum(basis, z):
    """``sum_i V_i z z^T V_i^T``; equals ``I - z z^T`` for the full unit basis."""
    basis = np.asarray(basis, dtype=float)
    z = np.asarray(z, dtype=float)
    if abs(np.linalg.norm(z) - 1.0) > 1e-10:
        raise InvalidInputError(f"z must be a unit vector, got norm {np.linalg.norm(z):.12f}")
    Vz = np.einsum("mij,j->mi", basis, z)
    return Vz.T @ Vz
