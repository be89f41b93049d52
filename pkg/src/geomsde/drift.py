"""Time-varying tangential drift ``K(t) = sum_{i=1}^{K} K_i p_i(t)`` in so(n).

``p_i`` are Chebyshev polynomials of the first kind evaluated at raw ``t``
(no affine rescaling to [-1, 1]); the expansion starts at ``p_1(t) = t``. With
``constant=True`` the single coefficient is returned for every ``t``.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ExtrapolationWarning, InvalidDimensionError, InvalidInputError
from .lie import SKEW_TOL, check_skew


def chebyshev_values(K, t):
    """``[p_1(t), ..., p_K(t)]`` via ``p_{i+1} = 2 t p_i - p_{i-1}``.

    ``t`` may be a scalar (result shape ``(K,)``) or an array (shape ``t.shape + (K,)``).

    >>> chebyshev_values(3, 0.5)
    array([ 0.5, -0.5, -1. ])
    """
    if K < 1:
        raise InvalidInputError(f"number of polynomials must be >= 1, got {K}")
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (K,))
    prev = np.ones_like(t)
    cur = t.copy()
    out[..., 0] = cur
    for i in range(1, K):
        prev, cur = cur, 2.0 * t * cur - prev
        out[..., i] = cur
    return out


@dataclass(frozen=True)
class ChebyshevDrift:
    coefficients: np.ndarray
    interval: tuple = (0.0, 1.0)
    constant: bool = False

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        if coeffs.ndim != 3 or coeffs.shape[1] != coeffs.shape[2] or coeffs.shape[0] < 1:
            raise InvalidDimensionError(f"coefficients must have shape (K, n, n), got {coeffs.shape}")
        if coeffs.shape[1] < 2:
            raise InvalidDimensionError("drift dimension must satisfy n >= 2")
        check_skew(coeffs, SKEW_TOL, name="drift coefficient")
        if self.constant and coeffs.shape[0] != 1:
            raise InvalidInputError("constant drift takes exactly one coefficient")
        lo, hi = (float(x) for x in self.interval)
        if not lo < hi:
            raise InvalidInputError(f"interval must satisfy lo < hi, got {self.interval}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "interval", (lo, hi))

    @property
    def n(self):
        return self.coefficients.shape[1]

    @property
    def K(self):
        return self.coefficients.shape[0]

    @classmethod
    def zeros(cls, n, K=1, constant=False, interval=(0.0, 1.0)):
        return cls(np.zeros((K, n, n)), interval, constant)

    @classmethod
    def constant_drift(cls, matrix, interval=(0.0, 1.0)):
        return cls(np.asarray(matrix, dtype=float)[None], interval, True)

    def weights(self, t):
        t = np.asarray(t, dtype=float)
        if self.constant:
            return np.ones(t.shape + (1,))
        return chebyshev_values(self.K, t)

    def __call__(self, t):
        return eval_drift(self, t)

    def on_grid(self, times):
        """Drift at every time of ``times``, shape ``(len(times), n, n)``."""
        times = np.asarray(times, dtype=float)
        self._warn_outside(times)
        return np.einsum("tk,kij->tij", self.weights(times), self.coefficients)

    def in_interval(self, t):
        lo, hi = self.interval
        t = np.asarray(t, dtype=float)
        return bool(np.all((t >= lo - 1e-12) & (t <= hi + 1e-12)))

    def _warn_outside(self, t):
        if not self.in_interval(t):
            warnings.warn(
                f"drift evaluated outside its interval {self.interval}", ExtrapolationWarning, stacklevel=3
            )

    def scaled(self, a):
        return ChebyshevDrift(a * self.coefficients, self.interval, self.constant)

    def __add__(self, other):
        if not isinstance(other, ChebyshevDrift):
            return NotImplemented
        if other.coefficients.shape != self.coefficients.shape or other.constant != self.constant:
            raise InvalidDimensionError("drifts must share shape and mode to be added")
        return ChebyshevDrift(self.coefficients + other.coefficients, self.interval, self.constant)

    def __mul__(self, a):
        return self.scaled(float(a))

    __rmul__ = __mul__

    def rotated(self, R):
        """Conjugate every coefficient, ``K_i -> R K_i R^T``."""
        return ChebyshevDrift(R @ self.coefficients @ R.T, self.interval, self.constant)

    def to_dict(self):
        return {
            "n": self.n,
            "K": self.K,
            "constant": self.constant,
            "interval": list(self.interval),
            "coefficients": [c.reshape(-1).tolist() for c in self.coefficients],
        }

    @classmethod
    def from_dict(cls, data):
        return drift_from_dict(data)


def eval_drift(drift, t):
    """``K(t)`` as an ``(n, n)`` skew matrix; warns with ExtrapolationWarning outside the interval."""
    drift._warn_outside(t)
    w = drift.weights(float(t))
    return np.tensordot(w, drift.coefficients, axes=1)


_DRIFT_KEYS = {"n", "K", "constant", "interval", "coefficients"}


def drift_from_dict(data, extra_keys=()):
    """Validate and build a :class:`ChebyshevDrift` from its JSON form."""
    if not isinstance(data, dict):
        raise InvalidInputError("drift document must be a JSON object")
    unknown = set(data) - _DRIFT_KEYS - set(extra_keys)
    if unknown:
        raise InvalidInputError(f"unknown drift keys: {sorted(unknown)}")
    missing = {"n", "coefficients"} - set(data)
    if missing:
        raise InvalidInputError(f"missing drift keys: {sorted(missing)}")
    n = data["n"]
    if not isinstance(n, int) or n < 2:
        raise InvalidInputError(f"drift 'n' must be an integer >= 2, got {n!r}")
    try:
        coeffs = np.array(data["coefficients"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"drift 'coefficients' is not numeric: {exc}") from None
    if coeffs.ndim != 2 or coeffs.shape[1] != n * n:
        raise InvalidInputError(f"drift 'coefficients' must be a list of {n * n}-entry row-major matrices")
    K = data.get("K", coeffs.shape[0])
    if K != coeffs.shape[0]:
        raise InvalidInputError(f"drift 'K'={K} disagrees with {coeffs.shape[0]} coefficient matrices")
    interval = data.get("interval", [0.0, 1.0])
    if not (isinstance(interval, (list, tuple)) and len(interval) == 2):
        raise InvalidInputError("drift 'interval' must be [lo, hi]")
    constant = data.get("constant", False)
    if not isinstance(constant, bool):
        raise InvalidInputError("drift 'constant' must be a boolean")
    return ChebyshevDrift(coeffs.reshape(K, n, n), tuple(interval), constant)


def save_drift(drift, path, **extra):
    doc = drift.to_dict()
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_drift(path, extra_keys=()):
    with open(path) as fh:
        data = json.load(fh)
    return drift_from_dict(data, extra_keys), data
