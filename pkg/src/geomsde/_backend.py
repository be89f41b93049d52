"""Kernel backend selection.

Hot loops have a numba implementation and a vectorised numpy one. The numba
path is the default; set ``GEOMSDE_DISABLE_JIT=1`` in the environment to force
the numpy path (also switchable at runtime with :func:`set_backend`).
"""

import os

try:
    import numba

    HAS_NUMBA = True
    # prefer OpenMP; the TBB probe warns loudly when the installed TBB is old
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_TRUE = {"1", "true", "yes", "on"}

_use_jit = HAS_NUMBA and os.environ.get("GEOMSDE_DISABLE_JIT", "").lower() not in _TRUE


def use_jit():
    return _use_jit


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _use_jit
    previous = backend()
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_jit = True
    elif name == "numpy":
        _use_jit = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def backend():
    return "numba" if _use_jit else "numpy"


def set_threads(threads):
    """Set the numba worker count; ``0`` means all available cores."""
    if not HAS_NUMBA:
        return
    if threads is None:
        env = os.environ.get("GEOMSDE_THREADS")
        threads = int(env) if env else 0
    if threads < 0:
        raise ValueError("threads must be >= 0")
    if threads == 0:
        threads = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
