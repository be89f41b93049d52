import numpy as np
import pytest
from hypothesis import settings

from geomsde import _backend

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    if request.param == "numba" and not _backend.HAS_NUMBA:
        pytest.skip("numba not installed")
    previous = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


def random_skew(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) * scale
    return A - A.T


def random_unit(rng, n, count=None):
    shape = (n,) if count is None else (count, n)
    z = rng.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def series_expm(A, terms=40):
    """Plain truncated power series, the independent oracle for small arguments."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
