import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "aeclab", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "aeclab"))


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def complex_numeric_grad(f, z, h=1e-6):
    """dL/dRe + 1j dL/dIm for a complex array ``z`` (in place)."""
    g = np.zeros(z.shape, dtype=np.complex128)
    for i in np.ndindex(z.shape):
        old = z[i]
        z[i] = old + h
        fp = f()
        z[i] = old - h
        fm = f()
        z[i] = old + 1j * h
        fpi = f()
        z[i] = old - 1j * h
        fmi = f()
        z[i] = old
        g[i] = (fp - fm) / (2 * h) + 1j * (fpi - fmi) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
