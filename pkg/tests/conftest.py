"""Shared test helpers: finite differences and the acceptance summary."""

import numpy as np
import pytest

# (label, passed, detail) rows filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion_recorder():
    def record(label: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((label, passed, detail))
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed, detail in ACCEPTANCE_LINES:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status} {label}: {detail}")


def numeric_grad(fn, values, step=1e-5):
    """Central-difference gradient of a scalar-valued fn at values."""
    values = np.asarray(values, dtype=np.float64)
    grad = np.zeros_like(values)
    flat = values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(values)
        flat[i] = orig - step
        lo = fn(values)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
