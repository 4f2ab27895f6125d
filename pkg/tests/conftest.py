import os
from pathlib import Path

import numpy as np
import pytest

from esn_feedback.reservoir import Windows

# criterion number -> (status, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(num: int, ok, detail: str):
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    ACCEPTANCE[num] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")


def write_synthetic_ced(path, rows=500, seed=0, header=True):
    """CED-shaped file: PRBS inputs (amplitude 1.5) through a damped nonlinear plant.

    Only the layout matches the benchmark; the numbers are synthetic.
    """
    rng = np.random.default_rng(seed)
    u = np.empty((rows, 3))
    for c in range(3):
        level, k = 1.5, 0
        while k < rows:
            hold = rng.integers(1, 12)
            u[k:k + hold, c] = level
            level = -level
            k += hold
    z = np.zeros((rows, 3))
    for k in range(2, rows):
        z[k] = 1.1 * z[k - 1] - 0.35 * z[k - 2] + 0.25 * np.abs(u[k - 1]) + 0.1 * u[k - 1] * np.tanh(z[k - 1])
    z += 0.01 * rng.standard_normal(z.shape)
    data = np.hstack([u, z])
    lines = []
    if header:
        lines.append("u1,u2,u3,z1,z2,z3")
    lines += [",".join(repr(float(x)) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")
    return data


@pytest.fixture
def ced_file(tmp_path):
    p = tmp_path / "ced.csv"
    write_synthetic_ced(p)
    return p


@pytest.fixture(scope="session")
def real_ced_file():
    """Path to the real benchmark file, taken from ``ESN_CED_FILE`` when set."""
    p = os.environ.get("ESN_CED_FILE")
    return Path(p) if p and Path(p).is_file() else None


@pytest.fixture(scope="session")
def small_windows():
    return Windows(50, 200, 50)
