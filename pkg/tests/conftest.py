"""Shared fixtures and the acceptance-report terminal summary."""

from __future__ import annotations

import math

import numpy as np
import pytest

from cttts.instances import GAUSSIAN, ProblemInstance


def small_gaussian_instance() -> ProblemInstance:
    """Two contexts (3 + 2 designs), hand-set parameters, m=1 each."""
    params = {
        "c0_d0": (3.0, 4.0),
        "c0_d1": (1.0, 9.0),
        "c0_d2": (2.0, 4.0),
        "c1_d0": (0.5, 1.0),
        "c1_d1": (-0.5, 2.0),
    }
    return ProblemInstance(
        family=GAUSSIAN,
        contexts=("c0", "c1"),
        designs_per_context=(("c0_d0", "c0_d1", "c0_d2"), ("c1_d0", "c1_d1")),
        true_params=params,
        m=(1, 1),
        tau=None,
        theta_box=((-20.0, 20.0), (0.01, 100.0)),
    )


def ladder_instance(n_contexts: int = 3, n_designs: int = 5, sd: float = 5.0) -> ProblemInstance:
    """Contexts with means n_designs-1, ..., 1, 0 (spacing 1) and common sd."""
    contexts = tuple(f"c{i}" for i in range(n_contexts))
    designs, params = [], {}
    for ci in range(n_contexts):
        ids = tuple(f"c{ci}_d{j}" for j in range(n_designs))
        designs.append(ids)
        for j, d in enumerate(ids):
            params[d] = (float(n_designs - 1 - j), sd * sd)
    hi = abs(n_designs) + 12.0 * sd
    return ProblemInstance(
        family=GAUSSIAN,
        contexts=contexts,
        designs_per_context=tuple(designs),
        true_params=params,
        m=(1,) * n_contexts,
        tau=None,
        theta_box=((-hi, hi), (sd * sd * 1e-4, sd * sd * 1e4)),
    )


class FixedUniform:
    """Stub standing in for a Generator whose random() yields preset values."""

    def __init__(self, *values: float):
        self._values = list(values)

    def random(self):
        return self._values.pop(0)


@pytest.fixture
def small_instance() -> ProblemInstance:
    return small_gaussian_instance()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def assert_close(actual, expected, tol, label=""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    err = float(np.max(np.abs(actual - expected)))
    assert err <= tol, f"{label} max |err| {err:.3e} > {tol:.1e} (got {actual}, want {expected})"


def binomial_se(p_hat: float, n: int) -> float:
    return math.sqrt(max(p_hat * (1.0 - p_hat), 1e-300) / n)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from tests.test_acceptance import CRITERION_REPORT
    except Exception:
        try:
            from test_acceptance import CRITERION_REPORT  # rootdir layout fallback
        except Exception:
            return
    if not CRITERION_REPORT:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in CRITERION_REPORT:
        terminalreporter.write_line(line)
