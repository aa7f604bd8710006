"""Shared fixtures and the acceptance summary hook.

ACCEPTANCE_LINES collects one line per acceptance criterion as the gate
tests run; pytest_terminal_summary prints them after the test report so
they are visible regardless of output capturing.
"""

import numpy as np
import pytest

from mvfh import AreaRecord, Dataset, validate_dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(rng: np.random.Generator, k: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(k, k))
    return scale * (a @ a.T + 0.3 * np.eye(k))


def random_psd(rng: np.random.Generator, k: int, rank: int | None = None) -> np.ndarray:
    r = k if rank is None else rank
    a = rng.normal(size=(k, r))
    return a @ a.T


def random_dataset(seed: int, m: int, k: int, s: int) -> Dataset:
    """A generic well-conditioned dataset with arbitrary covariates."""
    rng = np.random.default_rng(seed)
    areas = []
    for i in range(m):
        X = rng.normal(size=(k, s))
        D = random_spd(rng, k, scale=0.5)
        y = rng.normal(size=k)
        areas.append(AreaRecord(f"area_{i + 1:03d}", y, X, D))
    return validate_dataset(areas)


def survey_dataset(seed: int = 404, m: int = 47) -> Dataset:
    """Synthetic two-indicator survey: k=2 responses, block-design covariates.

    Each response row has its own intercept and one covariate, mirroring a
    pair of linked area-level regressions:

        X_i = [[1, u_i, 0, 0],
               [0, 0, 1, w_i]]
    """
    rng = np.random.default_rng(seed)
    beta = np.array([4.5, 0.8, 12.0, 0.7])
    Psi = np.array([[8.5, 3.0], [3.0, 10.2]])
    L = np.linalg.cholesky(Psi)
    areas = []
    for i in range(m):
        u = rng.uniform(8.0, 16.0)
        w = rng.uniform(2.0, 12.0)
        X = np.array([[1.0, u, 0.0, 0.0], [0.0, 0.0, 1.0, w]])
        D = random_spd(rng, 2, scale=1.2)
        theta = X @ beta + L @ rng.normal(size=2)
        y = theta + np.linalg.cholesky(D) @ rng.normal(size=2)
        areas.append(AreaRecord(f"pref_{i + 1:02d}", y, X, D))
    return validate_dataset(areas)


@pytest.fixture
def survey_data() -> Dataset:
    return survey_dataset()
