"""Shared fixtures: seeded study results reused across acceptance checks."""

from __future__ import annotations

import numpy as np
import pytest

from iloca.simgen import (
    run_clustering_study,
    run_simulation_study,
    simulation_setting,
)

ACCEPTANCE_SEED = 20260810


@pytest.fixture(scope="session")
def clustering_studies():
    return {
        ("uniform", 8, 5): run_clustering_study("uniform", 8, 5, 100, ACCEPTANCE_SEED),
        ("lognormal", 8, 5): run_clustering_study("lognormal", 8, 5, 100, ACCEPTANCE_SEED),
        ("uniform", 10, 8): run_clustering_study("uniform", 10, 8, 100, ACCEPTANCE_SEED),
    }


@pytest.fixture(scope="session")
def imputation_studies():
    grid = {}
    for dgp in (1, 2):
        for rm in (1, 2):
            for rate in (0.75, 0.50):
                key = (dgp, rm, rate, False)
                grid[key] = run_simulation_study(
                    simulation_setting(dgp, rm, rate), 100, ACCEPTANCE_SEED
                )
    grid[(1, 1, 0.50, True)] = run_simulation_study(
        simulation_setting(1, 1, 0.50, misspec=True), 100, ACCEPTANCE_SEED
    )
    return grid


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
