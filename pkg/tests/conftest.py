"""Shared fixtures and sampling helpers for the test suite."""

import numpy as np
import pytest

from ezlearn.geometry import ParamBounds, PursuerParams, rr_value

DEFAULT_LOWER = np.array([-2.0, -2.0, -np.pi, 0.1, 0.5, 0.5])
DEFAULT_UPPER = np.array([2.0, 2.0, np.pi, 1.0, 3.0, 2.0])


@pytest.fixture
def bounds() -> ParamBounds:
    return ParamBounds(DEFAULT_LOWER.copy(), DEFAULT_UPPER.copy())


def random_params(rng: np.random.Generator) -> PursuerParams:
    """A pursuer drawn uniformly from the default box."""
    return PursuerParams.from_array(rng.uniform(DEFAULT_LOWER, DEFAULT_UPPER))


def random_reachable_target(rng: np.random.Generator, params: PursuerParams) -> np.ndarray:
    """A point outside both turning discs (where turn-straight paths exist)."""
    pos = np.array([params.x, params.y])
    n = np.array([-np.sin(params.heading), np.cos(params.heading)])
    while True:
        target = pos + rng.uniform(-8.0, 8.0, size=2)
        if (
            np.linalg.norm(target - (pos + params.turn_radius * n)) > params.turn_radius + 1e-6
            and np.linalg.norm(target - (pos - params.turn_radius * n)) > params.turn_radius + 1e-6
        ):
            return target


def random_outside_point(rng: np.random.Generator, params: PursuerParams) -> np.ndarray:
    """A point strictly outside the reachable region."""
    pos = np.array([params.x, params.y])
    while True:
        target = pos + rng.uniform(-10.0, 10.0, size=2)
        if rr_value(target, params) > 1e-3:
            return target
