"""Ground-truth engagement simulator.

Generates trial records by flying straight-line sacrificial agents against
a hidden true pursuer under either interception model, with optional
additive measurement noise.  The true (pre-noise) trajectory always drives
the interception decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import InterceptionModel, TrialRecord
from .geometry import PursuerParams, path_lengths, rr_value, rr_values

__all__ = ["TrajectorySpec", "NoiseSpec", "simulate_engagement", "domain_exit_time"]


@dataclass(frozen=True)
class TrajectorySpec:
    """Straight inbound probe: start on a standoff circle, fixed heading."""

    alpha: float  # angular position of the start point on the circle
    heading: float
    speed: float
    standoff_radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.standoff_radius <= 0 or self.speed <= 0:
            raise ValueError("standoff_radius and speed must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def start(self) -> np.ndarray:
        return self.center + self.standoff_radius * np.array(
            [np.cos(self.alpha), np.sin(self.alpha)]
        )

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading)])


@dataclass(frozen=True)
class NoiseSpec:
    sigma_pos: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    sigma_t: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        sigma = np.asarray(self.sigma_pos, dtype=float)
        if sigma.shape != (2, 2) or not np.allclose(sigma, sigma.T):
            raise ValueError("sigma_pos must be a symmetric 2x2 covariance")
        if np.any(np.linalg.eigvalsh(sigma) < -1e-12):
            raise ValueError("sigma_pos must be positive semidefinite")
        object.__setattr__(self, "sigma_pos", sigma)


def domain_exit_time(spec: TrajectorySpec, center, radius: float) -> float:
    """Time at which the straight path leaves the disc of interest."""
    rel = spec.start - np.asarray(center, dtype=float)
    d = spec.direction * spec.speed
    # |rel + d t| = radius
    a = d @ d
    b = 2.0 * rel @ d
    c = rel @ rel - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ValueError("trajectory start lies outside the domain of interest")
    t = (-b + np.sqrt(disc)) / (2 * a)
    if t <= 0:
        raise ValueError("trajectory exits the domain immediately")
    return float(t)


def _refine_boundary_crossing(truth, start, direction, speed, t_lo, t_hi):
    """Bisect the first entry of the path into the reachable region.

    The terminal is always a point of the commanded ray.  At a smooth part
    of the region boundary the reachability field vanishes there; where the
    path enters through a discontinuous turning-disc arc the field jumps,
    so the terminal is the on-ray entry point with the field still negative
    (the instant before, it is positive).
    """
    for _ in range(120):
        t_mid = 0.5 * (t_lo + t_hi)
        if rr_value(start + speed * t_mid * direction, truth) > 0:
            t_lo = t_mid
        else:
            t_hi = t_mid
    return t_hi, start + speed * t_hi * direction


def simulate_engagement(
    truth: PursuerParams,
    spec: TrajectorySpec,
    model: InterceptionModel,
    noise: NoiseSpec,
    domain_radius: float,
    dt: Optional[float] = None,
    seed=0,
    record_launch_time: bool = False,
) -> TrialRecord:
    """Fly one sacrificial agent and record what its sensors would report."""
    rng = np.random.default_rng(seed)
    start = spec.start
    if rr_value(start, truth) < 0:
        raise ValueError("sacrificial start point lies inside the true reachable region")
    if dt is None:
        dt = 0.01 * spec.standoff_radius / spec.speed
    if dt <= 0:
        raise ValueError("dt must be positive")

    t_exit = domain_exit_time(spec, spec.center, domain_radius)
    n_steps = max(int(np.ceil(t_exit / dt)), 2)
    times = np.linspace(0.0, t_exit, n_steps + 1)
    positions = start[None, :] + (spec.speed * times)[:, None] * spec.direction[None, :]
    values = rr_values(positions, truth)

    intercepted = False
    if model is InterceptionModel.BOUNDARY:
        inside = values < 0
        if inside.any():
            k = int(np.argmax(inside))  # first sample inside; bracket is (k-1, k)
            t_hit, hit = _refine_boundary_crossing(
                truth, start, spec.direction, spec.speed, times[k - 1], times[k]
            )
            keep = times < t_hit - 1e-12
            times = np.append(times[keep], t_hit)
            positions = np.vstack([positions[keep], hit])
            intercepted = True
    else:
        inside = values < 0
        if inside.any():
            k = int(rng.choice(np.flatnonzero(inside)))
            times = times[: k + 1]
            positions = positions[: k + 1]
            intercepted = True

    t_final = float(times[-1])
    terminal_true = positions[-1].copy()
    return _finalize_record(
        spec,
        times,
        positions,
        intercepted,
        t_final,
        terminal_true,
        truth,
        noise,
        rng,
        record_launch_time,
    )


def _finalize_record(
    spec, times, positions, intercepted, t_final, terminal_true, truth, noise, rng, record_launch_time
):
    t_launch = None
    if intercepted and record_launch_time:
        travel = float(path_lengths(terminal_true[None, :], truth)[0])
        t_launch = t_final - travel / truth.speed

    measured = positions
    if noise.enabled:
        if np.any(noise.sigma_pos):
            chol = np.linalg.cholesky(noise.sigma_pos + 1e-18 * np.eye(2))
            measured = positions + rng.standard_normal(positions.shape) @ chol.T
        if t_launch is not None and noise.sigma_t > 0:
            t_launch += float(rng.normal(0.0, noise.sigma_t))

    return TrialRecord(
        start=spec.start,
        heading=spec.heading,
        speed=spec.speed,
        times=times,
        positions=measured,
        intercepted=intercepted,
        t_final=t_final,
        terminal=measured[-1].copy(),
        t_launch=t_launch,
    )
