"""Learning-case bookkeeping, trial records, and dataset containers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import ParamBounds, PursuerParams, wrap_angle

__all__ = [
    "HEADING_INDEX",
    "InterceptionModel",
    "LearningCase",
    "TrialRecord",
    "Dataset",
    "CandidateSet",
    "extract_free",
    "embed_free",
    "summary_stats",
]

HEADING_INDEX = 2

_CASE_MASKS = {
    "1": (True, True, True, False, False, False),
    "2": (True, True, True, True, True, False),
    "3": (True, True, True, True, True, True),
}


class InterceptionModel(enum.Enum):
    BOUNDARY = "boundary"
    INTERIOR = "interior"


@dataclass(frozen=True)
class LearningCase:
    """Which pursuer parameters are free, and what measurements exist.

    Families 1-3 progressively unfreeze (position+heading), (+turn radius,
    range), (+speed); the B variants add measurement noise; family 3 also
    observes pursuer launch times.
    """

    case_id: str

    def __post_init__(self):
        if self.case_id not in {"1A", "1B", "2A", "2B", "3A", "3B"}:
            raise ValueError(f"unknown learning case {self.case_id!r}")

    @property
    def free_mask(self) -> np.ndarray:
        return np.array(_CASE_MASKS[self.case_id[0]])

    @property
    def noisy(self) -> bool:
        return self.case_id.endswith("B")

    @property
    def uses_launch_time(self) -> bool:
        return self.case_id.startswith("3")

    @property
    def n_free(self) -> int:
        return int(self.free_mask.sum())


@dataclass(frozen=True)
class TrialRecord:
    """One sacrificial trajectory with its observed outcome.

    ``positions`` are the (possibly noisy) measured samples at ``times``;
    ``terminal`` is the measured interception point when ``intercepted``,
    otherwise the domain-exit point.
    """

    start: np.ndarray
    heading: float
    speed: float
    times: np.ndarray
    positions: np.ndarray
    intercepted: bool
    t_final: float
    terminal: np.ndarray
    t_launch: Optional[float] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        if len(times) != len(positions):
            raise ValueError("times and positions must have equal length")
        if len(times) and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=float))
        if self.intercepted and len(positions) and not np.array_equal(
            self.terminal, positions[-1]
        ):
            raise ValueError("intercepted record must end at its terminal point")

    def to_dict(self) -> dict:
        return {
            "start": self.start.tolist(),
            "heading": self.heading,
            "speed": self.speed,
            "times": self.times.tolist(),
            "positions": self.positions.tolist(),
            "intercepted": self.intercepted,
            "t_final": self.t_final,
            "terminal": self.terminal.tolist(),
            "t_launch": self.t_launch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            start=np.array(d["start"]),
            heading=d["heading"],
            speed=d["speed"],
            times=np.array(d["times"]),
            positions=np.array(d["positions"]),
            intercepted=d["intercepted"],
            t_final=d["t_final"],
            terminal=np.array(d["terminal"]),
            t_launch=d.get("t_launch"),
        )


@dataclass
class Dataset:
    """Append-only collection of trial records under one case and model."""

    case: LearningCase
    model: InterceptionModel
    sigma_pos: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    sigma_t: float = 0.0
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.sigma_pos = np.asarray(self.sigma_pos, dtype=float)
        if self.sigma_pos.shape != (2, 2) or not np.allclose(
            self.sigma_pos, self.sigma_pos.T
        ):
            raise ValueError("sigma_pos must be a symmetric 2x2 covariance")
        if np.any(np.linalg.eigvalsh(self.sigma_pos) < -1e-12):
            raise ValueError("sigma_pos must be positive semidefinite")

    def append(self, record: TrialRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class CandidateSet:
    """Ensemble of feasible pursuer parameter vectors with their losses."""

    members: tuple  # of (PursuerParams, loss)
    mean: PursuerParams
    std: np.ndarray

    @classmethod
    def from_members(cls, members: Sequence) -> "CandidateSet":
        members = tuple(members)
        if not members:
            raise ValueError("candidate set must be nonempty")
        mean, std = summary_stats([m[0] for m in members])
        return cls(members=members, mean=mean, std=std)

    @property
    def params(self) -> list:
        return [m[0] for m in self.members]

    @property
    def losses(self) -> np.ndarray:
        return np.array([m[1] for m in self.members])

    def __len__(self) -> int:
        return len(self.members)


def extract_free(params: PursuerParams, case: LearningCase) -> np.ndarray:
    """Pull out the free components of a parameter vector in canonical order."""
    return params.as_array()[case.free_mask]


def embed_free(free_values, frozen: PursuerParams, case: LearningCase) -> PursuerParams:
    """Rebuild a full parameter vector from free components plus frozen values."""
    free_values = np.asarray(free_values, dtype=float)
    mask = case.free_mask
    if free_values.shape != (mask.sum(),):
        raise ValueError(
            f"expected {int(mask.sum())} free values for case {case.case_id}, "
            f"got {free_values.shape}"
        )
    full = frozen.as_array()
    full[mask] = free_values
    return PursuerParams.from_array(full)


def _circular_mean_std(angles: np.ndarray):
    c = np.mean(np.cos(angles))
    s = np.mean(np.sin(angles))
    mean = float(np.arctan2(s, c))
    resultant = min(float(np.hypot(c, s)), 1.0)
    if resultant <= 1e-300:
        return mean, np.pi
    return mean, float(np.sqrt(max(-2.0 * np.log(resultant), 0.0)))


def summary_stats(members: Sequence[PursuerParams]):
    """Componentwise mean/std; heading uses circular statistics."""
    if not members:
        raise RuntimeError("cannot summarize an empty candidate list")
    arr = np.array([m.as_array() for m in members])
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    h_mean, h_std = _circular_mean_std(arr[:, HEADING_INDEX])
    mean[HEADING_INDEX] = wrap_angle(h_mean)
    std[HEADING_INDEX] = h_std
    return PursuerParams.from_array(mean), std
