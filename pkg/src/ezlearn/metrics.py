"""Evaluation metrics: region areas/overlap, parameter errors, coverage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import CandidateSet, HEADING_INDEX, LearningCase
from .geometry import PursuerParams, rr_values, wrap_angle


@dataclass(frozen=True)
class GridSpec:
    """Cell-center integration grid covering every region of interest."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: int = 256

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError("resolution must be at least 64")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("degenerate grid extent")

    @classmethod
    def covering(cls, params_list, resolution: int = 256, pad: float = 0.1) -> "GridSpec":
        """Extent covering each parameter vector's full reach, padded 10%.

        The farthest reachable point lies within a turn circle plus the
        range: |center| + 2a + R is a safe outer bound.
        """
        params_list = list(params_list)
        if not params_list:
            raise ValueError("no regions to cover")
        reach = max(
            np.hypot(p.x, p.y) + 2.0 * p.turn_radius + p.engagement_range
            for p in params_list
        )
        r = reach * (1.0 + pad)
        return cls(-r, r, -r, r, resolution)

    def cell_centers(self):
        n = self.resolution
        xs = self.x_min + (np.arange(n) + 0.5) * (self.x_max - self.x_min) / n
        ys = self.y_min + (np.arange(n) + 0.5) * (self.y_max - self.y_min) / n
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def cell_area(self) -> float:
        n = self.resolution
        return (self.x_max - self.x_min) / n * (self.y_max - self.y_min) / n


def _membership(points: np.ndarray, params: PursuerParams) -> np.ndarray:
    """In-region mask, short-circuiting cells beyond any possible reach."""
    center = np.array([params.x, params.y])
    reach = 2.0 * params.turn_radius + params.engagement_range
    near = np.einsum("ij,ij->i", points - center, points - center) <= reach**2
    mask = np.zeros(len(points), dtype=bool)
    if near.any():
        mask[near] = rr_values(points[near], params) < 0
    return mask


@dataclass(frozen=True)
class RegionMetrics:
    area_true: float
    area_union: float
    union_ratio: float
    coverage_fraction: float


def region_metrics(
    truth: PursuerParams, cands: CandidateSet, grid: GridSpec
) -> RegionMetrics:
    """Areas of the true reachable region vs. the candidate union."""
    pts = grid.cell_centers()
    true_mask = _membership(pts, truth)
    union = np.zeros(len(pts), dtype=bool)
    for theta in cands.params:
        union |= _membership(pts, theta)
    a = grid.cell_area
    area_true = float(true_mask.sum()) * a
    area_union = float(union.sum()) * a
    ratio = area_union / area_true if area_true > 0 else np.inf
    cover = (
        float((true_mask & union).sum()) / float(true_mask.sum())
        if true_mask.any()
        else 1.0
    )
    return RegionMetrics(area_true, area_union, ratio, cover)


def param_error(
    truth: PursuerParams, mean: PursuerParams, case: LearningCase
) -> np.ndarray:
    """Absolute per-component error; frozen components report 0."""
    err = np.abs(truth.as_array() - mean.as_array())
    err[HEADING_INDEX] = abs(wrap_angle(truth.heading - mean.heading))
    err[~case.free_mask] = 0.0
    return err


def coverage_table(histories, thresholds) -> dict[float, float]:
    """Fraction of all (run, step) pairs whose coverage meets each threshold.

    ``histories`` must carry per-step ``coverage_fraction`` values in a
    ``step_coverage`` attribute or be an iterable of per-step coverage lists.
    """
    cover = []
    for h in histories:
        cover.extend(h.step_coverage if hasattr(h, "step_coverage") else h)
    if not cover:
        raise ValueError("no steps to tabulate")
    cover = np.asarray(cover, dtype=float)
    return {float(t): float(np.mean(cover >= t)) for t in thresholds}


def normalized_path_time(planned_tf: float, perfect_tf: float) -> float:
    if perfect_tf <= 0:
        raise ValueError("perfect-information time must be positive")
    return planned_tf / perfect_tf
