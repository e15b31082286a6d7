"""Active selection of the next sacrificial trajectory.

Two strategies are provided.  The geometric one (suited to boundary-type
interceptions) spreads predicted interception points away from past ones to
probe fresh stretches of the reachable-region boundary.  The
information-theoretic one scores candidate trajectories by the expected gain
in the log-determinant of a Gauss-Newton information accumulator (a
D-optimality score) and suits interior-type interceptions, whose capture
points are far less informative individually.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import CandidateSet, Dataset, InterceptionModel
from .geometry import PursuerParams, rr_gradient, rr_gradients, rr_values
from .losses import LossConfig, _traj_samples
from .truthsim import TrajectorySpec, domain_exit_time

RIDGE = 1e-6
PSD_TOL = 1e-10
_N_PATH_SAMPLES = 128
_BISECT_ITERS = 40


@dataclass(frozen=True)
class SelectionGrid:
    """Exhaustive (start angle, heading) search grid.

    Headings are searched within ``psi_halfwidth`` of the bearing from each
    start point to the candidate-mean pursuer position.
    """

    n_alpha: int = 64
    n_psi: int = 32
    psi_halfwidth: float = np.pi / 3

    def __post_init__(self):
        if self.n_alpha < 4 or self.n_psi < 4:
            raise ValueError("grid needs at least 4 cells per axis")
        if not 0 < self.psi_halfwidth <= np.pi:
            raise ValueError("psi_halfwidth must be in (0, pi]")


@dataclass(frozen=True)
class PredictedInterceptions:
    """Ensemble forecast for one trajectory spec."""

    flags: np.ndarray  # bool per candidate
    hit_points: list  # Point2 per candidate, None where no interception
    p_hat: float
    centroid: np.ndarray | None


def zero_info() -> np.ndarray:
    return np.zeros((6, 6))


def _check_psd(m: np.ndarray) -> None:
    if m.shape != (6, 6) or not np.allclose(m, m.T, atol=1e-9):
        raise ValueError("information matrix must be symmetric 6x6")
    if np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) < -PSD_TOL:
        raise ValueError("information matrix is not PSD within tolerance")


def _path_points(spec: TrajectorySpec, domain_radius: float, n: int):
    t_exit = domain_exit_time(spec, spec.center, domain_radius)
    times = np.linspace(0.0, t_exit, n)
    pts = spec.start[None, :] + (spec.speed * times)[:, None] * spec.direction[None, :]
    return times, pts


def _first_crossing_times(
    vals: np.ndarray, times: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per row: first index where the sampled field turns negative.

    Returns (flags, t_lo, t_hi) bracketing the sign change; rows already
    negative at the first sample get a degenerate bracket at t=0.
    """
    neg = vals < 0
    flags = neg.any(axis=1)
    first = np.where(flags, neg.argmax(axis=1), 0)
    t_hi = times[first]
    t_lo = times[np.maximum(first - 1, 0)]
    immediate = flags & (first == 0)
    t_lo = np.where(immediate, 0.0, t_lo)
    return flags, t_lo, t_hi


def _refine_crossings(
    theta: PursuerParams,
    starts: np.ndarray,
    dirs: np.ndarray,
    speed: float,
    t_lo: np.ndarray,
    t_hi: np.ndarray,
) -> np.ndarray:
    """Vectorized bisection of sign changes along many straight paths."""
    lo, hi = t_lo.copy(), t_hi.copy()
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        pts = starts + (speed * mid)[:, None] * dirs
        inside = rr_values(pts, theta) < 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return starts + (speed * hi)[:, None] * dirs


def predicted_interceptions(
    cands: CandidateSet,
    spec: TrajectorySpec,
    model: InterceptionModel,
    domain_radius: float,
    n_samples: int = _N_PATH_SAMPLES,
) -> PredictedInterceptions:
    """Forecast whether each ensemble member would intercept the spec."""
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    times, pts = _path_points(spec, domain_radius, n_samples)
    flags = np.zeros(len(cands), dtype=bool)
    hit_points: list = [None] * len(cands)
    for j, theta in enumerate(cands.params):
        vals = rr_values(pts, theta)
        inside = vals < 0
        if not inside.any():
            continue
        flags[j] = True
        if model is InterceptionModel.INTERIOR:
            hit_points[j] = pts[inside].mean(axis=0)
        else:
            f, t_lo, t_hi = _first_crossing_times(vals[None, :], times)
            hit_points[j] = _refine_crossings(
                theta,
                spec.start[None, :],
                spec.direction[None, :],
                spec.speed,
                t_lo,
                t_hi,
            )[0]
    p_hat = float(flags.mean())
    hits = [h for h in hit_points if h is not None]
    centroid = np.mean(hits, axis=0) if hits else None
    return PredictedInterceptions(flags, hit_points, p_hat, centroid)


def _grid_specs(
    grid: SelectionGrid,
    r_s: float,
    center: np.ndarray,
    aim: np.ndarray,
    speed: float,
) -> list[TrajectorySpec]:
    """All (alpha, psi) cells, alpha-major, for deterministic tie-breaking."""
    center = np.asarray(center, dtype=float)
    alphas = np.linspace(-np.pi, np.pi, grid.n_alpha, endpoint=False)
    offsets = np.linspace(-grid.psi_halfwidth, grid.psi_halfwidth, grid.n_psi)
    specs = []
    for alpha in alphas:
        start = center + r_s * np.array([np.cos(alpha), np.sin(alpha)])
        bearing = np.arctan2(aim[1] - start[1], aim[0] - start[0])
        for off in offsets:
            specs.append(
                TrajectorySpec(
                    alpha=float(alpha),
                    heading=float(bearing + off),
                    speed=speed,
                    standoff_radius=r_s,
                    center=center,
                )
            )
    return specs


def _ensemble_forecast(
    cands: CandidateSet,
    specs: list[TrajectorySpec],
    model: InterceptionModel,
    domain_radius: float,
    n_samples: int,
):
    """Vectorized predicted_interceptions over every grid cell at once.

    Returns (p_hat[n_cells], centroid[n_cells, 2] with NaN where absent,
    hit_pts[n_cands, n_cells, 2] NaN-padded).
    """
    n_cells = len(specs)
    starts = np.array([s.start for s in specs])
    dirs = np.array([s.direction for s in specs])
    speed = specs[0].speed
    all_times = np.empty((n_cells, n_samples))
    all_pts = np.empty((n_cells, n_samples, 2))
    for i, s in enumerate(specs):
        all_times[i], all_pts[i] = _path_points(s, domain_radius, n_samples)
    flat_pts = all_pts.reshape(-1, 2)

    n_cands = len(cands)
    flags = np.zeros((n_cands, n_cells), dtype=bool)
    hit_pts = np.full((n_cands, n_cells, 2), np.nan)
    for j, theta in enumerate(cands.params):
        vals = rr_values(flat_pts, theta).reshape(n_cells, n_samples)
        inside = vals < 0
        fj = inside.any(axis=1)
        flags[j] = fj
        if not fj.any():
            continue
        if model is InterceptionModel.INTERIOR:
            w = inside[fj].astype(float)
            w /= w.sum(axis=1, keepdims=True)
            hit_pts[j, fj] = np.einsum("cs,csk->ck", w, all_pts[fj])
        else:
            rows = np.flatnonzero(fj)
            neg = inside[rows]
            first = neg.argmax(axis=1)
            t_hi = all_times[rows, first]
            t_lo = np.where(first > 0, all_times[rows, np.maximum(first - 1, 0)], 0.0)
            hit_pts[j, rows] = _refine_crossings(
                theta, starts[rows], dirs[rows], speed, t_lo, t_hi
            )
    p_hat = flags.mean(axis=0)
    filled = np.where(np.isnan(hit_pts), 0.0, hit_pts)
    counts = flags.sum(axis=0).astype(float)
    centroid = filled.sum(axis=0) / np.maximum(counts, 1.0)[:, None]
    centroid[counts == 0] = np.nan
    return p_hat, centroid, hit_pts


def _fallback_spec(
    cands: CandidateSet, r_s: float, center: np.ndarray, speed: float
) -> TrajectorySpec:
    """Aim straight at the candidate-mean pursuer position."""
    center = np.asarray(center, dtype=float)
    mean = np.array([cands.mean.x, cands.mean.y])
    rel = mean - center
    alpha = float(np.arctan2(rel[1], rel[0]) + np.pi)  # start on the far side
    start = center + r_s * np.array([np.cos(alpha), np.sin(alpha)])
    heading = float(np.arctan2(mean[1] - start[1], mean[0] - start[0]))
    return TrajectorySpec(
        alpha=alpha, heading=heading, speed=speed, standoff_radius=r_s, center=center
    )


def select_boundary(
    cands: CandidateSet,
    past_hits: list,
    grid: SelectionGrid,
    r_s: float,
    center,
    domain_radius: float | None = None,
    speed: float = 1.0,
    n_samples: int = _N_PATH_SAMPLES,
    min_p_hat: float = 0.5,
) -> TrajectorySpec:
    """Pick the cell whose predicted interception centroid is farthest from
    every past interception (maximin spread along the boundary).

    Only cells where at least ``min_p_hat`` of the ensemble predicts an
    interception qualify (relaxed to the best available probability when no
    cell reaches it): cells that only a stray candidate would intercept tend
    to graze past the true region and waste the agent.
    """
    center = np.asarray(center, dtype=float)
    if domain_radius is None:
        domain_radius = 2.0 * r_s
    mean = np.array([cands.mean.x, cands.mean.y])
    specs = _grid_specs(grid, r_s, center, mean, speed)
    p_hat, centroid, _ = _ensemble_forecast(
        cands, specs, InterceptionModel.BOUNDARY, domain_radius, n_samples
    )
    if p_hat.max() <= 0:
        return _fallback_spec(cands, r_s, center, speed)
    has = p_hat >= min(min_p_hat, p_hat.max())
    utility = np.full(len(specs), -np.inf)
    if past_hits:
        past = np.asarray(past_hits, dtype=float).reshape(-1, 2)
        d = np.linalg.norm(centroid[has, None, :] - past[None, :, :], axis=2)
        utility[has] = d.min(axis=1)
    else:
        utility[has] = np.linalg.norm(centroid[has] - mean, axis=1)
    if not np.isfinite(utility).any():
        return _fallback_spec(cands, r_s, center, speed)
    return specs[int(np.argmax(utility))]


def gn_increment(
    theta: PursuerParams,
    traj: np.ndarray,
    outcome: int,
    hit_point,
    cfg: LossConfig,
) -> np.ndarray:
    """Rank-one Gauss-Newton curvature surrogate for one (hypothetical or
    realized) engagement outcome under candidate ``theta``."""
    if outcome:
        if hit_point is None:
            raise ValueError("hit outcome requires a hit point")
        w = max(0.0, rr_values(np.asarray(hit_point)[None, :], theta)[0] - cfg.eps_pos)
        if w == 0.0:
            return zero_info()
        g, _ = rr_gradient(np.asarray(hit_point, dtype=float), theta)
    else:
        traj = np.asarray(traj, dtype=float).reshape(-1, 2)
        if len(traj) == 0:
            return zero_info()
        vals = rr_values(traj, theta)
        i = int(np.argmax(-vals))
        w = max(0.0, -vals[i] - cfg.eps_pos)
        if w == 0.0:
            return zero_info()
        g, _ = rr_gradient(traj[i], theta)
    return (w * w) * np.outer(g, g)


def accumulate_past_info(
    data: Dataset, cands: CandidateSet, cfg: LossConfig
) -> np.ndarray:
    """Candidate-averaged realized information from all past deployments."""
    total = zero_info()
    n = len(cands)
    for rec in data.records:
        traj = _traj_samples(rec, cfg, data.model)
        for theta in cands.params:
            total += gn_increment(
                theta, traj, int(rec.intercepted), rec.terminal if rec.intercepted else None, cfg
            )
    return total / max(n, 1)


def d_gain(info_past: np.ndarray, delta: np.ndarray) -> float:
    """Log-determinant increase of the ridge-regularized information matrix.

    Nonnegative whenever ``delta`` is positive semidefinite.
    """
    base = info_past + RIDGE * np.eye(6)
    s0, d0 = np.linalg.slogdet(base)
    s1, d1 = np.linalg.slogdet(base + delta)
    if s0 <= 0 or s1 <= 0:
        raise ValueError("information accumulator lost positive definiteness")
    return float(d1 - d0)


def expected_d_gain(
    spec: TrajectorySpec,
    cands: CandidateSet,
    info_past: np.ndarray,
    cfg: LossConfig,
    model: InterceptionModel = InterceptionModel.INTERIOR,
    domain_radius: float | None = None,
    n_samples: int = _N_PATH_SAMPLES,
) -> float:
    """Expected D-optimality gain of deploying ``spec``.

    The hypothetical interception outcome terminates at the ensemble's mean
    predicted capture point; the miss outcome runs the full path.
    """
    _check_psd(info_past)
    if domain_radius is None:
        domain_radius = 2.0 * spec.standoff_radius
    pred = predicted_interceptions(cands, spec, model, domain_radius, n_samples)
    _, pts = _path_points(spec, domain_radius, n_samples)
    delta = zero_info()
    for theta in cands.params:
        inc = pred.p_hat * (
            gn_increment(theta, pts, 1, pred.centroid, cfg)
            if pred.centroid is not None
            else zero_info()
        )
        inc = inc + (1.0 - pred.p_hat) * gn_increment(theta, pts, 0, None, cfg)
        delta += inc
    delta /= len(cands)
    return d_gain(info_past, delta)


def select_bed(
    cands: CandidateSet,
    data: Dataset,
    grid: SelectionGrid,
    r_s: float,
    center,
    cfg: LossConfig,
    model: InterceptionModel = InterceptionModel.INTERIOR,
    domain_radius: float | None = None,
    speed: float = 1.0,
    n_samples: int = _N_PATH_SAMPLES,
) -> TrajectorySpec:
    """Grid arg-max of the expected D-optimality gain."""
    center = np.asarray(center, dtype=float)
    if domain_radius is None:
        domain_radius = 2.0 * r_s
    mean = np.array([cands.mean.x, cands.mean.y])
    specs = _grid_specs(grid, r_s, center, mean, speed)
    n_cells = len(specs)
    info_past = accumulate_past_info(data, cands, cfg)
    _check_psd(info_past)

    p_hat, centroid, _ = _ensemble_forecast(cands, specs, model, domain_radius, n_samples)
    all_pts = np.empty((n_cells, n_samples, 2))
    for i, s in enumerate(specs):
        _, all_pts[i] = _path_points(s, domain_radius, n_samples)

    delta = np.zeros((n_cells, 6, 6))
    has_centroid = ~np.isnan(centroid[:, 0])
    safe_centroid = np.where(has_centroid[:, None], centroid, 0.0)
    for theta in cands.params:
        flat_vals = rr_values(all_pts.reshape(-1, 2), theta).reshape(n_cells, n_samples)
        worst = np.argmax(-flat_vals, axis=1)
        w_miss = np.maximum(0.0, -flat_vals[np.arange(n_cells), worst] - cfg.eps_pos)
        miss_pts = all_pts[np.arange(n_cells), worst]
        cen_vals = rr_values(safe_centroid, theta)
        w_hit = np.where(
            has_centroid, np.maximum(0.0, cen_vals - cfg.eps_pos), 0.0
        )
        need = np.vstack([miss_pts, safe_centroid])
        grads = rr_gradients(need, theta)[1]
        g_miss, g_hit = grads[:n_cells], grads[n_cells:]
        coef = (1.0 - p_hat) * w_miss**2
        delta += coef[:, None, None] * np.einsum("ci,cj->cij", g_miss, g_miss)
        coef = p_hat * w_hit**2
        delta += coef[:, None, None] * np.einsum("ci,cj->cij", g_hit, g_hit)
    delta /= len(cands)

    base = info_past + RIDGE * np.eye(6)
    _, d0 = np.linalg.slogdet(base)
    _, gains = np.linalg.slogdet(base[None, :, :] + delta)
    gains = gains - d0
    if np.max(gains) <= 1e-12:
        return _fallback_spec(cands, r_s, center, speed)
    return specs[int(np.argmax(gains))]
