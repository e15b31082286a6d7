"""Hinge-style losses scoring candidate pursuer parameters against trial data.

Every observed engagement constrains the pursuer's reachable region: an
intercepted agent's terminal point lies inside or on the region while the
instant before capture it was still outside (under the boundary capture law
this pinches the region boundary at the terminal), and no sampled point of
a surviving trajectory may lie strictly inside it.  The losses below turn
those constraints into squared-hinge penalties that vanish exactly at the
true parameter vector on noise-free data.

The reachability field jumps across the pursuer's forward heading ray
(where the optimal turn angle wraps) and is undefined inside the overlap
of the two turning discs.  Raw hinges on the field would therefore jump
discontinuously as a candidate's ray or discs sweep over a data point,
which defeats line-search descent.  Every hinge argument is instead capped
by the Euclidean distance to the offending structure (``heading_ray_distances``
and ``lens_depth``), which makes the penalties continuous in the parameters
while leaving the zero set — and hence the zero-at-truth property — intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Dataset, InterceptionModel, LearningCase, TrialRecord
from .geometry import (
    PursuerParams,
    heading_ray_distance_gradients,
    heading_ray_distances,
    lens_depth,
    lens_depth_gradients,
    rr_gradients,
    rr_value,
    rr_values,
)

# Margin floor applied when the dataset is noise-free, keeping the
# zero-at-truth property robust to roundoff instead of razor-thin.
MARGIN_FLOOR = 1e-6

# Minimum time by which the pinch sample backs off from an intercepted
# terminal.  An interception pins the region boundary between this
# just-before point (outside) and the terminal itself (inside-or-on); the
# pair stays consistent even where the boundary is a discontinuous
# turning-disc arc and the field does not vanish at the terminal.  The
# backoff is normally half the survivor cut (one sample spacing): backing
# off less makes the zero-loss set too thin for multi-start descent to
# find it reliably.
PINCH_BACKOFF = 1e-6

_R_SLOT = 4
_VP_SLOT = 5


def resq(x: float) -> float:
    """Squared hinge: 0.5 * max(0, x)**2."""
    return 0.5 * max(0.0, x) ** 2 if np.isscalar(x) else 0.5 * np.maximum(0.0, x) ** 2


@dataclass(frozen=True)
class LossConfig:
    """Margins and sampling density for the data-fit losses.

    ``eps_pos`` is the spatial slack granted around the region boundary and
    ``delta_t`` the slack on launch-time residuals; both are derived from the
    dataset's noise levels via the ``beta`` multiplier.
    """

    beta: float = 3.0
    alpha_cut: float = 0.0
    n_traj_samples: int = 200
    eps_pos: float = MARGIN_FLOOR
    delta_t: float = MARGIN_FLOOR

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.n_traj_samples < 2:
            raise ValueError("n_traj_samples must be at least 2")
        if self.alpha_cut < 0:
            raise ValueError("alpha_cut must be nonnegative")

    @classmethod
    def for_dataset(
        cls,
        data: Dataset,
        beta: float = 3.0,
        alpha_cut: float | None = None,
        n_traj_samples: int = 200,
    ) -> "LossConfig":
        """Derive margins from the dataset's noise specification.

        ``eps_pos = beta * sqrt(lambda_max(sigma_pos))`` and
        ``delta_t = beta * sigma_t``, floored for noise-free data.  When
        ``alpha_cut`` is not given it defaults to twice the median sample
        spacing of the records (or 0 for an empty dataset).
        """
        lam = float(np.max(np.linalg.eigvalsh(data.sigma_pos)))
        eps = max(beta * np.sqrt(max(lam, 0.0)), MARGIN_FLOOR)
        delta = max(beta * data.sigma_t, MARGIN_FLOOR)
        if alpha_cut is None:
            spacings = [
                float(np.median(np.diff(r.times)))
                for r in data.records
                if len(r.times) > 1
            ]
            alpha_cut = 2.0 * float(np.median(spacings)) if spacings else 0.0
        return cls(
            beta=beta,
            alpha_cut=alpha_cut,
            n_traj_samples=n_traj_samples,
            eps_pos=eps,
            delta_t=delta,
        )


def _interp_positions(rec: TrialRecord, times: np.ndarray) -> np.ndarray:
    x = np.interp(times, rec.times, rec.positions[:, 0])
    y = np.interp(times, rec.times, rec.positions[:, 1])
    return np.column_stack([x, y])


def _traj_samples(
    rec: TrialRecord, cfg: LossConfig, model: InterceptionModel
) -> np.ndarray:
    """Resampled survivor-constraint points for one record.

    Intercepted boundary-model records stop ``alpha_cut`` before the capture
    time (the closing moments necessarily graze the boundary); every other
    record type is sampled across its full duration.  Interior-model
    interceptions contribute no survivor constraint at all.
    """
    t0 = rec.times[0]
    if rec.intercepted:
        if model is InterceptionModel.INTERIOR:
            return np.empty((0, 2))
        t1 = max(t0, rec.t_final - cfg.alpha_cut)
    else:
        t1 = rec.t_final
    times = np.linspace(t0, t1, cfg.n_traj_samples)
    pts = _interp_positions(rec, times)
    if rec.intercepted:
        # pinch sample: one sample spacing before capture the agent was
        # still outside
        backoff = max(0.5 * cfg.alpha_cut, PINCH_BACKOFF / rec.speed)
        t_pinch = rec.t_final - backoff
        if t_pinch > t0:
            pts = np.vstack([pts, _interp_positions(rec, np.array([t_pinch]))])
    return pts


class LossEvaluator:
    """Precomputes per-record sample points so repeated evaluations at many
    candidate parameter vectors cost a single vectorized reachability pass.
    """

    def __init__(self, data: Dataset, cfg: LossConfig):
        if not data.records:
            raise ValueError("dataset has no records")
        self.data = data
        self.cfg = cfg
        self.case = data.case

        traj_blocks: list[np.ndarray] = []
        self._traj_slices: list[slice] = []
        self._terminals: list[np.ndarray | None] = []
        self._launch: list[tuple[float, float] | None] = []
        offset = 0
        for rec in data.records:
            block = _traj_samples(rec, cfg, data.model)
            traj_blocks.append(block)
            self._traj_slices.append(slice(offset, offset + len(block)))
            offset += len(block)
            self._terminals.append(rec.terminal if rec.intercepted else None)
            wants_time = data.case.uses_launch_time and rec.intercepted
            if wants_time:
                if rec.t_launch is None:
                    raise ValueError("record lacks a launch time required by the case")
                self._launch.append((rec.t_final, rec.t_launch))
            else:
                self._launch.append(None)
        self._traj_points = (
            np.vstack(traj_blocks) if offset else np.empty((0, 2))
        )
        term_idx = [i for i, t in enumerate(self._terminals) if t is not None]
        self._term_records = term_idx
        self._term_points = (
            np.array([self._terminals[i] for i in term_idx])
            if term_idx
            else np.empty((0, 2))
        )

    # -- scalar loss ---------------------------------------------------

    def loss(self, theta: PursuerParams) -> float:
        cfg = self.cfg
        if len(self._traj_points):
            traj_phi = rr_values(self._traj_points, theta)
            traj_ray = heading_ray_distances(self._traj_points, theta)
        if len(self._term_points):
            term_phi = rr_values(self._term_points, theta)
            term_ray = heading_ray_distances(self._term_points, theta)
            term_lens = lens_depth(self._term_points, theta)

        total = 0.0
        term_of_record = {rec_i: k for k, rec_i in enumerate(self._term_records)}
        for i, rec in enumerate(self.data.records):
            sl = self._traj_slices[i]
            if sl.stop > sl.start:
                v = np.minimum(-traj_phi[sl] - cfg.eps_pos, traj_ray[sl])
                total += float(np.sum(resq(v)))
            if rec.intercepted:
                k = term_of_record[i]
                phi_t = float(term_phi[k])
                cap = float(term_ray[k])
                if term_lens[k] > 0.0:
                    cap = min(cap, float(term_lens[k]))
                total += resq(min(phi_t - cfg.eps_pos, cap))
                launch = self._launch[i]
                if launch is not None:
                    t_f, t_l = launch
                    t_hat = t_f - (phi_t + theta.engagement_range) / theta.speed
                    total += resq(min(abs(t_hat - t_l) - cfg.delta_t, cap / theta.speed))
        return total

    # -- loss with gradient ---------------------------------------------

    def loss_and_gradient(self, theta: PursuerParams) -> tuple[float, np.ndarray]:
        """Objective value and its gradient on the case's free components.

        Hinge kinks take the inactive-side (zero) subgradient.
        """
        cfg = self.cfg
        grad = np.zeros(6)
        total = 0.0

        if len(self._traj_points):
            traj_phi, traj_g = rr_gradients(self._traj_points, theta)[:2]
            traj_ray, traj_ray_g = heading_ray_distance_gradients(self._traj_points, theta)
        if len(self._term_points):
            term_phi, term_g = rr_gradients(self._term_points, theta)[:2]
            term_ray, term_ray_g = heading_ray_distance_gradients(self._term_points, theta)
            term_lens, term_lens_g = lens_depth_gradients(self._term_points, theta)

        term_of_record = {rec_i: k for k, rec_i in enumerate(self._term_records)}
        for i, rec in enumerate(self.data.records):
            sl = self._traj_slices[i]
            if sl.stop > sl.start:
                local = -traj_phi[sl] - cfg.eps_pos
                capped = local > traj_ray[sl]
                vals = np.where(capped, traj_ray[sl], local)
                active = vals > 0
                if np.any(active):
                    va = vals[active]
                    total += 0.5 * float(np.sum(va * va))
                    dv = np.where(capped[:, None], traj_ray_g[sl], -traj_g[sl])
                    grad += va @ dv[active]
            if rec.intercepted:
                k = term_of_record[i]
                phi_t = float(term_phi[k])
                cap, cap_g = float(term_ray[k]), term_ray_g[k]
                if 0.0 < term_lens[k] < cap:
                    cap, cap_g = float(term_lens[k]), term_lens_g[k]
                outer = phi_t - cfg.eps_pos
                v, dv = (outer, term_g[k]) if outer <= cap else (cap, cap_g)
                if v > 0:
                    total += 0.5 * v * v
                    grad += v * dv
                launch = self._launch[i]
                if launch is not None:
                    t_f, t_l = launch
                    path_len = phi_t + theta.engagement_range
                    t_hat = t_f - path_len / theta.speed
                    resid = t_hat - t_l
                    active_t = abs(resid) - cfg.delta_t
                    if active_t <= cap / theta.speed:
                        if active_t > 0:
                            total += 0.5 * active_t * active_t
                            dt_hat = -(term_g[k].copy()) / theta.speed
                            dt_hat[_R_SLOT] += -1.0 / theta.speed
                            dt_hat[_VP_SLOT] += path_len / theta.speed**2
                            grad += active_t * np.sign(resid) * dt_hat
                    else:
                        vt = cap / theta.speed
                        total += 0.5 * vt * vt
                        dvt = cap_g.copy() / theta.speed
                        dvt[_VP_SLOT] += -cap / theta.speed**2
                        grad += vt * dvt
        grad[~np.asarray(self.case.free_mask)] = 0.0
        return total, grad


def agent_loss(
    theta: PursuerParams,
    rec: TrialRecord,
    cfg: LossConfig,
    model: InterceptionModel,
) -> float:
    """Loss contribution of a single trial (capture-geometry terms only)."""
    if len(rec.times) == 0:
        raise ValueError("empty record")
    total = 0.0
    samples = _traj_samples(rec, cfg, model)
    if len(samples):
        v = np.minimum(
            -rr_values(samples, theta) - cfg.eps_pos,
            heading_ray_distances(samples, theta),
        )
        total += float(np.sum(resq(v)))
    if rec.intercepted:
        total += resq(min(rr_value(rec.terminal, theta) - cfg.eps_pos, _terminal_cap(rec.terminal, theta)))
    return total


def _terminal_cap(terminal, theta: PursuerParams) -> float:
    """Continuity cap for terminal-point hinge arguments (see ``geometry``)."""
    pt = np.asarray(terminal, dtype=float)[None, :]
    cap = float(heading_ray_distances(pt, theta)[0])
    lens = float(lens_depth(pt, theta)[0])
    if lens > 0.0:
        cap = min(cap, lens)
    return cap


def time_loss(theta: PursuerParams, rec: TrialRecord, cfg: LossConfig) -> float:
    """Penalty on the mismatch between predicted and observed launch times."""
    if rec.t_launch is None:
        raise ValueError("record has no launch time")
    phi_t = rr_value(rec.terminal, theta)
    t_hat = rec.t_final - (phi_t + theta.engagement_range) / theta.speed
    cap = _terminal_cap(rec.terminal, theta) / theta.speed
    return resq(min(abs(t_hat - rec.t_launch) - cfg.delta_t, cap))


def total_loss(theta: PursuerParams, data: Dataset, cfg: LossConfig) -> float:
    return LossEvaluator(data, cfg).loss(theta)


def total_loss_gradient(
    theta: PursuerParams, data: Dataset, cfg: LossConfig
) -> np.ndarray:
    return LossEvaluator(data, cfg).loss_and_gradient(theta)[1]
