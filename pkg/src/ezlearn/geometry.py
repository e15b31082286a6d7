"""Turn-then-straight reachability geometry for a turn-rate-limited pursuer.

The pursuer moves along a circular arc of its minimum turn radius (left or
right) followed by a straight segment.  ``rr_value`` is the length of the
shortest such path to a point minus the pursuer's range: positive outside
the reachable region, negative inside, zero on the boundary.  ``ez_value``
evaluates the same field at the evader's projected future position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual
from .dual import Dual

__all__ = [
    "UNREACHABLE",
    "BRANCH_TIE_REL_TOL",
    "PursuerParams",
    "ParamBounds",
    "TurnStraightResult",
    "wrap_angle",
    "turn_straight_length",
    "path_lengths",
    "rr_value",
    "rr_values",
    "ez_value",
    "ez_values",
    "rr_gradient",
    "rr_gradients",
    "rr_boundary_polyline",
]

# Sentinel length for a target strictly inside the active turning disc
# (not reachable by a single turn-then-straight path).
UNREACHABLE = 1e9

# Relative tolerance (times turn radius) below which the left/right branch
# tie is flagged non-smooth.
BRANCH_TIE_REL_TOL = 1e-8

_TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    wrapped = np.asarray(theta, dtype=float) % _TWO_PI
    wrapped = np.where(wrapped > np.pi, wrapped - _TWO_PI, wrapped)
    return float(wrapped) if np.isscalar(theta) or np.ndim(theta) == 0 else wrapped


@dataclass(frozen=True)
class PursuerParams:
    """Pursuer state and capability: position, heading, turn radius, range, speed."""

    x: float
    y: float
    heading: float
    turn_radius: float
    engagement_range: float
    speed: float

    def __post_init__(self):
        if not (self.turn_radius > 0 and self.engagement_range > 0 and self.speed > 0):
            raise ValueError("turn_radius, engagement_range, and speed must be positive")
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("pursuer parameters must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.heading, self.turn_radius, self.engagement_range, self.speed]
        )

    @classmethod
    def from_array(cls, arr) -> "PursuerParams":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (6,):
            raise ValueError("expected a 6-vector")
        return cls(*arr)


@dataclass(frozen=True)
class ParamBounds:
    """Componentwise box bounds on the 6-component pursuer parameter vector.

    Bounds are stored as raw arrays (canonical order: x, y, heading,
    turn_radius, engagement_range, speed) so heading bounds such as
    [-pi, pi] survive unwrapped.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != (6,) or upper.shape != (6,):
            raise ValueError("bounds must be 6-vectors")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, params: PursuerParams, tol: float = 1e-9) -> bool:
        v = params.as_array()
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(frozen=True)
class TurnStraightResult:
    left: float
    right: float
    min: float
    active: str  # "left" or "right"
    margin: float  # |left - right|


def _directional_lengths(px, py, x, y, heading, turn_radius):
    """Turn-then-straight path lengths for both turn directions.

    ``px, py`` are plain arrays of target coordinates; the pursuer
    parameters may be floats or ``Dual`` scalars.  Returns ``(left, right)``
    with ``UNREACHABLE`` where the target lies strictly inside the
    corresponding turning disc.
    """
    sin_h = dual.sin(heading)
    cos_h = dual.cos(heading)

    def one_side(side):
        # side = +1 for a left (counterclockwise) turn, -1 for right.
        cx = x - side * turn_radius * sin_h
        cy = y + side * turn_radius * cos_h
        dx = -cx + px
        dy = -cy + py
        d2 = dx * dx + dy * dy
        d = dual.sqrt(d2)
        feasible = dual.value(d) >= dual.value(turn_radius) * (1.0 - 1e-12)
        d_safe = dual.where(feasible, d, turn_radius * 2.0)
        ratio = turn_radius / d_safe
        theta_q = dual.arctan2(dy, dx)
        dep = dual.arccos(ratio)
        # Angle of the pursuer start point about the turn center.
        phi0 = heading - side * (np.pi / 2.0)
        phi1 = theta_q - side * dep
        raw = side * (phi1 - phi0)
        # Exact tangency can round to raw = -0.0 - tiny, which mod would send
        # to a full circle; flush the sliver just below 2*pi back to zero.
        seam = _TWO_PI - 1e-12
        if isinstance(raw, Dual):
            beta_val = np.mod(raw.val, _TWO_PI)
            beta = Dual(np.where(beta_val >= seam, 0.0, beta_val), raw.eps)
        else:
            beta = np.mod(raw, _TWO_PI)
            beta = np.where(beta >= seam, 0.0, beta)
        tangent_sq = d2 - turn_radius * turn_radius
        tangent = dual.sqrt(dual.where(dual.value(tangent_sq) > 0.0, tangent_sq, 0.0))
        length = turn_radius * beta + tangent
        return dual.where(feasible, length, UNREACHABLE)

    return one_side(1.0), one_side(-1.0)


def path_lengths(points, params: PursuerParams):
    """Shortest turn-then-straight path length from the pursuer to each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    left, right = _directional_lengths(
        pts[..., 0], pts[..., 1], params.x, params.y, params.heading, params.turn_radius
    )
    return np.minimum(left, right)


def turn_straight_length(target, params: PursuerParams) -> TurnStraightResult:
    """Per-direction and minimum path lengths to a single target point."""
    target = np.asarray(target, dtype=float)
    if target.shape != (2,) or not np.all(np.isfinite(target)):
        raise ValueError("target must be a finite 2-vector")
    left, right = _directional_lengths(
        target[0], target[1], params.x, params.y, params.heading, params.turn_radius
    )
    left = float(left)
    right = float(right)
    active = "left" if left <= right else "right"
    return TurnStraightResult(
        left=left, right=right, min=min(left, right), active=active, margin=abs(left - right)
    )


def rr_value(point, params: PursuerParams) -> float:
    """Signed reachability field: path length to ``point`` minus range."""
    res = turn_straight_length(point, params)
    if not np.isfinite(res.min) or res.min >= UNREACHABLE:
        return UNREACHABLE
    return res.min - params.engagement_range


def rr_values(points, params: PursuerParams) -> np.ndarray:
    """Vectorized ``rr_value`` over an (N, 2) array of points."""
    lengths = path_lengths(points, params)
    return np.where(lengths >= UNREACHABLE, UNREACHABLE, lengths - params.engagement_range)


def _project_forward(evader_pos, evader_heading, evader_speed, params: PursuerParams):
    shift = (evader_speed / params.speed) * params.engagement_range
    direction = np.stack(
        [np.cos(evader_heading), np.sin(evader_heading)], axis=-1
    )
    return np.asarray(evader_pos, dtype=float) + shift * direction


def ez_value(evader_pos, evader_heading, evader_speed, params: PursuerParams) -> float:
    """Engagement field at an evader state: ``rr_value`` at its projected point."""
    if evader_speed < 0:
        raise ValueError("evader speed must be nonnegative")
    return rr_value(_project_forward(evader_pos, evader_heading, evader_speed, params), params)


def ez_values(evader_pos, evader_heading, evader_speed, params: PursuerParams) -> np.ndarray:
    """Vectorized ``ez_value``; positions (N, 2), headings (N,)."""
    return rr_values(
        _project_forward(np.atleast_2d(evader_pos), evader_heading, evader_speed, params), params
    )


def _dual_params(params: PursuerParams):
    # Seed slots: x, y, heading, turn_radius.  Range enters affinely and
    # speed not at all, so those two partials are assembled analytically.
    return (
        dual.seed(params.x, 0, 4),
        dual.seed(params.y, 1, 4),
        dual.seed(params.heading, 2, 4),
        dual.seed(params.turn_radius, 3, 4),
    )


def rr_gradients(points, params: PursuerParams):
    """Gradient of ``rr_value`` w.r.t. the 6 pursuer parameters, per point.

    Returns ``(values (N,), grads (N, 6), nonsmooth (N,) bool)``.  At a
    left/right branch tie the gradient of the active branch is returned and
    the non-smooth flag is set (subgradient convention).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, heading, turn_radius = _dual_params(params)
    left, right = _directional_lengths(pts[..., 0], pts[..., 1], x, y, heading, turn_radius)
    use_left = left.val <= right.val
    length = dual.where(use_left, left, right)
    nonsmooth = np.abs(left.val - right.val) <= BRANCH_TIE_REL_TOL * params.turn_radius

    n = pts.shape[0]
    grads = np.zeros((n, 6))
    grads[:, :4] = np.broadcast_to(length.eps, (n, 4))
    grads[:, 4] = -1.0
    unreachable = length.val >= UNREACHABLE
    grads[unreachable, :4] = 0.0
    values = np.where(unreachable, UNREACHABLE, length.val - params.engagement_range)
    return values, grads, nonsmooth


def rr_gradient(point, params: PursuerParams):
    """Single-point ``rr_gradients``; returns ``(grad (6,), nonsmooth)``."""
    _, grads, nonsmooth = rr_gradients(np.asarray(point, dtype=float)[None, :], params)
    return grads[0], bool(nonsmooth[0])


def _ray_frame(points, params: PursuerParams):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cos_h = np.cos(params.heading)
    sin_h = np.sin(params.heading)
    ux = pts[:, 0] - params.x
    uy = pts[:, 1] - params.y
    along = ux * cos_h + uy * sin_h
    cross = -ux * sin_h + uy * cos_h
    return pts, cos_h, sin_h, ux, uy, along, cross


def heading_ray_distances(points, params: PursuerParams) -> np.ndarray:
    """Euclidean distance from each point to the pursuer's forward heading ray.

    The turn angle of the shortest turn-then-straight path wraps across this
    ray, so the reachability field jumps there.  Penalties capped by this
    distance stay continuous in the parameters across the jump.
    """
    _, _, _, _, _, along, cross = _ray_frame(points, params)
    behind = np.minimum(along, 0.0)
    return np.sqrt(cross * cross + behind * behind)


def heading_ray_distance_gradients(points, params: PursuerParams):
    """``heading_ray_distances`` with per-point gradients in the 6 parameters.

    Returns ``(values (N,), grads (N, 6))``.  On the ray itself the distance
    has a kink; the zero subgradient is returned there.
    """
    pts, cos_h, sin_h, ux, uy, along, cross = _ray_frame(points, params)
    behind = np.minimum(along, 0.0)
    vals = np.sqrt(cross * cross + behind * behind)
    n = pts.shape[0]
    grads = np.zeros((n, 6))
    safe = vals > 0.0
    ahead = safe & (along > 0.0)
    # beside the ray: distance is |cross|, carried by position and heading
    sgn = np.sign(cross[ahead])
    grads[ahead, 0] = sgn * sin_h
    grads[ahead, 1] = -sgn * cos_h
    grads[ahead, 2] = -sgn * along[ahead]
    # behind the ray origin: distance to the origin point itself
    back = safe & (along <= 0.0)
    grads[back, 0] = -ux[back] / vals[back]
    grads[back, 1] = -uy[back] / vals[back]
    return vals, grads


def lens_depth(points, params: PursuerParams) -> np.ndarray:
    """Escape distance from inside both turning discs, 0 elsewhere.

    Points inside the intersection of the two turning discs have no
    turn-then-straight path at all; this returns how far such a point is
    from the nearer disc boundary (the cheapest way out), giving a bounded
    violation measure with a useful escape gradient where the raw field
    only offers an unreachable sentinel.
    """
    return lens_depth_gradients(points, params)[0]


def lens_depth_gradients(points, params: PursuerParams):
    """``lens_depth`` with per-point gradients; returns ``(values, grads)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = params.turn_radius
    cos_h = np.cos(params.heading)
    sin_h = np.sin(params.heading)
    n = pts.shape[0]
    vals = np.zeros(n)
    grads = np.zeros((n, 6))
    d_side = np.empty((n, 2))
    w_side = np.empty((n, 2, 2))
    for j, side in enumerate((1.0, -1.0)):
        cx = params.x - side * a * sin_h
        cy = params.y + side * a * cos_h
        w = pts - np.array([cx, cy])
        w_side[:, j] = w
        d_side[:, j] = np.linalg.norm(w, axis=1)
    far = np.argmax(d_side, axis=1)
    idx = np.arange(n)
    d = d_side[idx, far]
    depth = a - d
    inside = depth > 0.0
    vals[inside] = depth[inside]
    if np.any(inside):
        side = np.where(far[inside] == 0, 1.0, -1.0)
        w = w_side[idx[inside], far[inside]]
        dn = d[inside]
        # escaping through the nearer wall of the farther disc
        grads[inside, 0] = w[:, 0] / dn
        grads[inside, 1] = w[:, 1] / dn
        grads[inside, 2] = -side * a * (w[:, 0] * cos_h + w[:, 1] * sin_h) / dn
        grads[inside, 3] = 1.0 + side * (-w[:, 0] * sin_h + w[:, 1] * cos_h) / dn
    return vals, grads


def snap_to_boundary(point, params: PursuerParams, tol: float = 1e-10) -> np.ndarray:
    """Move a point onto the zero contour of ``rr_value``.

    Damped Newton along the spatial gradient, with a radial ray scan as a
    fallback for points near the discontinuous turning-disc arcs.  Used to
    resolve interception points when a path enters the reachable region
    through a disc arc, where no continuous zero crossing exists.
    """
    q0 = np.asarray(point, dtype=float)
    q = q0.copy()
    for _ in range(60):
        v = rr_value(q, params)
        if abs(v) <= tol:
            return q
        grad, _ = rr_gradient(q, params)
        spatial = -grad[:2]  # translation equivariance: d/dx = -d/dx_P
        norm_sq = float(spatial @ spatial)
        if norm_sq < 1e-18:
            break
        step = -v * spatial / norm_sq
        for _ in range(40):
            v_new = rr_value(q + step, params)
            if abs(v_new) < 0.9 * abs(v):
                q = q + step
                break
            step *= 0.5
        else:
            break
    if abs(rr_value(q, params)) <= tol:
        return q

    # Ray scan from the *original* point (Newton may have wandered): march
    # outward in many directions and keep the nearest continuous crossing.
    q = q0
    r_max = params.engagement_range + 2.0 * np.pi * params.turn_radius + 1.0
    best = None
    best_dist = np.inf
    for ang in np.linspace(0.0, _TWO_PI, 48, endpoint=False):
        direction = np.array([np.cos(ang), np.sin(ang)])
        radii = np.linspace(0.0, r_max, 400)
        vals = rr_values(q[None, :] + radii[:, None] * direction[None, :], params)
        sign_change = np.flatnonzero((vals[:-1] < 0) & (vals[1:] >= 0))
        # A ray can cross the region boundary several times (unreachable
        # pockets near the turning discs); discontinuous crossings fail the
        # tolerance check, so every bracket must be tried.
        for k in sign_change:
            lo, hi = radii[k], radii[k + 1]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if rr_value(q + mid * direction, params) < 0:
                    lo = mid
                else:
                    hi = mid
            cand = q + lo * direction
            if abs(rr_value(cand, params)) <= tol and lo < best_dist:
                best, best_dist = cand, lo
                break
    if best is None:
        raise RuntimeError("failed to project point onto the reachable-region boundary")
    return best


def rr_boundary_polyline(params: PursuerParams, n_samples: int) -> np.ndarray:
    """Closed polyline on the zero contour of ``rr_value``.

    Ray-marches outward from the pursuer position along ``n_samples``
    directions, then bisects each bracketing interval until
    ``|rr_value| <= 1e-6 * range``.
    """
    if n_samples < 64:
        raise ValueError("n_samples must be at least 64")
    center = np.array([params.x, params.y])
    r_max = params.engagement_range + 2.0 * np.pi * params.turn_radius + 1.0
    angles = np.linspace(0.0, _TWO_PI, n_samples, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    # March outward: rr is -range at the center and >= dist - range far out,
    # so a sign change exists along every ray.  Unreachable pockets near the
    # turning discs read as large positive values; marching continues past
    # them by keeping the outermost negative sample as the bracket base.
    n_march = 512
    radii = np.linspace(0.0, r_max, n_march)
    lo = np.zeros(n_samples)
    hi = np.full(n_samples, r_max)
    pts = center[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    vals = rr_values(pts.reshape(-1, 2), params).reshape(n_samples, n_march)
    neg = vals < 0.0
    last_neg = n_march - 1 - np.argmax(neg[:, ::-1], axis=1)
    has_neg = neg.any(axis=1)
    lo = np.where(has_neg, radii[last_neg], 0.0)
    hi_idx = np.minimum(last_neg + 1, n_march - 1)
    hi = np.where(has_neg, radii[hi_idx], radii[1])

    tol = 1e-6 * params.engagement_range
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        v = rr_values(center[None, :] + mid[:, None] * dirs, params)
        go_out = v < 0.0
        lo = np.where(go_out, mid, lo)
        hi = np.where(go_out, hi, mid)
        if np.max(np.abs(v)) <= tol:
            break
    r = 0.5 * (lo + hi)
    verts = center[None, :] + r[:, None] * dirs
    # Rays that end on a discontinuous disc arc are projected onto the
    # nearby smooth contour so every vertex meets the |rr| tolerance.
    residuals = np.abs(rr_values(verts, params))
    snapped: dict[tuple, np.ndarray] = {}
    for i in np.flatnonzero(residuals > tol):
        key = (round(verts[i][0], 9), round(verts[i][1], 9))
        if key not in snapped:
            snapped[key] = snap_to_boundary(verts[i], params, tol=tol)
        verts[i] = snapped[key]
    return verts
