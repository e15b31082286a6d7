"""Time-optimal B-spline evader paths around learned engagement zones.

The path is a planar cubic B-spline optimized jointly over its control points
and final time.  Feasibility means: endpoints matched, the engagement-zone
field of every candidate pursuer nonnegative along the path (evaluated at the
evader's projected future point, so evader heading enters the constraint),
speed inside a narrow band around the commanded speed, and turn rate plus
curvature inside kinematic bounds.  Constraints are enforced at uniform
samples by an augmented-Lagrangian outer loop around a quasi-Newton inner
solver, with analytic gradients throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sciopt
from scipy.interpolate import BSpline

from .domain import CandidateSet
from .geometry import PursuerParams, rr_gradients, rr_values

SPLINE_ORDER = 3
N_CONTROL = 12
N_CONSTRAINT_SAMPLES = 100
EZ_TOL = 1e-6
SPEED_BAND = 0.01
ENDPOINT_TOL = 1e-6
KIN_SLACK = 1e-6
_SPEED_FLOOR = 1e-9

# The solver enforces constraints at discrete samples with these safety
# margins so the denser independent validation grid cannot expose
# inter-sample dips beyond the published tolerances.
_PLAN_EZ_MARGIN = 1e-3
_PLAN_KIN_MARGIN = 1e-3
_PLAN_BAND_SHRINK = 0.1  # fraction of the speed band reserved as margin


class InfeasiblePlanError(RuntimeError):
    """Raised when no safe path exists; carries the blocking candidates."""

    def __init__(self, message: str, blocking: list[int]):
        super().__init__(message)
        self.blocking = blocking


@dataclass(frozen=True)
class KinematicLimits:
    v_e: float = 1.0
    u_lb: float = -1.0
    u_ub: float = 1.0
    kappa_ub: float = 1.0

    def __post_init__(self):
        if self.v_e <= 0 or self.kappa_ub <= 0:
            raise ValueError("v_e and kappa_ub must be positive")
        if not (self.u_lb <= 0 <= self.u_ub):
            raise ValueError("turn-rate bounds must straddle zero")


def uniform_extended_knots(t0: float, tf: float, n_control: int, k: int) -> np.ndarray:
    """Uniform knot vector extended k intervals beyond each end of [t0, tf]."""
    n_k = n_control - k
    if n_k < 1:
        raise ValueError("need at least order+1 control points")
    delta = (tf - t0) / n_k
    return t0 + (np.arange(n_control + k + 1) - k) * delta


@dataclass(frozen=True)
class SplinePath:
    control_points: np.ndarray  # (N_c, 2)
    order: int
    t0: float
    tf: float
    knots: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        if cp.ndim != 2 or cp.shape[1] != 2 or cp.shape[0] < self.order + 1:
            raise ValueError("need at least order+1 planar control points")
        object.__setattr__(self, "control_points", cp)
        expected = uniform_extended_knots(self.t0, self.tf, len(cp), self.order)
        if self.knots is None:
            object.__setattr__(self, "knots", expected)
        elif not np.allclose(self.knots, expected, rtol=0, atol=1e-9 * max(1.0, abs(self.tf))):
            raise ValueError("knots must be the uniform extension of [t0, tf]")
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")

    def _bspline(self) -> BSpline:
        return BSpline(self.knots, self.control_points, self.order, extrapolate=False)

    def eval(self, t, deriv: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 - 1e-12) or np.any(t > self.tf + 1e-12):
            raise ValueError("evaluation time outside [t0, tf]")
        t = np.clip(t, self.t0, self.tf)
        spl = self._bspline()
        for _ in range(deriv):
            spl = spl.derivative()
        return spl(t)


def spline_eval(path: SplinePath, t, deriv: int = 0) -> np.ndarray:
    return path.eval(t, deriv)


@dataclass(frozen=True)
class Kinematics:
    speed: float
    heading: float
    turn_rate: float
    curvature: float
    degenerate: bool


def kinematics_at(path: SplinePath, t: float) -> Kinematics:
    """Unicycle-model quantities of the path at time ``t``."""
    vel = path.eval(t, 1)
    acc = path.eval(t, 2)
    speed = float(np.hypot(vel[0], vel[1]))
    degenerate = speed <= 1e-9
    denom = max(speed, _SPEED_FLOOR)
    cross = float(vel[0] * acc[1] - vel[1] * acc[0])
    return Kinematics(
        speed=speed,
        heading=float(np.arctan2(vel[1], vel[0])),
        turn_rate=cross / denom**2,
        curvature=cross / denom**3,
        degenerate=degenerate,
    )


# ------------------------------------------------------------------
# Engagement-zone field
# ------------------------------------------------------------------


def ez_values_and_gradients(
    points: np.ndarray, headings: np.ndarray, evader_speed: float, theta: PursuerParams
):
    """Engagement-zone field at evader states, with spatial/heading gradients.

    The field is the reachability margin evaluated at the evader's projected
    future position ``x + (v_E/v_P) R (cos psi, sin psi)``.  Returns
    ``(values, d/dx (N,2), d/dpsi (N,))``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    headings = np.asarray(headings, dtype=float).reshape(-1)
    shift = (evader_speed / theta.speed) * theta.engagement_range
    offs = shift * np.column_stack([np.cos(headings), np.sin(headings)])
    proj = points + offs
    vals, grads = rr_gradients(proj, theta)[:2]
    # The field is translation-equivariant: moving the evaluation point is
    # equivalent to moving the pursuer the opposite way.
    d_dx = -grads[:, :2]
    d_dpsi = shift * (
        -d_dx[:, 0] * np.sin(headings) + d_dx[:, 1] * np.cos(headings)
    )
    return vals, d_dx, d_dpsi


def ez_margin(
    points: np.ndarray, headings: np.ndarray, evader_speed: float, theta: PursuerParams
) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    headings = np.asarray(headings, dtype=float).reshape(-1)
    shift = (evader_speed / theta.speed) * theta.engagement_range
    proj = points + shift * np.column_stack([np.cos(headings), np.sin(headings)])
    return rr_values(proj, theta)


# ------------------------------------------------------------------
# Planner
# ------------------------------------------------------------------


def _basis_matrices(n_control: int, k: int, s: np.ndarray):
    """0th/1st/2nd-derivative basis matrices on the unit-domain spline."""
    knots = uniform_extended_knots(0.0, 1.0, n_control, k)
    mats = []
    for d in range(3):
        m = np.empty((len(s), n_control))
        for i in range(n_control):
            c = np.zeros(n_control)
            c[i] = 1.0
            spl = BSpline(knots, c, k, extrapolate=False)
            for _ in range(d):
                spl = spl.derivative()
            m[:, i] = spl(np.clip(s, 0.0, 1.0))
        mats.append(m)
    return mats


def _fit_control_points(curve_pts: np.ndarray, n_control: int) -> np.ndarray:
    """Least-squares control points reproducing a dense target polyline."""
    s = np.linspace(0.0, 1.0, len(curve_pts))
    basis = _basis_matrices(n_control, SPLINE_ORDER, s)[0]
    cp, *_ = np.linalg.lstsq(basis, curve_pts, rcond=None)
    return cp


def _initial_guess(
    x0: np.ndarray, xf: np.ndarray, cands: CandidateSet, lim: KinematicLimits, n_control: int
):
    """Near-feasible start: a constant-speed curve bowed away from the mean
    pursuer, fitted in the least-squares sense by the spline."""
    mean = cands.mean
    chord = xf - x0
    dist = np.linalg.norm(chord)
    direction = chord / dist
    normal = np.array([-direction[1], direction[0]])
    rel = np.array([mean.x, mean.y]) - x0
    side = -np.sign(direction[0] * rel[1] - direction[1] * rel[0])
    if side == 0:
        side = 1.0
    bow = side * float(np.mean([p.engagement_range for p in cands.params]))
    u = np.linspace(0.0, 1.0, 256)
    pts = x0[None, :] + u[:, None] * chord[None, :]
    pts += (bow * np.sin(np.pi * u))[:, None] * normal[None, :]
    # reparameterize to constant speed so the band constraint starts honest
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    even = np.interp(np.linspace(0.0, arc[-1], 256), arc, u)
    pts = x0[None, :] + even[:, None] * chord[None, :]
    pts += (bow * np.sin(np.pi * even))[:, None] * normal[None, :]
    cp = _fit_control_points(pts, n_control)
    tf = float(arc[-1]) / lim.v_e
    return cp, tf


def _goal_blocked(xf: np.ndarray, cands: CandidateSet, lim: KinematicLimits) -> list[int]:
    """Candidates whose engagement zone covers the goal at every heading."""
    headings = np.linspace(-np.pi, np.pi, 32, endpoint=False)
    pts = np.tile(xf, (len(headings), 1))
    blocking = []
    for j, theta in enumerate(cands.params):
        if np.all(ez_margin(pts, headings, lim.v_e, theta) < 0):
            blocking.append(j)
    return blocking


class _PlanProblem:
    """Constraint/gradient assembly for the augmented-Lagrangian solve."""

    def __init__(self, x0, xf, cands, lim, n_samples, n_control):
        self.x0, self.xf = x0, xf
        self.cands = cands
        self.lim = lim
        self.n_c = n_control
        self.s = np.linspace(0.0, 1.0, n_samples)
        self.B, self.B1, self.B2 = _basis_matrices(n_control, SPLINE_ORDER, self.s)
        ends = _basis_matrices(n_control, SPLINE_ORDER, np.array([0.0, 1.0]))[0]
        self.B_ends = ends
        self.n_samples = n_samples

    def unpack(self, z):
        cp = z[:-1].reshape(self.n_c, 2)
        tf = z[-1]
        return cp, tf

    def constraints(self, z):
        """Equality vector h, inequality vector g (feasible iff g <= 0), and
        their Jacobians with respect to (control points, tf)."""
        cp, tf = self.unpack(z)
        lim = self.lim
        n_z = len(z)
        q = self.B @ cp
        q1 = self.B1 @ cp
        q2 = self.B2 @ cp
        sp1 = np.hypot(q1[:, 0], q1[:, 1])
        sp1 = np.maximum(sp1, _SPEED_FLOOR)
        n = self.n_samples

        # equalities: endpoints
        h = np.concatenate([self.B_ends[0] @ cp - self.x0, self.B_ends[1] @ cp - self.xf])
        Jh = np.zeros((4, n_z))
        for d in range(2):
            Jh[d, d::2][: self.n_c] = self.B_ends[0]
            Jh[2 + d, d::2][: self.n_c] = self.B_ends[1]

        g_rows = []
        Jg_rows = []

        def add(vals, jac):
            g_rows.append(vals)
            Jg_rows.append(jac)

        # speed band: |q1|/tf within (1 +/- band) v_e
        v = sp1 / tf
        unit = q1 / sp1[:, None]
        dv_dcp = np.zeros((n, n_z))
        dv_dcp[:, 0:-1:2] = unit[:, 0:1] * self.B1 / tf
        dv_dcp[:, 1:-1:2] = unit[:, 1:2] * self.B1 / tf
        dv_dcp[:, -1] = -v / tf
        band = (1.0 - _PLAN_BAND_SHRINK) * SPEED_BAND
        add(v - (1 + band) * lim.v_e, dv_dcp)
        add((1 - band) * lim.v_e - v, -dv_dcp)

        # turn rate and curvature share the planar cross product
        cross = q1[:, 0] * q2[:, 1] - q1[:, 1] * q2[:, 0]
        dcross = np.zeros((n, n_z))
        dcross[:, 0:-1:2] = q2[:, 1:2] * self.B1 - q1[:, 1:2] * self.B2
        dcross[:, 1:-1:2] = q1[:, 0:1] * self.B2 - q2[:, 0:1] * self.B1
        dsp_dcp = np.zeros((n, n_z))
        dsp_dcp[:, 0:-1:2] = unit[:, 0:1] * self.B1
        dsp_dcp[:, 1:-1:2] = unit[:, 1:2] * self.B1

        u = cross / (tf * sp1**2)
        du = dcross / (tf * sp1**2)[:, None]
        du += (-2 * cross / (tf * sp1**3))[:, None] * dsp_dcp
        du[:, -1] = -u / tf
        add(u - (lim.u_ub - _PLAN_KIN_MARGIN), du)
        add((lim.u_lb + _PLAN_KIN_MARGIN) - u, -du)

        kappa = cross / sp1**3
        dk = dcross / (sp1**3)[:, None] + (-3 * cross / sp1**4)[:, None] * dsp_dcp
        add(kappa - (lim.kappa_ub - _PLAN_KIN_MARGIN), dk)
        add(-(lim.kappa_ub - _PLAN_KIN_MARGIN) - kappa, -dk)

        # engagement-zone clearance for every candidate
        psi = np.arctan2(q1[:, 1], q1[:, 0])
        dpsi = np.zeros((n, n_z))
        inv2 = 1.0 / sp1**2
        dpsi[:, 0:-1:2] = (-q1[:, 1] * inv2)[:, None] * self.B1
        dpsi[:, 1:-1:2] = (q1[:, 0] * inv2)[:, None] * self.B1
        for theta in self.cands.params:
            vals, d_dx, d_dpsi = ez_values_and_gradients(q, psi, lim.v_e, theta)
            jac = np.zeros((n, n_z))
            jac[:, 0:-1:2] = d_dx[:, 0:1] * self.B
            jac[:, 1:-1:2] = d_dx[:, 1:2] * self.B
            jac += d_dpsi[:, None] * dpsi
            add(_PLAN_EZ_MARGIN - vals, -jac)

        return h, Jh, np.concatenate(g_rows), np.vstack(Jg_rows)


def _augmented_lagrangian(problem: _PlanProblem, z0: np.ndarray, tf_floor: float):
    """Standard AL outer loop; inner solves use L-BFGS-B with analytic jac."""
    mu = 10.0
    lam_h = np.zeros(4)
    lam_g = None
    z = z0.copy()
    n_z = len(z)
    box = [(None, None)] * (n_z - 1) + [(tf_floor, None)]
    prev_viol = np.inf

    for outer in range(25):
        def merit(zz):
            h, Jh, g, Jg = problem.constraints(zz)
            nonlocal lam_g
            if lam_g is None:
                lam_g = np.zeros(len(g))
            val = zz[-1]
            grad = np.zeros(n_z)
            grad[-1] = 1.0
            he = h + lam_h / mu
            val += 0.5 * mu * he @ he
            grad += mu * (Jh.T @ he)
            ge = np.maximum(0.0, g + lam_g / mu)
            val += 0.5 * mu * ge @ ge
            grad += mu * (Jg.T @ ge)
            return val, grad

        res = sciopt.minimize(
            merit, z, jac=True, method="L-BFGS-B", bounds=box,
            options={"maxiter": 120, "ftol": 1e-12, "gtol": 1e-10},
        )
        z = res.x
        h, _, g, _ = problem.constraints(z)
        viol = max(np.max(np.abs(h), initial=0.0), np.max(g, initial=0.0))
        h_ok = np.max(np.abs(h), initial=0.0) <= 0.5 * ENDPOINT_TOL * max(1.0, abs(z[-1]))
        g_ok = np.max(g, initial=0.0) <= 0.5 * _PLAN_EZ_MARGIN
        if h_ok and g_ok and outer >= 1:
            break
        lam_h = lam_h + mu * h
        lam_g = np.maximum(0.0, lam_g + mu * g)
        if viol > 0.5 * prev_viol:
            mu *= 4.0
        prev_viol = viol
    return z


def plan_safe_path(
    x0,
    xf,
    cands: CandidateSet,
    lim: KinematicLimits,
    n_constraint_samples: int = N_CONSTRAINT_SAMPLES,
    n_control: int = N_CONTROL,
) -> SplinePath:
    """Minimum-time spline from ``x0`` to ``xf`` avoiding every candidate's
    engagement zone.  Raises :class:`InfeasiblePlanError` when the goal is
    enclosed by the candidate union."""
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    blocking = _goal_blocked(xf, cands, lim)
    if blocking:
        raise InfeasiblePlanError(
            f"goal enclosed by candidate engagement zones {blocking}", blocking
        )
    problem = _PlanProblem(x0, xf, cands, lim, n_constraint_samples, n_control)
    cp0, tf0 = _initial_guess(x0, xf, cands, lim, n_control)
    dist = np.linalg.norm(xf - x0)
    z0 = np.concatenate([cp0.ravel(), [tf0]])
    def endpoints_ok(path):
        tol = ENDPOINT_TOL * max(dist, 1.0)
        return (
            np.linalg.norm(path.eval(path.t0) - x0) <= tol
            and np.linalg.norm(path.eval(path.tf) - xf) <= tol
        )

    z = _augmented_lagrangian(problem, z0, tf_floor=0.5 * dist / lim.v_e)
    cp, tf = problem.unpack(z)
    path = SplinePath(control_points=cp, order=SPLINE_ORDER, t0=0.0, tf=float(tf))
    report = validate_path(path, cands, lim, n_check=4 * n_constraint_samples)
    if not (report.feasible and endpoints_ok(path)):
        # Retry from the opposite homotopy class before giving up.
        cp0b = 2 * (x0[None, :] + np.linspace(0, 1, n_control)[:, None] * (xf - x0)[None, :]) - cp0
        z0b = np.concatenate([cp0b.ravel(), [tf0]])
        z = _augmented_lagrangian(problem, z0b, tf_floor=0.5 * dist / lim.v_e)
        cp, tf = problem.unpack(z)
        path = SplinePath(control_points=cp, order=SPLINE_ORDER, t0=0.0, tf=float(tf))
        report = validate_path(path, cands, lim, n_check=4 * n_constraint_samples)
        if not (report.feasible and endpoints_ok(path)):
            worst = _worst_candidates(path, cands, lim, 4 * n_constraint_samples)
            raise InfeasiblePlanError(
                f"no feasible path found (worst margins from candidates {worst})", worst
            )
    return path


@dataclass(frozen=True)
class ValidationReport:
    feasible: bool
    min_ez_margin: float
    worst_speed_dev: float
    worst_turnrate: float
    worst_curvature: float


def _path_states(path: SplinePath, n_check: int):
    t = np.linspace(path.t0, path.tf, n_check)
    pos = path.eval(t)
    vel = path.eval(t, 1)
    acc = path.eval(t, 2)
    sp = np.maximum(np.hypot(vel[:, 0], vel[:, 1]), _SPEED_FLOOR)
    psi = np.arctan2(vel[:, 1], vel[:, 0])
    cross = vel[:, 0] * acc[:, 1] - vel[:, 1] * acc[:, 0]
    return t, pos, sp, psi, cross / sp**2, cross / sp**3


def _worst_candidates(path, cands, lim, n_check) -> list[int]:
    _, pos, _, psi, _, _ = _path_states(path, n_check)
    margins = [float(np.min(ez_margin(pos, psi, lim.v_e, th))) for th in cands.params]
    worst = min(margins)
    return [j for j, m in enumerate(margins) if m <= worst + 1e-9]


def validate_path(
    path: SplinePath, cands: CandidateSet, lim: KinematicLimits, n_check: int = 400
) -> ValidationReport:
    """Independent dense-grid feasibility check with the planner tolerances."""
    _, pos, sp, psi, turn, kappa = _path_states(path, n_check)
    min_margin = np.inf
    for theta in cands.params:
        min_margin = min(min_margin, float(np.min(ez_margin(pos, psi, lim.v_e, theta))))
    speed_dev = float(np.max(np.abs(sp - lim.v_e))) / lim.v_e
    worst_u = float(np.max(np.maximum(turn - lim.u_ub, lim.u_lb - turn)))
    worst_k = float(np.max(np.abs(kappa)) - lim.kappa_ub)
    feasible = (
        min_margin >= -EZ_TOL - 1e-9
        and speed_dev <= SPEED_BAND + KIN_SLACK
        and worst_u <= KIN_SLACK
        and worst_k <= KIN_SLACK
    )
    return ValidationReport(
        feasible=bool(feasible),
        min_ez_margin=min_margin,
        worst_speed_dev=speed_dev,
        worst_turnrate=worst_u,
        worst_curvature=float(np.max(np.abs(kappa))),
    )


# ------------------------------------------------------------------
# No-learning baseline: avoid the whole prior box inflated by range
# ------------------------------------------------------------------


def box_signed_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Signed distance to an axis-aligned box (negative inside) and gradient."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    rel = points - center
    q = np.abs(rel) - half
    qp = np.maximum(q, 0.0)
    outside = np.hypot(qp[:, 0], qp[:, 1])
    inside = np.minimum(np.maximum(q[:, 0], q[:, 1]), 0.0)
    d = outside + inside
    grad = np.zeros_like(points)
    out_mask = outside > 0
    denom = np.maximum(outside, 1e-300)
    grad[out_mask] = (qp[out_mask] / denom[out_mask, None]) * np.sign(rel[out_mask])
    in_mask = ~out_mask
    ax = np.argmax(q[in_mask], axis=1)
    rows = np.flatnonzero(in_mask)
    grad[rows, ax] = np.sign(rel[rows, ax])
    return d, grad


class _BoxThreat:
    """Duck-typed stand-in for a candidate: the inflated prior box."""

    def __init__(self, lo, hi, margin):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.margin = margin


def plan_box_avoid_path(
    x0,
    xf,
    lo,
    hi,
    lim: KinematicLimits,
    inflate: float = 0.0,
    n_constraint_samples: int = N_CONSTRAINT_SAMPLES,
    n_control: int = N_CONTROL,
) -> SplinePath:
    """No-learning baseline: keep at least ``inflate`` clear of the prior box.

    The forbidden region is the Minkowski inflation of the box (its corners
    are rounded with radius ``inflate``), i.e. every point within ``inflate``
    of the box is off limits.
    """
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if box_signed_distance(xf[None, :], lo, hi)[0][0] < inflate:
        raise InfeasiblePlanError("goal inside the forbidden region", [0])

    class BoxProblem(_PlanProblem):
        def __init__(self2):
            # a one-member dummy ensemble center for the initial-guess bow
            cx = 0.5 * (lo + hi)
            dummy = PursuerParams(
                cx[0], cx[1], 0.0, 0.1, 0.5 * float(np.max(hi - lo)) + inflate, 1.0
            )
            super().__init__(x0, xf, CandidateSet.from_members([(dummy, 0.0)]), lim,
                             n_constraint_samples, n_control)

        def constraints(self2, z):
            h, Jh, g, Jg = _PlanProblem.constraints(self2, z)
            # strip the dummy EZ rows (last n_samples block) and add the box
            n = self2.n_samples
            g, Jg = g[:-n], Jg[:-n]
            cp, _ = self2.unpack(z)
            q = self2.B @ cp
            d, dgrad = box_signed_distance(q, lo, hi)
            jac = np.zeros((n, len(z)))
            jac[:, 0:-1:2] = dgrad[:, 0:1] * self2.B
            jac[:, 1:-1:2] = dgrad[:, 1:2] * self2.B
            clearance = inflate + _PLAN_EZ_MARGIN
            return h, Jh, np.concatenate([g, clearance - d]), np.vstack([Jg, -jac])

    problem = BoxProblem()
    dist = np.linalg.norm(xf - x0)
    cp0, tf0 = _initial_guess(x0, xf, problem.cands, lim, n_control)
    z = _augmented_lagrangian(problem, np.concatenate([cp0.ravel(), [tf0]]),
                              tf_floor=0.5 * dist / lim.v_e)
    cp, tf = problem.unpack(z)
    return SplinePath(control_points=cp, order=SPLINE_ORDER, t0=0.0, tf=float(tf))
