"""Multi-start ensemble learning of pursuer parameters from trial outcomes.

The loop alternates deployment of a sacrificial trajectory, a multi-start
box-constrained minimization of the data-fit loss, filtering to near-zero-loss
candidates, and resampling with jitter, until the ensemble's spread on every
free parameter falls below threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sciopt

from .domain import (
    CandidateSet,
    Dataset,
    HEADING_INDEX,
    LearningCase,
    embed_free,
    extract_free,
)
from .geometry import ParamBounds, PursuerParams, wrap_angle
from .losses import LossConfig, LossEvaluator
from .truthsim import NoiseSpec, simulate_engagement

LOSS_STOP = 1e-12


def default_sigma_thresh(bounds: ParamBounds) -> np.ndarray:
    """Convergence thresholds: 2% of each bound width (heading: 2% of 2*pi)."""
    thresh = 0.02 * bounds.width()
    thresh[HEADING_INDEX] = 0.02 * 2.0 * np.pi
    return thresh


def default_jitter_scale(bounds: ParamBounds) -> np.ndarray:
    return 0.01 * bounds.width()


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for the multi-start optimization rounds."""

    n_population: int = 64
    eps_loss: float = 1e-6
    sigma_thresh: np.ndarray | None = None
    jitter_scale: np.ndarray | None = None
    max_iters: int = 500
    grad_tol: float = 1e-8
    max_steps: int = 40
    # Fraction of each round's starts drawn fresh from the prior box rather
    # than resampled around retained candidates.  Pure resample-and-jitter
    # can collapse the ensemble onto one basin while other parameter regions
    # are still consistent with the data; fresh starts keep those regions
    # represented until real measurements rule them out.
    fresh_frac: float = 0.25
    # Fresh starts are pre-screened: screen_factor * (number wanted) points
    # are drawn and only the lowest-loss ones get a full descent.  Deep,
    # narrow basins (the truth's often is one) are found far more reliably
    # this way than with one blind descent per start.
    screen_factor: int = 32

    def __post_init__(self):
        if self.eps_loss <= 0:
            raise ValueError("eps_loss must be positive")
        if self.n_population < 2:
            raise ValueError("n_population must be at least 2")
        for name in ("sigma_thresh", "jitter_scale"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (6,) or np.any(v <= 0):
                    raise ValueError(f"{name} must be 6 positive values")
                object.__setattr__(self, name, v)

    def resolved_sigma_thresh(self, bounds: ParamBounds) -> np.ndarray:
        return (
            self.sigma_thresh
            if self.sigma_thresh is not None
            else default_sigma_thresh(bounds)
        )

    def resolved_jitter(self, bounds: ParamBounds) -> np.ndarray:
        return (
            self.jitter_scale
            if self.jitter_scale is not None
            else default_jitter_scale(bounds)
        )


def lhs_sample(
    bounds: ParamBounds,
    case: LearningCase,
    n: int,
    seed,
    known: PursuerParams | None = None,
) -> list[PursuerParams]:
    """Latin hypercube over the free parameters.

    Each free dimension is cut into ``n`` equal strata and every stratum is
    hit exactly once.  Frozen dimensions take the values from ``known`` (the
    components the learner is told), defaulting to the box midpoint.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    lo, hi = bounds.lower, bounds.upper
    base = known.as_array() if known is not None else 0.5 * (lo + hi)
    mask = case.free_mask
    samples = np.tile(base, (n, 1))
    for dim in np.flatnonzero(mask):
        if hi[dim] <= lo[dim]:
            samples[:, dim] = lo[dim]
            continue
        strata = (rng.permutation(n) + rng.uniform(size=n)) / n
        samples[:, dim] = lo[dim] + strata * (hi[dim] - lo[dim])
    return [PursuerParams.from_array(row) for row in samples]


class _StopAtZero(Exception):
    pass


def _optimize(
    evaluator: LossEvaluator,
    start: PursuerParams,
    ocfg: OptimizerConfig,
    bounds: ParamBounds,
) -> tuple[PursuerParams, float, int]:
    case = evaluator.case
    mask = case.free_mask
    x0 = extract_free(start, case)
    box = list(zip(bounds.lower[mask], bounds.upper[mask]))

    best = {"x": x0.copy(), "f": np.inf, "n": 0}

    def objective(x):
        theta = embed_free(x, start, case)
        f, g = evaluator.loss_and_gradient(theta)
        best["n"] += 1
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        if f <= LOSS_STOP:
            raise _StopAtZero
        return f, g[mask]

    try:
        res = sciopt.minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": ocfg.max_iters, "gtol": ocfg.grad_tol, "ftol": 1e-14},
        )
        if res.fun < best["f"]:
            best["f"], best["x"] = float(res.fun), np.asarray(res.x)
    except _StopAtZero:
        pass
    x = np.clip(best["x"], bounds.lower[mask], bounds.upper[mask])
    theta = embed_free(x, start, case)
    loss = evaluator.loss(theta)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at optimized point")
    if loss > best["f"] + 1e-15:  # clipping never actually moves interior optima
        loss = best["f"]
    return theta, float(loss), best["n"]


def optimize_candidate(
    start: PursuerParams,
    data: Dataset,
    cfg: LossConfig,
    ocfg: OptimizerConfig,
    bounds: ParamBounds,
) -> tuple[PursuerParams, float, int]:
    """Descend from one start; returns (theta, loss, function evaluations)."""
    evaluator = LossEvaluator(data, cfg)
    if not np.isfinite(evaluator.loss(start)):
        raise ValueError("non-finite loss at start")
    return _optimize(evaluator, start, ocfg, bounds)


def _resample_with_jitter(
    retained: list[tuple[PursuerParams, float]],
    n_target: int,
    bounds: ParamBounds,
    case: LearningCase,
    jitter: np.ndarray,
    rng: np.random.Generator,
) -> list[PursuerParams]:
    starts = [m[0] for m in retained]
    mask = case.free_mask
    while len(starts) < n_target:
        base, _ = retained[rng.integers(len(retained))]
        v = base.as_array()
        v[mask] += rng.normal(0.0, jitter[mask])
        v[HEADING_INDEX] = wrap_angle(v[HEADING_INDEX])
        v = np.clip(v, bounds.lower, bounds.upper)
        starts.append(PursuerParams.from_array(v))
    return starts


def screened_fresh_starts(
    evaluator: LossEvaluator,
    bounds: ParamBounds,
    case: LearningCase,
    n: int,
    rng,
    screen_factor: int,
    known: PursuerParams | None = None,
) -> list[PursuerParams]:
    """Draw a large Latin-hypercube cloud and keep the n lowest-loss points.

    A loss evaluation is orders of magnitude cheaper than a descent, so
    screening buys a much better chance of seeding every deep basin.
    """
    cloud = lhs_sample(bounds, case, max(n * screen_factor, n), rng, known=known)
    losses = np.array([evaluator.loss(th) for th in cloud])
    order = np.argsort(losses)[:n]
    return [cloud[i] for i in order]


def update_round(
    prev_starts: list[PursuerParams],
    data: Dataset,
    cfg: LossConfig,
    ocfg: OptimizerConfig,
    bounds: ParamBounds,
    seed,
    known: PursuerParams | None = None,
) -> tuple[CandidateSet, list[PursuerParams]]:
    """One optimize/filter/resample round.

    Returns the retained candidate set and the starting points for the next
    round.  If nothing survives the loss filter the round falls back to a
    fresh Latin-hypercube batch so the loop cannot deadlock.
    """
    if not prev_starts:
        raise ValueError("no starting points")
    rng = np.random.default_rng(seed)
    evaluator = LossEvaluator(data, cfg)
    case = data.case

    optimized = [_optimize(evaluator, s, ocfg, bounds) for s in prev_starts]
    retained = [(th, f) for th, f, _ in optimized if f <= ocfg.eps_loss]
    if not retained:
        fresh = screened_fresh_starts(
            evaluator, bounds, case, ocfg.n_population, rng,
            ocfg.screen_factor, known=known,
        )
        optimized = [_optimize(evaluator, s, ocfg, bounds) for s in fresh]
        retained = [(th, f) for th, f, _ in optimized if f <= ocfg.eps_loss]
    if not retained:
        # Still empty: keep the single best point so progress is observable.
        th, f, _ = min(optimized, key=lambda t: t[1])
        retained = [(th, f)]
    cands = CandidateSet.from_members(retained)
    jitter = ocfg.resolved_jitter(bounds)
    # Always mix in some fresh Latin-hypercube starts: a population that has
    # collapsed onto one zero-loss mode would otherwise never revisit other
    # regions that later data might single out instead.
    n_fresh = int(round(ocfg.fresh_frac * ocfg.n_population))
    next_starts = _resample_with_jitter(
        retained, max(ocfg.n_population - n_fresh, 1), bounds, case, jitter, rng
    )
    if n_fresh:
        next_starts += screened_fresh_starts(
            evaluator, bounds, case, n_fresh, rng, ocfg.screen_factor, known=known
        )
    return cands, next_starts


def is_converged(
    cands: CandidateSet,
    case: LearningCase,
    sigma_thresh: np.ndarray,
    eps_loss: float = 1e-6,
) -> bool:
    """True when every free parameter's spread is small *and* every member
    actually fits the data; a tight cluster of misfits is not convergence."""
    if np.any(cands.losses > eps_loss):
        return False
    mask = case.free_mask
    return bool(np.all(cands.std[mask] <= sigma_thresh[mask]))


@dataclass
class LearningStep:
    """Everything produced in one deploy/optimize round."""

    record: object
    candidates: CandidateSet
    converged: bool


@dataclass
class LearningHistory:
    truth: PursuerParams
    steps: list[LearningStep] = field(default_factory=list)
    converged: bool = False

    @property
    def n_agents(self) -> int:
        return len(self.steps)

    @property
    def final_candidates(self) -> CandidateSet:
        if not self.steps:
            raise RuntimeError("empty history")
        return self.steps[-1].candidates


def run_learning_loop(
    truth: PursuerParams,
    scenario,
    strategy,
    cfg_builder=None,
    ocfg: OptimizerConfig | None = None,
    seed=0,
) -> LearningHistory:
    """Full active-learning loop against a simulated ground truth.

    ``scenario`` must provide ``bounds``, ``case``, ``model``, ``noise``
    (NoiseSpec), ``domain_radius``, ``evader_speed``, ``standoff_radius`` and
    ``center``.  ``strategy`` maps
    (candidates-or-None, dataset, rng) -> TrajectorySpec for the next agent.
    ``cfg_builder`` maps a Dataset to a LossConfig (default:
    ``LossConfig.for_dataset``).
    """
    ocfg = ocfg or OptimizerConfig()
    cfg_builder = cfg_builder or LossConfig.for_dataset
    root = np.random.SeedSequence(seed)
    sim_seeds, opt_seeds, sel_rng_seed, lhs_seed = root.spawn(4)
    sel_rng = np.random.default_rng(sel_rng_seed)

    case, model = scenario.case, scenario.model
    noise: NoiseSpec = scenario.noise
    data = Dataset(
        case=case,
        model=model,
        sigma_pos=noise.sigma_pos if noise.enabled else np.zeros((2, 2)),
        sigma_t=noise.sigma_t if noise.enabled else 0.0,
    )
    known = truth  # frozen components are taken as known to the learner
    sigma_thresh = ocfg.resolved_sigma_thresh(scenario.bounds)
    starts = lhs_sample(scenario.bounds, case, ocfg.n_population, lhs_seed, known=known)

    history = LearningHistory(truth=truth)
    cands: CandidateSet | None = None
    for step in range(ocfg.max_steps):
        spec = strategy(cands, data, sel_rng)
        rec = simulate_engagement(
            truth,
            spec,
            model,
            noise,
            domain_radius=scenario.domain_radius,
            seed=sim_seeds.spawn(1)[0],
            record_launch_time=case.uses_launch_time,
        )
        data.append(rec)
        cfg = cfg_builder(data)
        cands, starts = update_round(
            starts, data, cfg, ocfg, scenario.bounds, opt_seeds.spawn(1)[0], known=known
        )
        done = is_converged(cands, case, sigma_thresh, eps_loss=ocfg.eps_loss)
        history.steps.append(LearningStep(record=rec, candidates=cands, converged=done))
        if done:
            history.converged = True
            break
    return history
