"""Command-line experiment drivers.

Subcommands:

- ``simulate``: run one sacrificial engagement against a truth and dump the
  trial record.
- ``infer``: one full active-learning run (deploy/optimize loop) with
  per-step metrics.
- ``select``: propose the next trajectory for a saved candidate set/dataset.
- ``plan``: plan a safe path around a saved candidate set.
- ``mc``: Monte Carlo suite over random truths; aggregate CSV + coverage.
- ``report``: summarize an ``mc`` output directory.

All outputs are deterministic functions of (config, master seed): files carry
a config hash, the seed, and a schema version, never timestamps.

Exit codes: 0 success, 2 config error, 3 infeasible plan, 4 step budget
exhausted before convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .domain import (
    CandidateSet,
    Dataset,
    InterceptionModel,
    LearningCase,
    TrialRecord,
)
from .geometry import ParamBounds, PursuerParams
from .inference import OptimizerConfig, run_learning_loop
from .losses import LossConfig
from .metrics import GridSpec, coverage_table, param_error, region_metrics
from .planner import (
    InfeasiblePlanError,
    KinematicLimits,
    plan_box_avoid_path,
    plan_safe_path,
    validate_path,
)
from .selection import SelectionGrid, select_bed, select_boundary
from .truthsim import NoiseSpec, TrajectorySpec, simulate_engagement

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_BUDGET = 4

_DEFAULT_LOWER = [-2.0, -2.0, -np.pi, 0.1, 0.5, 0.5]
_DEFAULT_UPPER = [2.0, 2.0, np.pi, 1.0, 3.0, 2.0]


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """One experiment's full parameterization (JSON-serializable)."""

    case_id: str = "1A"
    model: str = "boundary"
    strategy: str = ""  # "" -> paper pairing: boundary<->spread, interior<->bed
    lower: list = field(default_factory=lambda: list(_DEFAULT_LOWER))
    upper: list = field(default_factory=lambda: list(_DEFAULT_UPPER))
    sigma_pos: float = 0.02  # isotropic position noise std (B cases)
    sigma_t: float = 0.01  # launch-time noise std (B cases)
    evader_speed: float = 1.0
    standoff_margin: float = 1.3  # r_s = margin*R_max + bound half-width
    n_population: int = 64
    max_steps: int = 25
    eps_loss: float = 1e-6
    n_traj_samples: int = 200
    grid_alpha: int = 64
    grid_psi: int = 32
    metrics_resolution: int = 256
    plan_steps: list = field(default_factory=list)  # 0 = no-learning baseline
    plan_max_candidates: int = 12
    u_lb: float = -2.0
    u_ub: float = 2.0
    kappa_ub: float = 2.0
    n_runs: int = 50
    seed: int = 0

    # ---- derived quantities -------------------------------------

    def __post_init__(self):
        try:
            self.case = LearningCase(self.case_id)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.model not in ("boundary", "interior"):
            raise ConfigError(f"unknown interception model {self.model!r}")
        if self.strategy not in ("", "spread", "bed"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        try:
            self.bounds = ParamBounds(np.array(self.lower), np.array(self.upper))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.case.noisy and (self.sigma_pos < 0 or self.sigma_t < 0):
            raise ConfigError("noise levels must be nonnegative")

    @property
    def interception_model(self) -> InterceptionModel:
        return (
            InterceptionModel.BOUNDARY
            if self.model == "boundary"
            else InterceptionModel.INTERIOR
        )

    @property
    def noise(self) -> NoiseSpec:
        if not self.case.noisy:
            return NoiseSpec(np.zeros((2, 2)), 0.0, False)
        return NoiseSpec(self.sigma_pos**2 * np.eye(2), self.sigma_t, True)

    @property
    def standoff_radius(self) -> float:
        r_max = self.bounds.upper[4]
        half_width = 0.5 * float(max(self.bounds.width()[0], self.bounds.width()[1]))
        return self.standoff_margin * r_max + half_width

    @property
    def domain_radius(self) -> float:
        return 2.0 * self.standoff_radius

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bounds.lower[:2] + self.bounds.upper[:2])

    @property
    def endpoints(self):
        r = self.standoff_radius
        c = self.center
        return c + np.array([-r, 0.0]), c + np.array([r, 0.0])

    @property
    def limits(self) -> KinematicLimits:
        return KinematicLimits(self.evader_speed, self.u_lb, self.u_ub, self.kappa_ub)

    def resolved_strategy(self) -> str:
        if self.strategy:
            return self.strategy
        return "spread" if self.model == "boundary" else "bed"

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------------
# Strategies
# ------------------------------------------------------------------


def make_strategy(config: ScenarioConfig):
    grid = SelectionGrid(config.grid_alpha, config.grid_psi)
    r_s, center = config.standoff_radius, config.center
    name = config.resolved_strategy()

    def first_spec(rng):
        alpha = float(rng.uniform(-np.pi, np.pi))
        start = center + r_s * np.array([np.cos(alpha), np.sin(alpha)])
        heading = float(np.arctan2(center[1] - start[1], center[0] - start[0]))
        return TrajectorySpec(
            alpha=alpha,
            heading=heading,
            speed=config.evader_speed,
            standoff_radius=r_s,
            center=center,
        )

    def strategy(cands, data: Dataset, rng):
        if cands is None:
            return first_spec(rng)
        if name == "spread":
            past = [r.terminal for r in data.records if r.intercepted]
            return select_boundary(
                cands,
                past,
                grid,
                r_s,
                center,
                domain_radius=config.domain_radius,
                speed=config.evader_speed,
            )
        cfg = LossConfig.for_dataset(data, n_traj_samples=config.n_traj_samples)
        return select_bed(
            cands,
            data,
            grid,
            r_s,
            center,
            cfg,
            model=config.interception_model,
            domain_radius=config.domain_radius,
            speed=config.evader_speed,
        )

    return strategy


# ------------------------------------------------------------------
# Serialization helpers
# ------------------------------------------------------------------


def _params_dict(p: PursuerParams) -> dict:
    return {
        "x": p.x,
        "y": p.y,
        "heading": p.heading,
        "turn_radius": p.turn_radius,
        "engagement_range": p.engagement_range,
        "speed": p.speed,
    }


def _params_from_dict(d: dict) -> PursuerParams:
    return PursuerParams(**d)


def _cands_dict(c: CandidateSet) -> dict:
    return {
        "members": [
            {"params": _params_dict(p), "loss": float(l)} for p, l in c.members
        ],
        "mean": _params_dict(c.mean),
        "std": c.std.tolist(),
    }


def _cands_from_dict(d: dict) -> CandidateSet:
    return CandidateSet.from_members(
        [(_params_from_dict(m["params"]), m["loss"]) for m in d["members"]]
    )


def _spec_dict(s: TrajectorySpec) -> dict:
    return {
        "alpha": s.alpha,
        "heading": s.heading,
        "speed": s.speed,
        "standoff_radius": s.standoff_radius,
        "center": list(np.asarray(s.center, dtype=float)),
    }


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def _write_json(path: Path, payload: dict, config: ScenarioConfig, seed: int):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config.hash(),
        "master_seed": seed,
        **payload,
    }
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1, default=_json_default) + "\n"
    )


def _write_csv(path: Path, header_meta: dict, columns: list[str], rows):
    with path.open("w", newline="") as fh:
        for k, v in header_meta.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def _thin(cands: CandidateSet, n_max: int) -> CandidateSet:
    if len(cands) <= n_max:
        return cands
    idx = np.linspace(0, len(cands) - 1, n_max).round().astype(int)
    return CandidateSet.from_members([cands.members[i] for i in idx])


# ------------------------------------------------------------------
# Drivers
# ------------------------------------------------------------------


def sample_truths(config: ScenarioConfig, n: int, master_seed: int):
    """Uniform truths from the bounds; the sequence depends only on the
    master seed so every case reuses the same truths."""
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 7]))
    lo, hi = config.bounds.lower, config.bounds.upper
    return [PursuerParams.from_array(rng.uniform(lo, hi)) for _ in range(n)]


def run_single(config: ScenarioConfig, seed: int, out_dir: Path | None = None):
    """One learning run plus per-step metrics and optional planning."""
    truth = sample_truths(config, 1, seed)[0]
    return run_single_with_truth(config, truth, seed, out_dir)


def run_single_with_truth(
    config: ScenarioConfig, truth: PursuerParams, seed: int, out_dir: Path | None = None
):
    strategy = make_strategy(config)
    ocfg = OptimizerConfig(
        n_population=config.n_population,
        eps_loss=config.eps_loss,
        max_steps=config.max_steps,
    )
    cfg_builder = lambda data: LossConfig.for_dataset(
        data, n_traj_samples=config.n_traj_samples
    )
    scenario = SimpleNamespace(
        bounds=config.bounds,
        case=config.case,
        model=config.interception_model,
        noise=config.noise,
        domain_radius=config.domain_radius,
        evader_speed=config.evader_speed,
        standoff_radius=config.standoff_radius,
        center=config.center,
    )
    history = run_learning_loop(
        truth, scenario, strategy, cfg_builder=cfg_builder, ocfg=ocfg, seed=seed
    )

    grid = GridSpec.covering(
        [truth]
        + [PursuerParams.from_array(config.bounds.lower)]
        + [PursuerParams.from_array(config.bounds.upper)],
        resolution=config.metrics_resolution,
    )
    step_rows = []
    step_coverage = []
    for i, step in enumerate(history.steps):
        m = region_metrics(truth, step.candidates, grid)
        e = param_error(truth, step.candidates.mean, config.case)
        step_rows.append(
            [i + 1, int(step.record.intercepted), m.union_ratio, m.coverage_fraction]
            + list(e)
        )
        step_coverage.append(m.coverage_fraction)

    plans = _plan_at_steps(config, truth, history) if config.plan_steps else {}

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(
            out_dir / "history.json",
            {
                "truth": _params_dict(truth),
                "converged": history.converged,
                "steps": [
                    {
                        "record": s.record.to_dict(),
                        "candidates": _cands_dict(s.candidates),
                        "converged": s.converged,
                    }
                    for s in history.steps
                ],
                "plans": plans,
            },
            config,
            seed,
        )
        _write_csv(
            out_dir / "metrics.csv",
            {"schema_version": SCHEMA_VERSION, "config_hash": config.hash(), "master_seed": seed},
            ["step", "intercepted", "union_ratio", "coverage_fraction",
             "err_x", "err_y", "err_heading", "err_turn_radius",
             "err_engagement_range", "err_speed"],
            step_rows,
        )
    return history, step_rows, step_coverage, plans


def _plan_at_steps(config: ScenarioConfig, truth: PursuerParams, history) -> dict:
    """Normalized path times at the requested steps (0 = before learning)."""
    x0, xf = config.endpoints
    lim = config.limits
    perfect = plan_safe_path(x0, xf, CandidateSet.from_members([(truth, 0.0)]), lim)
    out = {"perfect_tf": perfect.tf, "steps": {}}
    for s in config.plan_steps:
        try:
            if s == 0:
                inflate = (
                    truth.engagement_range
                    if config.case_id.startswith("1")
                    else float(config.bounds.upper[4])
                )
                path = plan_box_avoid_path(
                    x0, xf, config.bounds.lower[:2], config.bounds.upper[:2], lim,
                    inflate=inflate,
                )
            else:
                if s > len(history.steps):
                    continue
                cands = _thin(history.steps[s - 1].candidates, config.plan_max_candidates)
                path = plan_safe_path(x0, xf, cands, lim)
            out["steps"][str(s)] = {
                "tf": path.tf,
                "normalized": path.tf / perfect.tf,
                "control_points": path.control_points.tolist(),
            }
        except InfeasiblePlanError as e:
            out["steps"][str(s)] = {"infeasible": True, "blocking": e.blocking}
    return out


def run_mc(config: ScenarioConfig, n_runs: int, master_seed: int, out_dir: Path):
    """Monte Carlo suite: per-step medians and IQRs across runs."""
    truths = sample_truths(config, n_runs, master_seed)
    seeds = [master_seed + 1000 * (i + 1) for i in range(n_runs)]
    all_rows = []
    all_cov = []
    all_plans = []
    for i, (truth, seed) in enumerate(zip(truths, seeds)):
        _, rows, cov, plans = run_single_with_truth(config, truth, seed)
        all_cov.append(list(cov))  # actual deployment steps only
        # carry the final state forward so every run spans max_steps steps
        while len(rows) < config.max_steps:
            last = list(rows[-1])
            last[0] = len(rows) + 1
            rows.append(last)
        all_rows.append(rows)
        all_plans.append(plans)

    metric_cols = ["union_ratio", "coverage_fraction", "err_x", "err_y",
                   "err_heading", "err_turn_radius", "err_engagement_range", "err_speed"]
    agg_rows = []
    data = np.array([[r[2:] for r in rows] for rows in all_rows])  # (runs, steps, m)
    for s in range(config.max_steps):
        row = [s + 1]
        for m in range(data.shape[2]):
            vals = data[:, s, m]
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            row += [med, q1, q3]
        agg_rows.append(row)
    cols = ["step"]
    for c in metric_cols:
        cols += [f"{c}_median", f"{c}_q1", f"{c}_q3"]

    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": SCHEMA_VERSION, "config_hash": config.hash(),
            "master_seed": master_seed, "n_runs": n_runs}
    _write_csv(out_dir / "aggregate.csv", meta, cols, agg_rows)

    thresholds = [0.9999, 0.99, 0.9726, 0.95, 0.90]
    table = coverage_table(all_cov, thresholds)
    _write_csv(
        out_dir / "coverage.csv",
        meta,
        ["threshold", "fraction_of_steps"],
        [[t, f] for t, f in table.items()],
    )
    _write_json(
        out_dir / "mc.json",
        {
            "truths": [_params_dict(t) for t in truths],
            "seeds": seeds,
            "coverage_table": {str(k): v for k, v in table.items()},
            "plans": all_plans,
        },
        config,
        master_seed,
    )
    return all_rows, all_cov, all_plans


# ------------------------------------------------------------------
# Command-line front end
# ------------------------------------------------------------------


def _load_config(args) -> ScenarioConfig:
    d = {}
    if args.config:
        d = json.loads(Path(args.config).read_text())
    cfg = ScenarioConfig.from_dict(d)
    if getattr(args, "case", None):
        d["case_id"] = args.case
    if getattr(args, "model", None):
        d["model"] = args.model
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    return ScenarioConfig.from_dict(d)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ezlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--case", default=None)
        p.add_argument("--model", default=None, choices=["boundary", "interior"])

    p = sub.add_parser("simulate", help="run one sacrificial engagement")
    common(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--heading", type=float, required=True)

    for name in ("infer", "mc", "report"):
        common(sub.add_parser(name))

    p = sub.add_parser("select", help="propose the next trajectory")
    common(p)
    p.add_argument("--history", required=True, help="history.json from infer")

    p = sub.add_parser("plan", help="plan a safe path around a candidate set")
    common(p)
    p.add_argument("--history", required=True)

    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
    except (ConfigError, json.JSONDecodeError, OSError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir)
    seed = config.seed

    try:
        if args.command == "simulate":
            truth = sample_truths(config, 1, seed)[0]
            spec = TrajectorySpec(
                alpha=args.alpha,
                heading=args.heading,
                speed=config.evader_speed,
                standoff_radius=config.standoff_radius,
                center=config.center,
            )
            rec = simulate_engagement(
                truth, spec, config.interception_model, config.noise,
                domain_radius=config.domain_radius, seed=seed,
                record_launch_time=config.case.uses_launch_time,
            )
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(out_dir / "record.json",
                        {"truth": _params_dict(truth), "record": rec.to_dict()},
                        config, seed)
        elif args.command == "infer":
            history, *_ = run_single(config, seed, out_dir)
            if not history.converged:
                print("step budget exhausted before convergence", file=sys.stderr)
                return EXIT_BUDGET
        elif args.command == "select":
            blob = json.loads(Path(args.history).read_text())
            cands = _cands_from_dict(blob["steps"][-1]["candidates"])
            data = Dataset(
                case=config.case,
                model=config.interception_model,
                sigma_pos=config.noise.sigma_pos if config.noise.enabled else np.zeros((2, 2)),
                sigma_t=config.noise.sigma_t if config.noise.enabled else 0.0,
                records=[TrialRecord.from_dict(s["record"]) for s in blob["steps"]],
            )
            spec = make_strategy(config)(cands, data, np.random.default_rng(seed))
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(out_dir / "next_spec.json", {"spec": _spec_dict(spec)}, config, seed)
        elif args.command == "plan":
            blob = json.loads(Path(args.history).read_text())
            cands = _thin(
                _cands_from_dict(blob["steps"][-1]["candidates"]),
                config.plan_max_candidates,
            )
            x0, xf = config.endpoints
            path = plan_safe_path(x0, xf, cands, config.limits)
            report = validate_path(path, cands, config.limits)
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(
                out_dir / "plan.json",
                {
                    "control_points": path.control_points.tolist(),
                    "order": path.order,
                    "t0": path.t0,
                    "tf": path.tf,
                    "knots": path.knots.tolist(),
                    "validation": dataclasses.asdict(report),
                },
                config, seed,
            )
        elif args.command == "mc":
            run_mc(config, config.n_runs, seed, out_dir)
        elif args.command == "report":
            table = json.loads((out_dir / "mc.json").read_text())["coverage_table"]
            for k, v in sorted(table.items(), reverse=True):
                print(f"coverage >= {float(k):.4f}: {100*v:.2f}% of steps")
    except InfeasiblePlanError as e:
        print(f"infeasible plan: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
