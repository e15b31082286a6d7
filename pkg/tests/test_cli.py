"""End-to-end command-line driver tests."""

import json

import numpy as np
import pytest

from ezlearn.cli import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    EXIT_INFEASIBLE,
    EXIT_OK,
    SCHEMA_VERSION,
    ConfigError,
    ScenarioConfig,
    main,
    sample_truths,
)

FAST = {
    "case_id": "1A",
    "model": "boundary",
    "n_population": 16,
    "max_steps": 6,
    "metrics_resolution": 64,
    "grid_alpha": 16,
    "grid_psi": 8,
    "n_runs": 2,
    "seed": 11,
}


def _write_config(tmp_path, name="config.json", **overrides):
    cfg = {**FAST, **overrides}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


class TestScenarioConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"case_id": "1A", "bogus": 1})

    def test_bad_case_and_model_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"case_id": "9Z"})
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"model": "psychic"})

    def test_hash_stable_and_sensitive(self):
        a = ScenarioConfig.from_dict(FAST)
        b = ScenarioConfig.from_dict(FAST)
        c = ScenarioConfig.from_dict({**FAST, "seed": 12})
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()

    def test_strategy_pairing(self):
        assert ScenarioConfig.from_dict({"model": "boundary"}).resolved_strategy() == "spread"
        assert ScenarioConfig.from_dict({"model": "interior"}).resolved_strategy() == "bed"

    def test_truths_shared_across_cases(self):
        c1 = ScenarioConfig.from_dict({"case_id": "1A"})
        c2 = ScenarioConfig.from_dict({"case_id": "3B", "model": "interior"})
        t1 = sample_truths(c1, 5, 42)
        t2 = sample_truths(c2, 5, 42)
        for a, b in zip(t1, t2):
            np.testing.assert_array_equal(a.as_array(), b.as_array())


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nope": True}))
        assert main(["mc", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_missing_config_file_is_2(self, tmp_path):
        assert (
            main(["mc", "--config", str(tmp_path / "absent.json"), "--out-dir", str(tmp_path)])
            == EXIT_CONFIG
        )

    def test_budget_exhausted_is_4(self, tmp_path):
        cfg = _write_config(tmp_path, case_id="2A", max_steps=1, n_population=8)
        rc = main(["infer", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
        assert rc == EXIT_BUDGET

    def test_infeasible_plan_is_3(self, tmp_path):
        config = ScenarioConfig.from_dict(FAST)
        _, xf = config.endpoints
        blocking = {
            "x": float(xf[0]), "y": float(xf[1]), "heading": 0.0,
            "turn_radius": 0.5, "engagement_range": 2.5, "speed": 1.4,
        }
        hist = tmp_path / "history.json"
        hist.write_text(json.dumps({
            "steps": [{"candidates": {"members": [{"params": blocking, "loss": 0.0}]}}]
        }))
        cfg = _write_config(tmp_path)
        rc = main([
            "plan", "--config", str(cfg), "--history", str(hist),
            "--out-dir", str(tmp_path / "o"),
        ])
        assert rc == EXIT_INFEASIBLE


class TestSimulate:
    def test_record_written_with_metadata(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "o"
        rc = main([
            "simulate", "--config", str(cfg), "--alpha", "0.3", "--heading", "2.9",
            "--out-dir", str(out),
        ])
        assert rc == EXIT_OK
        blob = json.loads((out / "record.json").read_text())
        assert blob["schema_version"] == SCHEMA_VERSION
        assert blob["master_seed"] == FAST["seed"]
        assert blob["config_hash"] == ScenarioConfig.from_dict(FAST).hash()
        assert "intercepted" in blob["record"]

    def test_byte_identical_rerun(self, tmp_path):
        cfg = _write_config(tmp_path)
        args = ["simulate", "--config", str(cfg), "--alpha", "0.3", "--heading", "2.9"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
        assert (tmp_path / "a/record.json").read_bytes() == (tmp_path / "b/record.json").read_bytes()


@pytest.fixture(scope="module")
def infer_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("infer")
    cfg = _write_config(tmp)
    out = tmp / "o"
    rc = main(["infer", "--config", str(cfg), "--out-dir", str(out)])
    return rc, cfg, out


class TestInfer:
    def test_outputs_and_metadata(self, infer_run):
        rc, _, out = infer_run
        assert rc in (EXIT_OK, EXIT_BUDGET)
        blob = json.loads((out / "history.json").read_text())
        assert blob["schema_version"] == SCHEMA_VERSION
        assert blob["steps"]
        header = (out / "metrics.csv").read_text().splitlines()
        assert header[0].startswith("# schema_version")
        assert "union_ratio" in header[3]

    def test_select_from_history(self, infer_run, tmp_path):
        _, cfg, out = infer_run
        sel = tmp_path / "sel"
        rc = main([
            "select", "--config", str(cfg), "--history", str(out / "history.json"),
            "--out-dir", str(sel),
        ])
        assert rc == EXIT_OK
        spec = json.loads((sel / "next_spec.json").read_text())["spec"]
        config = ScenarioConfig.from_dict(json.loads(cfg.read_text()))
        start = np.asarray(spec["center"]) + spec["standoff_radius"] * np.array(
            [np.cos(spec["alpha"]), np.sin(spec["alpha"])]
        )
        assert np.linalg.norm(start - config.center) == pytest.approx(
            config.standoff_radius
        )

    def test_plan_from_history(self, infer_run, tmp_path):
        _, cfg, out = infer_run
        pl = tmp_path / "pl"
        rc = main([
            "plan", "--config", str(cfg), "--history", str(out / "history.json"),
            "--out-dir", str(pl),
        ])
        assert rc == EXIT_OK
        blob = json.loads((pl / "plan.json").read_text())
        assert blob["validation"]["feasible"]
        assert blob["tf"] > 0


class TestMonteCarlo:
    def test_mc_outputs_and_determinism(self, tmp_path):
        cfg = _write_config(tmp_path, max_steps=4, n_runs=2)
        rc = main(["mc", "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
        assert rc == EXIT_OK
        assert main(["mc", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == EXIT_OK
        for name in ("aggregate.csv", "coverage.csv", "mc.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_run_has_zero_iqr(self, tmp_path):
        cfg = _write_config(tmp_path, max_steps=3, n_runs=1)
        out = tmp_path / "o"
        assert main(["mc", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
        lines = [l for l in (out / "aggregate.csv").read_text().splitlines() if not l.startswith("#")]
        cols = lines[0].split(",")
        for line in lines[1:]:
            row = dict(zip(cols, line.split(",")))
            for c in cols:
                if c.endswith("_median"):
                    stem = c[: -len("_median")]
                    assert row[f"{stem}_q1"] == row[c] == row[f"{stem}_q3"]

    def test_report_prints_coverage(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, max_steps=3, n_runs=1)
        out = tmp_path / "o"
        assert main(["mc", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
        assert main(["report", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "coverage >= 0.9500" in text
