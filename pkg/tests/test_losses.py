"""Hinge-style consistency losses over recorded engagements."""

import numpy as np
import pytest

from ezlearn.domain import Dataset, InterceptionModel, LearningCase
from ezlearn.geometry import PursuerParams
from ezlearn.losses import (
    LossConfig,
    LossEvaluator,
    MARGIN_FLOOR,
    agent_loss,
    resq,
    time_loss,
    total_loss,
    total_loss_gradient,
)
from ezlearn.truthsim import NoiseSpec, TrajectorySpec, simulate_engagement

from conftest import random_params

NOISELESS = NoiseSpec()
R_S = 6.0
DOMAIN = 12.0


def _aimed_spec(rng, truth):
    alpha = rng.uniform(-np.pi, np.pi)
    start = R_S * np.array([np.cos(alpha), np.sin(alpha)])
    aim = np.arctan2(truth.y - start[1], truth.x - start[0])
    return TrajectorySpec(alpha=alpha, heading=aim, speed=1.0, standoff_radius=R_S)


def _dataset(truth, rng, n_agents, model, case_id="1A", record_launch_time=False):
    case = LearningCase(case_id)
    records = []
    while len(records) < n_agents:
        rec = simulate_engagement(
            truth,
            _aimed_spec(rng, truth),
            model,
            NOISELESS,
            domain_radius=DOMAIN,
            seed=int(rng.integers(1 << 30)),
            record_launch_time=record_launch_time,
        )
        records.append(rec)
    return Dataset(case=case, model=model, records=records)


class TestResq:
    def test_values(self):
        assert resq(-1.0) == 0.0
        assert resq(0.0) == 0.0
        assert resq(2.0) == 2.0
        assert resq(3.0) == 4.5

    def test_continuity_at_zero(self):
        for x in (1e-9, -1e-9):
            assert resq(x) < 1e-17


class TestZeroAtTruth:
    @pytest.mark.parametrize("model", [InterceptionModel.BOUNDARY, InterceptionModel.INTERIOR])
    def test_boundary_and_interior(self, model):
        rng = np.random.default_rng(0)
        for _ in range(5):
            truth = random_params(rng)
            data = _dataset(truth, rng, 6, model)
            cfg = LossConfig.for_dataset(data)
            assert total_loss(truth, data, cfg) == 0.0

    def test_with_launch_times(self):
        rng = np.random.default_rng(1)
        truth = random_params(rng)
        data = _dataset(
            truth, rng, 6, InterceptionModel.BOUNDARY, case_id="3A", record_launch_time=True
        )
        cfg = LossConfig.for_dataset(data)
        assert total_loss(truth, data, cfg) == 0.0

    def test_positive_away_from_truth(self):
        rng = np.random.default_rng(2)
        truth = random_params(rng)
        data = _dataset(truth, rng, 8, InterceptionModel.BOUNDARY)
        cfg = LossConfig.for_dataset(data)
        shifted = PursuerParams.from_array(truth.as_array() + np.array([1.0, 1.0, 0, 0, 0, 0]))
        assert total_loss(shifted, data, cfg) > 0.0


class TestLossConfig:
    def test_margins_floor_for_noise_free_data(self):
        rng = np.random.default_rng(3)
        truth = random_params(rng)
        data = _dataset(truth, rng, 3, InterceptionModel.BOUNDARY)
        cfg = LossConfig.for_dataset(data)
        assert cfg.eps_pos == MARGIN_FLOOR
        assert cfg.delta_t == MARGIN_FLOOR

    def test_margins_scale_with_noise(self):
        rng = np.random.default_rng(4)
        truth = random_params(rng)
        data = _dataset(truth, rng, 3, InterceptionModel.BOUNDARY)
        sigma = 0.02
        noisy = Dataset(
            case=LearningCase("1B"),
            model=data.model,
            sigma_pos=sigma**2 * np.eye(2),
            sigma_t=0.01,
            records=data.records,
        )
        cfg = LossConfig.for_dataset(noisy)
        assert cfg.eps_pos == pytest.approx(3.0 * sigma)
        assert cfg.delta_t == pytest.approx(3.0 * 0.01)


class TestEvaluator:
    def test_matches_module_level_functions(self):
        rng = np.random.default_rng(5)
        truth = random_params(rng)
        data = _dataset(truth, rng, 6, InterceptionModel.BOUNDARY)
        cfg = LossConfig.for_dataset(data)
        ev = LossEvaluator(data, cfg)
        for _ in range(10):
            theta = random_params(rng)
            assert ev.loss(theta) == pytest.approx(total_loss(theta, data, cfg), rel=1e-12)

    def test_loss_and_gradient_consistent(self):
        rng = np.random.default_rng(6)
        truth = random_params(rng)
        data = _dataset(truth, rng, 6, InterceptionModel.BOUNDARY)
        cfg = LossConfig.for_dataset(data)
        ev = LossEvaluator(data, cfg)
        theta = random_params(rng)
        f, g = ev.loss_and_gradient(theta)
        assert f == pytest.approx(ev.loss(theta), rel=1e-12)
        np.testing.assert_allclose(g, total_loss_gradient(theta, data, cfg), atol=1e-12)


class TestGradient:
    @pytest.mark.parametrize("model", [InterceptionModel.BOUNDARY, InterceptionModel.INTERIOR])
    def test_matches_finite_differences(self, model):
        rng = np.random.default_rng(7)
        truth = random_params(rng)
        # use the richest case available per model so little is masked:
        # launch-time records (family 3) only exist for the boundary model
        boundary = model is InterceptionModel.BOUNDARY
        data = _dataset(
            truth, rng, 6, model,
            case_id="3A" if boundary else "2A",
            record_launch_time=boundary,
        )
        cfg = LossConfig.for_dataset(data)
        ev = LossEvaluator(data, cfg)
        h = 1e-6
        checked = 0
        while checked < 10:
            theta = random_params(rng)
            f, g = ev.loss_and_gradient(theta)
            if f < 1e-12:
                continue
            arr = theta.as_array()
            fd = np.zeros(6)
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                fd[k] = (
                    ev.loss(PursuerParams.from_array(arr + e))
                    - ev.loss(PursuerParams.from_array(arr - e))
                ) / (2.0 * h)
            # skip genuinely kinked draws: one-sided slopes must agree first
            fd_fwd = np.zeros(6)
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                fd_fwd[k] = (ev.loss(PursuerParams.from_array(arr + e)) - f) / h
            if np.max(np.abs(fd - fd_fwd)) > 1e-3 * (1.0 + np.abs(fd).max()):
                continue
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)
            checked += 1

    def test_launch_time_loss_gradient(self):
        rng = np.random.default_rng(8)
        truth = random_params(rng)
        data = _dataset(
            truth, rng, 6, InterceptionModel.BOUNDARY, case_id="3A", record_launch_time=True
        )
        cfg = LossConfig.for_dataset(data)
        ev = LossEvaluator(data, cfg)
        h = 1e-6
        checked = 0
        while checked < 5:
            theta = random_params(rng)
            f, g = ev.loss_and_gradient(theta)
            if f < 1e-12:
                continue
            arr = theta.as_array()
            ok = True
            fd = np.zeros(6)
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                up = ev.loss(PursuerParams.from_array(arr + e))
                dn = ev.loss(PursuerParams.from_array(arr - e))
                fd[k] = (up - dn) / (2.0 * h)
                if abs((up - f) / h - fd[k]) > 1e-3 * (1.0 + abs(fd[k])):
                    ok = False
            if not ok:
                continue
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)
            checked += 1


class TestFrozenComponents:
    def test_case1_loss_flat_in_frozen_parameters(self):
        rng = np.random.default_rng(9)
        truth = random_params(rng)
        data = _dataset(truth, rng, 5, InterceptionModel.BOUNDARY, case_id="1A")
        cfg = LossConfig.for_dataset(data)
        ev = LossEvaluator(data, cfg)
        theta = random_params(rng)
        _, g = ev.loss_and_gradient(theta)
        # frozen turn radius / range / speed gradients are masked out
        np.testing.assert_allclose(g[3:], 0.0, atol=1e-15)


def test_agent_and_time_loss_decompose_total():
    rng = np.random.default_rng(10)
    truth = random_params(rng)
    data = _dataset(
        truth, rng, 5, InterceptionModel.BOUNDARY, case_id="3A", record_launch_time=True
    )
    cfg = LossConfig.for_dataset(data)
    theta = random_params(rng)
    parts = sum(
        agent_loss(theta, rec, cfg, data.model) + time_loss(theta, rec, cfg)
        for rec in data.records
    )
    assert total_loss(theta, data, cfg) == pytest.approx(parts, rel=1e-12)
