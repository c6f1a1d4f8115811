"""Optimizers: Adam, L-BFGS and the two-stage training loop."""

import numpy as np
import pytest

from xvapinn import loss
from xvapinn.errors import ConfigError
from xvapinn.geometry import build_grid_1d
from xvapinn.network import init
from xvapinn.optim import (
    DecaySchedule,
    STATUS_CONVERGED,
    TrainConfig,
    adam_minimize,
    adam_run,
    lbfgs_minimize,
    lbfgs_run,
    lr_at,
    train,
)

from conftest import scaled_bs1d_arch, table1_spec


def cfg(**kwargs):
    base = dict(adam_steps=0, lbfgs_steps=0, lr0=1e-3, seed=0, log_every=50)
    base.update(kwargs)
    return TrainConfig(**base)


class TestLearningRate:
    def test_initial_rate(self):
        assert lr_at(cfg(), 0) == 1e-3
        assert lr_at(cfg(), 999) == 1e-3  # no decay configured

    def test_basket_schedule(self):
        config = cfg(decay=DecaySchedule(delta=0.75, a=5000))
        assert lr_at(config, 5000) == pytest.approx(1e-3 / 1.75, rel=1e-12)
        assert lr_at(config, 5000) == pytest.approx(5.7143e-4, abs=1e-8)

    def test_heston_schedule(self):
        config = cfg(decay=DecaySchedule(delta=0.5, a=10000))
        assert lr_at(config, 10000) == pytest.approx(1e-3 / 1.5, rel=1e-12)
        assert lr_at(config, 10000) == pytest.approx(6.6667e-4, abs=1e-8)

    def test_validation(self):
        with pytest.raises(ConfigError):
            DecaySchedule(delta=0.5, a=0)
        with pytest.raises(ConfigError):
            cfg(lr0=-1.0)
        with pytest.raises(ConfigError):
            cfg(adam_steps=-1)


class TestAdam:
    def test_scalar_quadratic_converges(self):
        def fun(x):
            return float((x[0] - 3.0) ** 2), np.array([2.0 * (x[0] - 3.0)])

        result = adam_minimize(fun, np.array([0.0]), 5000, cfg(lr0=1e-2))
        assert abs(result.x[0] - 3.0) <= 1e-3

    def test_zero_gradient_leaves_parameters_unchanged(self):
        x0 = np.array([1.0, -2.0, 0.5])

        def fun(x):
            return 7.0, np.zeros_like(x)

        result = adam_minimize(fun, x0, 25, cfg(lr0=1e-2))
        assert np.array_equal(result.x, x0)

    def test_decay_is_applied(self):
        lrs = []

        def fun(x):
            return float(x[0] ** 2), np.array([2.0 * x[0]])

        config = cfg(lr0=1e-3, decay=DecaySchedule(delta=1.0, a=1))
        adam_minimize(fun, np.array([1.0]), 3, config,
                      callback=lambda k, x, v, lr: lrs.append(lr))
        assert lrs[1] == 1e-3 and lrs[2] == pytest.approx(5e-4)


class TestLbfgs:
    def test_rosenbrock(self):
        def fun(x):
            a, b = 1.0, 100.0
            f = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
            g = np.array([
                -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] ** 2),
                2.0 * b * (x[1] - x[0] ** 2),
            ])
            return float(f), g

        result = lbfgs_minimize(fun, np.array([-1.2, 1.0]), 100)
        assert result.value <= 1e-8
        assert result.steps <= 100

    def test_already_at_minimum_returns_input(self):
        x0 = np.array([2.0, -1.0])

        def fun(x):
            d = x - x0
            return float(np.dot(d, d)), 2.0 * d

        result = lbfgs_minimize(fun, x0, 50)
        assert result.status == STATUS_CONVERGED
        assert result.steps == 0
        assert np.array_equal(result.x, x0)

    def test_accepted_iterates_never_increase(self):
        values = []

        def fun(x):
            f = np.sum((x - 1.0) ** 4) + 0.5 * np.sum(x**2)
            g = 4.0 * (x - 1.0) ** 3 + x
            return float(f), g

        lbfgs_minimize(fun, np.full(5, -3.0), 60, callback=lambda k, x, f, a: values.append(f))
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


class TestPdeTraining:
    def make_problem(self, seed=0):
        spec = table1_spec(lambda_b=0.0)
        params = init(scaled_bs1d_arch(spec, 1, 8), seed)
        grid = build_grid_1d(spec.domain, 8, 10)
        return spec, params, grid

    def test_lbfgs_after_adam_does_not_worsen(self):
        spec, params, grid = self.make_problem()
        config = cfg(adam_steps=150, lbfgs_steps=40, lr0=5e-3, log_every=10)
        mid, adam_result = adam_run(spec, params, grid, config)
        final, lbfgs_result = lbfgs_run(spec, mid, grid, config, step_offset=150)
        assert lbfgs_result.value <= adam_result.value + 1e-15

    def test_training_reduces_loss_substantially(self):
        spec, params, grid = self.make_problem(seed=3)
        start = loss.assemble(spec, params, grid).total
        config = cfg(adam_steps=400, lbfgs_steps=120, lr0=1e-2, log_every=100)
        _, result = train(spec, params, grid, config)
        assert result.value <= 1e-2 * start

    def test_same_seed_is_bitwise_reproducible(self):
        config = cfg(adam_steps=60, lbfgs_steps=15, lr0=5e-3, log_every=25)
        outs = []
        for _ in range(2):
            spec, params, grid = self.make_problem(seed=5)
            trained, result = train(spec, params, grid, config)
            outs.append((trained.flatten(), result.value))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert outs[0][1] == outs[1][1]

    def test_trajectory_rows_and_region_columns(self):
        spec, params, grid = self.make_problem(seed=1)
        config = cfg(adam_steps=30, lbfgs_steps=0, lr0=1e-3, log_every=10)
        _, result = train(spec, params, grid, config)
        steps = [row["step"] for row in result.trajectory]
        assert steps == [0, 10, 20, 30]
        assert set(result.trajectory[0]["regions"]) == set(grid.regions)
        totals = [row["total"] for row in result.trajectory]
        assert all(t >= 0 for t in totals)
