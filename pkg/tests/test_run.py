"""Experiment orchestration: config validation, training runs, reports."""

import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from xvapinn import models, reference, run
from xvapinn.errors import ConfigError, ContractError
from xvapinn.network import init, load_checkpoint
from xvapinn.service.schemas import ExperimentConfig, FdSection

from conftest import scaled_bs1d_arch, table1_spec


def smoke_config(**training_overrides):
    doc = {
        "model": {
            "kind": "bs1d", "option": "put", "strike": 15.0, "maturity": 5.0,
            "sigma": 0.25, "repo_rate": 0.015,
            "xva": {
                "lambda_b": 0.04, "lambda_c": 0.05, "recovery_b": 0.4,
                "recovery_c": 0.4, "rate": 0.03, "funding_spread": "rule",
            },
        },
        "grid": {"n_t": 8, "n_s": 10},
        "network": {"hidden_layers": 1, "width": 8},
        "training": {
            "adam_steps": 60, "lbfgs_steps": 10, "lr0": 0.005, "log_every": 20,
            "n_trials": 2, "base_seed": 0,
        },
    }
    doc["training"].update(training_overrides)
    return ExperimentConfig.model_validate(doc)


class TestConfigValidation:
    def test_bundled_configs_validate(self):
        for name in ("bs1d_table1.json", "basket_table3.json", "heston_table4.json",
                     "bs1d_smoke.json"):
            raw = json.loads(
                resources.files("xvapinn.configs").joinpath(name).read_text()
            )
            config = ExperimentConfig.model_validate(raw)
            spec = run.spec_from_section(config.model)
            assert spec.domain.maturity == config.model.maturity

    def test_table1_bundle_matches_published_parameters(self):
        raw = json.loads(
            resources.files("xvapinn.configs").joinpath("bs1d_table1.json").read_text()
        )
        config = ExperimentConfig.model_validate(raw)
        assert config.model.strike == 15.0
        assert config.model.xva.sweep == [0.0, 0.02, 0.04, 0.06, 0.08, 0.1]
        assert config.grid.n_t == 100 and config.grid.n_s == 110
        assert config.training.adam_steps == 10000
        assert config.training.lbfgs_steps == 2500
        spec = run.spec_from_section(config.model, 0.06)
        assert spec.xva.funding_spread == pytest.approx(0.6 * 0.06)

    def test_sweep_range_enforced(self):
        doc = smoke_config().model_dump()
        doc["model"]["xva"]["lambda_b"] = [0.2]
        with pytest.raises(ValidationError, match="lambda_b"):
            ExperimentConfig.model_validate(doc)

    def test_kind_specific_fields_enforced(self):
        doc = smoke_config().model_dump()
        doc["model"]["kind"] = "heston"
        with pytest.raises(ValidationError, match="kappa"):
            ExperimentConfig.model_validate(doc)

    def test_unknown_fields_rejected(self):
        doc = smoke_config().model_dump()
        doc["typo_section"] = {}
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(doc)

    def test_grid_fields_per_kind(self):
        config = smoke_config()
        heston_spec = models.heston(
            alpha=models.PUT, strike=1.0, maturity=2.0, repo_rate=0.025, kappa=1.5,
            eta=0.04, sigma=0.3, corr=-0.9,
            xva=models.XvaParams.with_funding_rule(0.02, 0.04, 0.3, 0.3, 0.025),
        )
        with pytest.raises(ConfigError, match="grid"):
            run.grid_steps(config, heston_spec)

    def test_explicit_funding_spread(self):
        doc = smoke_config().model_dump()
        doc["model"]["xva"]["funding_spread"] = 0.011
        config = ExperimentConfig.model_validate(doc)
        spec = run.spec_from_section(config.model, 0.04)
        assert spec.xva.funding_spread == 0.011


class TestRunExperiment:
    def test_smoke_run_writes_artifacts(self, tmp_path):
        config = smoke_config()
        summary = run.run_experiment(config, tmp_path)
        assert len(summary["cases"]) == 1
        case = summary["cases"][0]
        assert case["lambda_b"] == 0.04
        assert {t["seed"] for t in case["trials"]} == {0, 1}
        assert case["final_loss"] == min(t["final_loss"] for t in case["trials"])

        case_dir = tmp_path / "lambda_b_0.04"
        assert (case_dir / "checkpoint_best.json").exists()
        assert (case_dir / "seed_0" / "trajectory.csv").exists()
        assert (case_dir / "report.json").exists()
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "near_strike.csv").exists()
        rows = (tmp_path / "near_strike.csv").read_text().strip().splitlines()
        assert rows[0].startswith("lambda_b,S,price_rel_err")
        assert len(rows) == 4  # header + 3 strikes

        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config_hash"] == run.config_hash(config)
        assert manifest["seeds"] == [0, 1]

    def test_zero_step_training_checkpoints_initialization(self, tmp_path):
        config = smoke_config(adam_steps=0, lbfgs_steps=0, n_trials=1)
        run.run_experiment(config, tmp_path)
        spec = run.spec_from_section(config.model, 0.04)
        fresh = init(run.arch_from_config(config, spec), 0)
        saved = load_checkpoint(tmp_path / "lambda_b_0.04" / "checkpoint_best.json")
        for a, b in zip(fresh.weights, saved.weights):
            assert np.array_equal(a, b)

    def test_rerun_is_idempotent(self, tmp_path):
        config = smoke_config(n_trials=1, adam_steps=30, lbfgs_steps=5)
        run.run_experiment(config, tmp_path / "a")
        run.run_experiment(config, tmp_path / "b")
        for rel in ("summary.json", "manifest.json", "lambda_b_0.04/checkpoint_best.json",
                    "near_strike.csv"):
            assert (tmp_path / "a" / rel).read_text() == (tmp_path / "b" / rel).read_text()

    def test_best_selection_prefers_lower_loss(self, tmp_path):
        config = smoke_config(n_trials=3, adam_steps=40, lbfgs_steps=0)
        summary = run.run_experiment(config, tmp_path)
        case = summary["cases"][0]
        losses = {t["seed"]: t["final_loss"] for t in case["trials"]}
        assert case["best_seed"] == min(losses, key=losses.get)


class TestCheckpointOps:
    def test_greeks_table_constant_network(self):
        spec = table1_spec()
        params = init(scaled_bs1d_arch(spec, 1, 4), 0)
        zero = params.from_flat(np.zeros_like(params.flatten()))
        columns, rows = run.greeks_table(zero, spec, [[5.0, 15.0], [1.0, 30.0]])
        assert columns == ["t", "S", "price", "delta", "gamma"]
        for row in rows:
            assert row[2] == row[3] == row[4] == 0.0

    def test_greeks_table_dimension_mismatch(self):
        spec = table1_spec()
        params = init(scaled_bs1d_arch(spec, 1, 4), 0)
        with pytest.raises(ContractError):
            run.greeks_table(params, spec, [[5.0, 15.0, 0.1]])

    def test_compare_surface_with_itself_is_zero(self, tmp_path):
        # network surface compared against a surface built from the same
        # network must report zero error
        spec = table1_spec(lambda_b=0.02)
        params = init(scaled_bs1d_arch(spec, 1, 6), 7)
        surf = reference.fd_solve_1d(spec, 12, 8)
        values = run.network_surface(
            params,
            np.stack(np.meshgrid(surf.t, surf.axes["S"], indexing="ij"), axis=-1).reshape(-1, 2),
        ).reshape(surf.values.shape)
        own = reference.SolutionSurface(
            model_kind=spec.kind, t=surf.t, axes=surf.axes, values=values
        )
        report, (names, columns) = run.compare_with_surface(params, spec, own)
        assert report.rel_l2 == 0.0
        assert names[:2] == ["t", "S"]

    def test_compare_model_kind_mismatch(self):
        spec = table1_spec()
        params = init(scaled_bs1d_arch(spec, 1, 4), 0)
        surf = reference.SolutionSurface(
            model_kind="heston",
            t=np.array([0.0, 1.0]),
            axes={"S": np.array([0.0, 1.0]), "v": np.array([0.0, 1.0])},
            values=np.zeros((2, 2, 2)),
        )
        with pytest.raises(ContractError):
            run.compare_with_surface(params, spec, surf)

    def test_price_table_risky_flag(self):
        spec = table1_spec(lambda_b=0.04)
        pts = [[5.0, 15.0], [2.0, 10.0]]
        risky = run.price_table(spec, pts, risky=True, greeks=True)
        free = run.price_table(spec, pts, risky=False)
        factor = np.exp(-spec.xva.credit_discount * np.array([5.0, 2.0]))
        np.testing.assert_allclose(risky["prices"], free["prices"] * factor, rtol=1e-13)
        assert "deltas" in risky and "gammas" in risky

    def test_solve_fd_dispatch(self):
        report = run.solve_fd(table1_spec(0.02), FdSection(n_t=8, n_s=12))
        assert report.model_kind == "bs1d"
        with pytest.raises(ConfigError):
            run.solve_fd(table1_spec(0.02), FdSection(n_t=8, n_s1=12, n_s2=12))
