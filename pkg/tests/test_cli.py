"""Command-line interface: subcommands, exit codes, file outputs."""

import csv
import json
import socket
import threading
import time
from importlib import resources

import numpy as np
import pytest

from xvapinn import models, reference, run
from xvapinn.cli import EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, main
from xvapinn.network import init, load_checkpoint, save_checkpoint
from xvapinn.service.schemas import ExperimentConfig

from conftest import scaled_bs1d_arch, table1_spec


def write_smoke_config(path, **overrides):
    doc = {
        "model": {
            "kind": "bs1d", "option": "put", "strike": 15.0, "maturity": 5.0,
            "sigma": 0.25, "repo_rate": 0.015,
            "xva": {
                "lambda_b": 0.04, "lambda_c": 0.05, "recovery_b": 0.4,
                "recovery_c": 0.4, "rate": 0.03, "funding_spread": "rule",
            },
        },
        "grid": {"n_t": 6, "n_s": 8},
        "network": {"hidden_layers": 1, "width": 6},
        "training": {"adam_steps": 25, "lbfgs_steps": 5, "lr0": 0.005,
                     "log_every": 5, "n_trials": 1},
        "evaluation": {"eval_grid_multiplier": 1, "near_strike_band": 0.2,
                       "fd_reference": {"n_t": 12, "n_s": 16}},
    }
    for key, value in overrides.items():
        doc[key].update(value)
    path.write_text(json.dumps(doc))
    return doc


def write_points(path, rows, header=("t", "S")):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


class TestTrain:
    def test_train_writes_outputs_and_exits_zero(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        out = tmp_path / "out"
        assert main(["train", "--config", str(config), "--out", str(out)]) == EXIT_OK
        assert (out / "summary.json").exists()
        assert "best seed" in capsys.readouterr().out

    def test_seed_and_mode_overrides(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        out = tmp_path / "out"
        code = main(["train", "--config", str(config), "--out", str(out),
                     "--seed", "7", "--mode", "classic"])
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [7]
        assert manifest["config"]["training"]["mode"] == "classic"

    def test_invalid_config_exit_code(self, tmp_path):
        config = tmp_path / "bad.json"
        doc = write_smoke_config(config)
        doc["model"]["kind"] = "unknown"
        config.write_text(json.dumps(doc))
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "o")]) \
            == EXIT_VALIDATION

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path)]) == EXIT_VALIDATION


class TestPrice:
    def test_price_table(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        points = tmp_path / "points.csv"
        write_points(points, [[5.0, 12.5], [5.0, 15.0], [5.0, 17.5]])
        out = tmp_path / "prices.csv"
        assert main(["price", "--config", str(config), "--points", str(points),
                     "--out", str(out)]) == EXIT_OK
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        spec = table1_spec(lambda_b=0.04)
        want = reference.risky_bs_price(5.0, 15.0, spec)
        assert float(rows[1]["price"]) == pytest.approx(want, rel=1e-12)

    def test_risk_free_flag(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        points = tmp_path / "points.csv"
        write_points(points, [[5.0, 15.0]])
        out_risky = tmp_path / "risky.csv"
        out_free = tmp_path / "free.csv"
        main(["price", "--config", str(config), "--points", str(points),
              "--out", str(out_risky)])
        main(["price", "--config", str(config), "--points", str(points),
              "--out", str(out_free), "--risk-free"])
        risky = float(list(csv.DictReader(open(out_risky)))[0]["price"])
        free = float(list(csv.DictReader(open(out_free)))[0]["price"])
        assert risky == pytest.approx(free * np.exp(-0.054 * 5.0), rel=1e-12)


class TestGreeksAndCompare:
    def test_greeks_from_checkpoint(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        spec = table1_spec(lambda_b=0.04)
        params = init(scaled_bs1d_arch(spec, 1, 6), 2)
        ckpt = tmp_path / "model.json"
        save_checkpoint(params, ckpt)
        points = tmp_path / "points.csv"
        write_points(points, [[5.0, 15.0], [1.0, 10.0]])
        out = tmp_path / "greeks.csv"
        assert main(["greeks", "--config", str(config), "--checkpoint", str(ckpt),
                     "--points", str(points), "--out", str(out)]) == EXIT_OK
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"t", "S", "price", "delta", "gamma"}

    def test_compare_against_fd_surface(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        surface = tmp_path / "ref.csv"
        assert main(["fd", "--config", str(config), "--out", str(surface)]) == EXIT_OK
        spec = table1_spec(lambda_b=0.04)
        params = init(scaled_bs1d_arch(spec, 1, 6), 2)
        ckpt = tmp_path / "model.json"
        save_checkpoint(params, ckpt)
        out = tmp_path / "cmp"
        assert main(["compare", "--config", str(config), "--checkpoint", str(ckpt),
                     "--surface", str(surface), "--out", str(out)]) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["rel_l2"] > 0
        header = (out / "points.csv").read_text().splitlines()[0]
        assert header == "t,S,ref,approx,rel_err,clamped_err"

    def test_compare_kind_mismatch_is_validation_error(self, tmp_path):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        heston_cfg = json.loads(
            resources.files("xvapinn.configs").joinpath("heston_table4.json").read_text()
        )
        heston_path = tmp_path / "heston.json"
        heston_path.write_text(json.dumps(heston_cfg))
        surf = reference.fd_solve_1d(table1_spec(0.02), 8, 8)
        surface = tmp_path / "surf.csv"
        surf.save(surface)
        spec = run.spec_from_section(ExperimentConfig.model_validate(heston_cfg).model, 0.02)
        params = init(scaled_bs1d_arch(spec, 1, 4), 0)
        ckpt = tmp_path / "heston_model.json"
        save_checkpoint(params, ckpt)
        assert main(["compare", "--config", str(heston_path), "--checkpoint", str(ckpt),
                     "--surface", str(surface), "--out", str(tmp_path / "c")]) \
            == EXIT_VALIDATION


class TestFd:
    def test_fd_writes_surface_and_meta(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        write_smoke_config(config)
        out = tmp_path / "surface.csv"
        assert main(["fd", "--config", str(config), "--out", str(out)]) == EXIT_OK
        surf = reference.SolutionSurface.load(out)
        assert surf.values.shape == (13, 17)
        assert "fixed point" in capsys.readouterr().out

    def test_fd_without_reference_section(self, tmp_path):
        config = tmp_path / "config.json"
        doc = write_smoke_config(config)
        doc["evaluation"].pop("fd_reference")
        config.write_text(json.dumps(doc))
        assert main(["fd", "--config", str(config), "--out", str(tmp_path / "s.csv")]) \
            == EXIT_VALIDATION


@pytest.mark.slow
class TestRemoteMode:
    def test_price_against_live_server(self, tmp_path):
        import uvicorn

        from xvapinn.service.app import create_app

        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            port = sock.getsockname()[1]
        server = uvicorn.Server(
            uvicorn.Config(create_app(tmp_path), host="127.0.0.1", port=port,
                           log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 15
        while not server.started and time.time() < deadline:
            time.sleep(0.05)
        assert server.started
        try:
            config = tmp_path / "config.json"
            write_smoke_config(config)
            points = tmp_path / "points.csv"
            write_points(points, [[5.0, 15.0]])
            out = tmp_path / "prices.csv"
            code = main(["price", "--config", str(config), "--points", str(points),
                         "--out", str(out), "--server", f"http://127.0.0.1:{port}"])
            assert code == EXIT_OK
            row = list(csv.DictReader(open(out)))[0]
            spec = table1_spec(lambda_b=0.04)
            assert float(row["price"]) == pytest.approx(
                reference.risky_bs_price(5.0, 15.0, spec), rel=1e-9
            )
        finally:
            server.should_exit = True
            thread.join(timeout=10)
