"""Command-line client.

Subcommands: ``train`` (multi-seed experiment runner), ``greeks``
(derivatives from a checkpoint), ``fd`` (finite-difference reference solve),
``compare`` (checkpoint against a surface or the closed form), ``price``
(closed-form one-asset prices) and ``serve`` (start the HTTP service).

Each command is a thin wrapper over the service-layer operations; the query
commands accept ``--server URL`` to run against a remote service instead of
in process.  Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import metrics, models, reference, run
from .errors import ConfigError, ContractError, NumericError, SchemaError
from .network import load_checkpoint
from .service.schemas import ExperimentConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        locs = "; ".join(
            ".".join(str(p) for p in err["loc"]) + ": " + err["msg"] for err in exc.errors()
        )
        raise ConfigError(locs)


def read_points(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError(f"points file {path} has no rows")
    return header, np.asarray(rows)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def apply_overrides(config, args):
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = [args.seed]
        updates["n_trials"] = 1
    if getattr(args, "trials", None) is not None:
        updates["n_trials"] = args.trials
        updates["seeds"] = None
    if getattr(args, "mode", None) is not None:
        updates["mode"] = args.mode
    if not updates:
        return config
    training = config.training.model_copy(update=updates)
    return config.model_copy(update={"training": training})


def _post(server, route, payload):
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=600.0)
    if resp.status_code >= 400:
        detail = resp.json().get("detail", resp.text)
        raise ConfigError(f"server rejected request: {detail}") if resp.status_code < 500 \
            else NumericError(f"server failure: {detail}")
    return resp.json()


def cmd_train(args):
    config = apply_overrides(load_config(args.config), args)
    summary = run.run_experiment(config, args.out, jobs=args.jobs)
    print(f"wrote {args.out}/summary.json ({len(summary['cases'])} case(s))")
    for case in summary["cases"]:
        if "error" in case:
            print(f"  lambda_b={case['lambda_b']}: FAILED: {case['error']}")
            continue
        line = (
            f"  lambda_b={case['lambda_b']}: best seed {case['best_seed']}, "
            f"final loss {case['final_loss']:.3e}, status {case['status']}"
        )
        if "report" in case and case["report"].get("log10_rel_l2") is not None:
            line += f", log10 rel L2 {case['report']['log10_rel_l2']:.3f}"
        print(line)
    return EXIT_OK


def cmd_greeks(args):
    config = load_config(args.config)
    if args.server:
        _, pts = read_points(args.points)
        out = _post(args.server, "/greeks", {
            "checkpoint": args.checkpoint,
            "model": config.model.model_dump(),
            "lambda_b": args.lambda_b,
            "points": pts.tolist(),
        })
        write_rows(args.out, out["columns"], out["rows"])
        print(f"wrote {args.out} ({len(out['rows'])} rows)")
        return EXIT_OK
    spec = run.spec_from_section(config.model, args.lambda_b)
    params = load_checkpoint(args.checkpoint)
    _, pts = read_points(args.points)
    columns, rows = run.greeks_table(params, spec, pts)
    write_rows(args.out, columns, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_fd(args):
    config = load_config(args.config)
    if config.evaluation.fd_reference is None:
        raise ConfigError("evaluation.fd_reference section is required for the fd command")
    if args.server:
        out = _post(args.server, "/fd", {
            "model": config.model.model_dump(),
            "fd": config.evaluation.fd_reference.model_dump(),
            "lambda_b": args.lambda_b,
            "tag": Path(args.out).stem,
        })
        print(f"server wrote {out['csv_path']} (fixed point: {out['fixed_point']})")
        return EXIT_OK
    spec = run.spec_from_section(config.model, args.lambda_b)
    surf = run.solve_fd(spec, config.evaluation.fd_reference, keep=args.keep)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    surf.save(args.out)
    fp = surf.metadata["fixed_point"]
    print(f"wrote {args.out} (+.json); fixed point used {fp['max_iterations_used']} iteration(s)")
    if spec.kind == models.HESTON:
        print(f"feller_satisfied={surf.metadata['feller_satisfied']}")
    return EXIT_OK


def cmd_compare(args):
    config = load_config(args.config)
    spec = run.spec_from_section(config.model, args.lambda_b)
    params = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.surface:
        surface = reference.SolutionSurface.load(args.surface)
        report, (names, columns) = run.compare_with_surface(params, spec, surface)
    else:
        steps = run.grid_steps(config, spec)
        report, (names, columns) = run.compare_with_closed_form(
            params, spec, steps, multiplier=config.evaluation.eval_grid_multiplier
        )
    report.save(out_dir / "report.json")
    metrics.write_pointwise_csv(out_dir / "points.csv", columns, names)
    log_l2 = report.log10_rel_l2
    print(f"rel_L2={report.rel_l2:.4e} (log10 {log_l2:.3f}); wrote {out_dir}/report.json")
    return EXIT_OK


def cmd_price(args):
    config = load_config(args.config)
    if config.model.kind != "bs1d":
        raise ConfigError("closed-form pricing is available for kind=bs1d only",
                          field="model.kind")
    _, pts = read_points(args.points)
    if args.server:
        out = _post(args.server, "/price", {
            "model": config.model.model_dump(),
            "points": pts.tolist(),
            "risky": not args.risk_free,
            "greeks": True,
        })
        rows = np.column_stack([pts, out["prices"], out["deltas"], out["gammas"]])
        write_rows(args.out, ["t", "S", "price", "delta", "gamma"], rows)
        print(f"wrote {args.out} ({len(rows)} rows)")
        return EXIT_OK
    spec = run.spec_from_section(config.model, args.lambda_b)
    table = run.price_table(spec, pts, risky=not args.risk_free, greeks=True)
    rows = np.column_stack([pts, table["prices"], table["deltas"], table["gammas"]])
    write_rows(args.out, ["t", "S", "price", "delta", "gamma"], rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(args.workdir), host=args.host, port=args.port,
                log_level="warning")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xvapinn",
        description="Price European options under counterparty credit risk with "
        "physics-informed networks, plus closed-form and finite-difference oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, server=False, lambda_b=False):
        p.add_argument("--config", required=True, help="experiment config JSON")
        if server:
            p.add_argument("--server", help="run against a remote service URL")
        if lambda_b:
            p.add_argument("--lambda-b", dest="lambda_b", type=float, default=None,
                           help="hazard-rate case (default: first of the sweep)")

    p = sub.add_parser("train", help="train network(s) and report errors")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="train exactly this seed")
    p.add_argument("--trials", type=int, help="override number of trials")
    p.add_argument("--mode", choices=["pde-boundary", "classic"],
                   help="override the residual mode")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("greeks", help="prices and derivatives from a checkpoint")
    add_common(p, server=True, lambda_b=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", required=True, help="CSV with header t,S[,S2|,v]")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(fn=cmd_greeks)

    p = sub.add_parser("fd", help="finite-difference reference solve")
    add_common(p, server=True, lambda_b=True)
    p.add_argument("--out", required=True, help="output surface CSV path")
    p.add_argument("--keep", choices=["all", "final"], default="all",
                   help="store all time levels or only the final slice")
    p.set_defaults(fn=cmd_fd)

    p = sub.add_parser("compare", help="compare a checkpoint against a reference")
    add_common(p, lambda_b=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--surface", help="surface CSV (closed form when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("price", help="closed-form one-asset prices and greeks")
    add_common(p, server=True, lambda_b=True)
    p.add_argument("--points", required=True, help="CSV with header t,S")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--risk-free", action="store_true",
                   help="price without the credit adjustment")
    p.set_defaults(fn=cmd_price)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workdir", default=".")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SchemaError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
