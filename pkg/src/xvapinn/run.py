"""Experiment orchestration: build model/grid/network from a validated
config, train across hazard-rate cases and seeds, pick the best trial per
case by final loss, and measure errors against the configured oracle
(closed form for the one-asset model, finite differences otherwise).

Every run writes a manifest (config hash, seeds, library versions) that
pins down the inputs; reruns with the same config and seeds produce
byte-identical artifacts on one platform.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__, loss, metrics, models, reference
from .autodiff import input_jet
from .errors import ConfigError, ContractError
from .geometry import trapezoid_weights
from .network import (
    Architecture,
    InputScaling,
    forward,
    init,
    load_checkpoint,
    save_checkpoint,
)
from .optim import DecaySchedule, TrainConfig, train
from .service.schemas import ExperimentConfig, ModelSection

OPTION_ALPHA = {"put": models.PUT, "call": models.CALL}


def xva_from_section(section, lambda_b):
    if section.funding_spread == "rule":
        return models.XvaParams.with_funding_rule(
            lambda_b=lambda_b,
            lambda_c=section.lambda_c,
            recovery_b=section.recovery_b,
            recovery_c=section.recovery_c,
            rate=section.rate,
        )
    return models.XvaParams(
        lambda_b=lambda_b,
        lambda_c=section.lambda_c,
        recovery_b=section.recovery_b,
        recovery_c=section.recovery_c,
        funding_spread=section.funding_spread,
        rate=section.rate,
    )


def spec_from_section(section: ModelSection, lambda_b=None):
    """ModelSpec for one hazard-rate case (default: first of the sweep)."""
    if lambda_b is None:
        lambda_b = section.xva.sweep[0]
    xva = xva_from_section(section.xva, lambda_b)
    alpha = OPTION_ALPHA[section.option]
    s_max = section.s_max_strikes * section.strike
    if section.kind == "bs1d":
        return models.bs1d(
            alpha=alpha, strike=section.strike, maturity=section.maturity,
            sigma=section.sigma, repo_rate=section.repo_rate, xva=xva, s_max=s_max,
        )
    if section.kind in ("basket_average", "basket_worst_of"):
        factory = (
            models.basket_average if section.kind == "basket_average" else models.basket_worst_of
        )
        return factory(
            alpha=alpha, strike=section.strike, maturity=section.maturity,
            sigma1=section.sigma1, sigma2=section.sigma2,
            repo_rate1=section.repo_rate1, repo_rate2=section.repo_rate2,
            corr=section.corr, xva=xva, s1_max=s_max, s2_max=s_max,
        )
    return models.heston(
        alpha=alpha, strike=section.strike, maturity=section.maturity,
        repo_rate=section.repo_rate, kappa=section.kappa, eta=section.eta,
        sigma=section.sigma, corr=section.corr, xva=xva, s_max=s_max,
        v_max=section.v_max, strict_neumann=section.strict_neumann,
    )


def grid_steps(config: ExperimentConfig, spec):
    g = config.grid
    if spec.kind == models.BS1D:
        if g.n_s is None:
            raise ConfigError("required for one-asset models", field="grid.n_s")
        return {"t": g.n_t, "S": g.n_s}
    if spec.kind in (models.BASKET_AVERAGE, models.BASKET_WORST_OF):
        if g.n_s1 is None or g.n_s2 is None:
            raise ConfigError("required for basket models", field="grid.n_s1/n_s2")
        return {"t": g.n_t, "S1": g.n_s1, "S2": g.n_s2}
    if g.n_s is None or g.n_v is None:
        raise ConfigError("required for the Heston model", field="grid.n_s/n_v")
    return {"t": g.n_t, "S": g.n_s, "v": g.n_v}


def arch_from_config(config: ExperimentConfig, spec):
    net = config.network
    scaling = None
    if net.input_scaling:
        scaling = InputScaling.from_bounds(
            [(0.0, spec.domain.maturity)] + [(a.lo, a.hi) for a in spec.domain.axes]
        )
    return Architecture(
        input_dim=1 + len(spec.domain.axes),
        hidden_layers=net.hidden_layers,
        hidden_width=net.width,
        activation=net.activation,
        input_scaling=scaling,
    )


def train_config(config: ExperimentConfig, seed):
    tr = config.training
    decay = DecaySchedule(delta=tr.decay.delta, a=tr.decay.a) if tr.decay else None
    return TrainConfig(
        adam_steps=tr.adam_steps,
        lbfgs_steps=tr.lbfgs_steps,
        lr0=tr.lr0,
        decay=decay,
        lbfgs_memory=tr.lbfgs_memory,
        seed=seed,
        log_every=tr.log_every,
        mode=tr.mode,
    )


def config_hash(config: ExperimentConfig):
    canonical = json.dumps(config.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(config: ExperimentConfig, out_dir):
    doc = {
        "config_hash": config_hash(config),
        "config": config.model_dump(),
        "seeds": config.training.seed_list,
        "versions": {
            "xvapinn": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "platform": {"machine": platform.machine(), "system": platform.system()},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return doc


# -- evaluation helpers ----------------------------------------------------------


def tensor_eval_grid(spec, steps, multiplier=1):
    """Uniform evaluation mesh over the full space-time box with tensor
    trapezoid weights; decoupled from (finer than) the training grid."""
    axes = [np.linspace(0.0, spec.domain.maturity, multiplier * steps["t"] + 1)]
    for ax in spec.domain.axes:
        axes.append(np.linspace(ax.lo, ax.hi, multiplier * steps[ax.name] + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    weights = np.ones(1)
    for g in axes:
        weights = np.multiply.outer(weights, trapezoid_weights(g)).ravel()
    return points, weights, axes


def network_surface(params, points):
    return forward(params, points)


def near_strike_points(spec):
    k = spec.strike
    return np.array([k - k / 6.0, k, k + k / 6.0])


def bs1d_reports(params, spec, steps, evaluation):
    """Full-domain norms against the risky closed form plus a near-strike
    price/delta/gamma error table at full time to maturity."""
    points, weights, _ = tensor_eval_grid(spec, steps, evaluation.eval_grid_multiplier)
    ref = reference.risky_bs_price(points[:, 0], points[:, 1], spec)
    approx = network_surface(params, points)
    full = metrics.relative_norms(
        approx, ref, weights=weights,
        grid=f"tensor x{evaluation.eval_grid_multiplier} over training resolution",
    )
    band = evaluation.near_strike_band
    mask = np.abs(points[:, 1] - spec.strike) <= band * spec.strike
    near = metrics.relative_norms(
        approx[mask], ref[mask], grid=f"|S - K| <= {band} K", extras={"points": int(mask.sum())}
    )

    t_full = spec.domain.maturity
    rows = []
    for s in near_strike_points(spec):
        jet = input_jet(params, np.array([t_full, s]))
        price_ref = reference.risky_bs_price(t_full, s, spec)
        delta_ref, gamma_ref = reference.risky_bs_greeks(t_full, s, spec)
        rows.append(
            {
                "S": float(s),
                "price_rel_err": abs(jet.value - price_ref) / abs(price_ref),
                "delta_rel_err": abs(jet.d_x[0] - delta_ref) / abs(delta_ref),
                "gamma_rel_err": abs(jet.d_xx[0, 0] - gamma_ref) / abs(gamma_ref),
            }
        )
    return full, near, rows


def band_mask_2d(spec, pts_spatial):
    band = 0.2 * spec.strike
    if spec.kind == models.BASKET_AVERAGE:
        basis = 0.5 * (pts_spatial[:, 0] + pts_spatial[:, 1])
    elif spec.kind == models.BASKET_WORST_OF:
        basis = np.minimum(pts_spatial[:, 0], pts_spatial[:, 1])
    else:
        basis = pts_spatial[:, 0]
    return np.abs(basis - spec.strike) <= band


def fd_reports(params, spec, fd_section):
    """Compare a trained network with a finite-difference reference at the
    full time to maturity: whole final slice and the near-ATM band."""
    surf = solve_fd(spec, fd_section, keep="final")
    grids = [surf.axes[name] for name in surf.axis_names]
    mesh = np.meshgrid(*grids, indexing="ij")
    pts_spatial = np.stack([m.ravel() for m in mesh], axis=1)
    pts = np.column_stack([np.full(pts_spatial.shape[0], spec.domain.maturity), pts_spatial])
    approx = network_surface(params, pts)
    ref = surf.final().ravel()
    weights = np.multiply.outer(
        trapezoid_weights(grids[0]), trapezoid_weights(grids[1])
    ).ravel()
    full = metrics.relative_norms(
        approx, ref, weights=weights, grid="fd final slice",
        extras=dict(surf.metadata),
    )
    mask = band_mask_2d(spec, pts_spatial)
    clamp = metrics.clamped_error_map(approx[mask], ref[mask])
    band = metrics.relative_norms(
        approx[mask], ref[mask], grid="fd final slice, near-ATM band",
        extras={"points": int(mask.sum()), "clamped_max": float(clamp.max())},
    )
    return full, band


def solve_fd(spec, fd_section, keep="all"):
    if spec.kind == models.BS1D:
        if fd_section.n_s is None:
            raise ConfigError("required for one-asset models", field="fd.n_s")
        return reference.fd_solve_1d(
            spec, fd_section.n_s, fd_section.n_t,
            fixed_point_tol=fd_section.fixed_point_tol, max_iters=fd_section.max_iters,
        )
    if spec.kind in (models.BASKET_AVERAGE, models.BASKET_WORST_OF):
        if fd_section.n_s1 is None or fd_section.n_s2 is None:
            raise ConfigError("required for basket models", field="fd.n_s1/n_s2")
        n1, n2 = fd_section.n_s1, fd_section.n_s2
    else:
        if fd_section.n_s is None or fd_section.n_v is None:
            raise ConfigError("required for the Heston model", field="fd.n_s/n_v")
        n1, n2 = fd_section.n_s, fd_section.n_v
    return reference.fd_solve_2d(
        spec, n1, n2, fd_section.n_t,
        fixed_point_tol=fd_section.fixed_point_tol, max_iters=fd_section.max_iters,
        keep=keep,
    )


# -- training driver ---------------------------------------------------------------


def _case_label(lambda_b):
    return f"lambda_b_{lambda_b:.4f}".rstrip("0").rstrip(".")


def _run_single_seed(args):
    config, lambda_b, seed, out_dir = args
    spec = spec_from_section(config.model, lambda_b)
    grid = models.build_grid(spec, grid_steps(config, spec))
    params = init(arch_from_config(config, spec), seed)
    trained, result = train(spec, params, grid, train_config(config, seed))
    seed_dir = Path(out_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(trained, seed_dir / "checkpoint.json")
    loss.write_trajectory(
        seed_dir / "trajectory.csv", result.trajectory, sorted(grid.regions)
    )
    record = {
        "seed": seed,
        "final_loss": result.value,
        "status": result.status,
        "steps": result.steps,
    }
    (seed_dir / "result.json").write_text(json.dumps(record, indent=2))
    return record


def run_experiment(config: ExperimentConfig, out_dir, jobs=1):
    """Train every (hazard-rate case, seed) pair, keep the best trial per
    case, and write reports; returns the summary document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(config, out_dir)

    seeds = config.training.seed_list
    summary = {"cases": [], "config_hash": config_hash(config)}
    near_rows_all = []
    for lambda_b in config.model.xva.sweep:
        case_dir = out_dir / _case_label(lambda_b)
        case_dir.mkdir(parents=True, exist_ok=True)
        tasks = [(config, lambda_b, seed, case_dir) for seed in seeds]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(_run_single_seed, tasks))
        else:
            records = [_run_single_seed(task) for task in tasks]

        # failures are recorded per seed without aborting the sweep
        usable = [r for r in records if np.isfinite(r["final_loss"])]
        if not usable:
            summary["cases"].append(
                {"lambda_b": lambda_b, "error": "no trial produced a finite loss"}
            )
            continue
        best = min(usable, key=lambda r: r["final_loss"])
        best_ckpt = case_dir / f"seed_{best['seed']}" / "checkpoint.json"
        (case_dir / "checkpoint_best.json").write_text(best_ckpt.read_text())
        (case_dir / "best.json").write_text(json.dumps(best, indent=2))

        spec = spec_from_section(config.model, lambda_b)
        params = load_checkpoint(case_dir / "checkpoint_best.json")
        case = {
            "lambda_b": lambda_b,
            "best_seed": best["seed"],
            "final_loss": best["final_loss"],
            "status": best["status"],
            "trials": records,
        }
        steps = grid_steps(config, spec)
        if spec.kind == models.BS1D:
            full, near, rows = bs1d_reports(params, spec, steps, config.evaluation)
            full.save(case_dir / "report.json")
            near.save(case_dir / "report_near_strike.json")
            case["report"] = full.to_dict()
            case["report_near_strike"] = near.to_dict()
            case["near_strike_rows"] = rows
            for row in rows:
                near_rows_all.append({"lambda_b": lambda_b, **row})
        elif config.evaluation.fd_reference is not None:
            full, band = fd_reports(params, spec, config.evaluation.fd_reference)
            full.save(case_dir / "report.json")
            band.save(case_dir / "report_band.json")
            case["report"] = full.to_dict()
            case["report_band"] = band.to_dict()
        summary["cases"].append(case)

    if near_rows_all:
        _write_near_strike_table(out_dir / "near_strike.csv", near_rows_all)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def _write_near_strike_table(path, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda_b", "S", "price_rel_err", "delta_rel_err", "gamma_rel_err"])
        for row in rows:
            writer.writerow(
                [row["lambda_b"], row["S"], repr(row["price_rel_err"]),
                 repr(row["delta_rel_err"]), repr(row["gamma_rel_err"])]
            )


# -- checkpoint-level operations (greeks, compare, price) -------------------------


GREEK_COLUMNS = {
    models.BS1D: ("t", "S", "price", "delta", "gamma"),
    models.BASKET_AVERAGE: ("t", "S1", "S2", "price", "delta_S1", "delta_S2",
                            "gamma_S1", "gamma_S2"),
    models.BASKET_WORST_OF: ("t", "S1", "S2", "price", "delta_S1", "delta_S2",
                             "gamma_S1", "gamma_S2"),
    models.HESTON: ("t", "S", "v", "price", "delta", "gamma", "vega"),
}


def greeks_table(params, spec, points):
    """Price and derivative rows from the network's jets.

    delta/gamma are asset derivatives; vega (variance sensitivity) applies to
    the stochastic-variance model.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 1 + len(spec.domain.axes):
        raise ContractError(
            f"points must have {1 + len(spec.domain.axes)} columns for {spec.kind}"
        )
    rows = []
    for pt in points:
        jet = input_jet(params, pt)
        if spec.kind == models.BS1D:
            rows.append([*pt, jet.value, jet.d_x[0], jet.d_xx[0, 0]])
        elif spec.kind == models.HESTON:
            rows.append([*pt, jet.value, jet.d_x[0], jet.d_xx[0, 0], jet.d_x[1]])
        else:
            rows.append(
                [*pt, jet.value, jet.d_x[0], jet.d_x[1], jet.d_xx[0, 0], jet.d_xx[1, 1]]
            )
    return list(GREEK_COLUMNS[spec.kind]), rows


def compare_with_surface(params, spec, surface):
    """Evaluate the network on a stored surface's grid (all time levels) and
    report norms plus per-point clamped errors."""
    if surface.model_kind != spec.kind:
        raise ContractError(
            f"surface was computed for {surface.model_kind!r}, spec is {spec.kind!r}"
        )
    grids = [surface.t] + [surface.axes[name] for name in surface.axis_names]
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    approx = network_surface(params, pts)
    ref = surface.values.ravel()
    weights = np.ones(1)
    for g in grids:
        weights = np.multiply.outer(weights, trapezoid_weights(g)).ravel()
    report = metrics.relative_norms(
        approx, ref, weights=weights, grid="stored surface, all time levels",
        extras=dict(surface.metadata),
    )
    clamped = metrics.clamped_error_map(approx, ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref != 0.0, np.abs(approx - ref) / np.abs(ref), np.inf)
    columns = [pts[:, k] for k in range(pts.shape[1])] + [ref, approx, rel, clamped]
    names = ["t", *surface.axis_names, "ref", "approx", "rel_err", "clamped_err"]
    return report, (names, columns)


def compare_with_closed_form(params, spec, steps, multiplier=2):
    if spec.kind != models.BS1D:
        raise ContractError("closed-form comparison requires the one-asset model")
    points, weights, _ = tensor_eval_grid(spec, steps, multiplier)
    ref = reference.risky_bs_price(points[:, 0], points[:, 1], spec)
    approx = network_surface(params, points)
    report = metrics.relative_norms(
        approx, ref, weights=weights, grid=f"closed form, tensor x{multiplier}"
    )
    clamped = metrics.clamped_error_map(approx, ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref != 0.0, np.abs(approx - ref) / np.abs(ref), np.inf)
    columns = [points[:, 0], points[:, 1], ref, approx, rel, clamped]
    return report, (["t", "S", "ref", "approx", "rel_err", "clamped_err"], columns)


def price_table(spec, points, risky=True, greeks=False):
    """Closed-form one-asset prices (optionally with greeks) at points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ContractError("points must be rows of (t, S)")
    t, s = points[:, 0], points[:, 1]
    price = reference.risky_bs_price(t, s, spec) if risky else reference.bs_price(t, s, spec)
    out = {"prices": price}
    if greeks:
        delta, gamma = (
            reference.risky_bs_greeks(t, s, spec) if risky else reference.bs_greeks(t, s, spec)
        )
        out["deltas"] = delta
        out["gammas"] = gamma
    return out
