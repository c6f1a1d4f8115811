"""Volume-normalized trapezoidal loss over a collocation grid.

Each region contributes (lambda_hat / volume) * sum_i w_i * R(p_i)^2 with all
lambda_hat equal to one by default: normalizing every addend by the measure
of its own region is what removes the need for hand-tuned weights once the
boundary residuals are built by substitution.  Overrides are kept only for
ablation runs against the classic residual mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._mem import tune_allocator
from .autodiff import TapedParams, as_array, jet_channels, vdot
from .errors import ContractError, NumericError
from .models import residuals as build_residuals
from .models import PDE_BOUNDARY

__all__ = ["LossBreakdown", "assemble", "assemble_with_gradient", "write_trajectory"]


@dataclass(frozen=True)
class LossBreakdown:
    """Per-region normalized residual sums and their total."""

    regions: dict
    total: float

    def __getitem__(self, name):
        return self.regions[name]


def _check_regions(grid, residual_set):
    grid_regions = set(grid.regions)
    ops_regions = residual_set.regions()
    if grid_regions != ops_regions:
        raise ContractError(
            f"grid regions {sorted(grid_regions)} do not match residual regions "
            f"{sorted(ops_regions)}"
        )


def _region_terms(params_like, grid, residual_set, lambda_hat):
    terms = {}
    scalars = []
    for name, region in grid.regions.items():
        op = residual_set[name]
        if region.points.shape[0] == 0:
            terms[name] = 0.0
            continue
        jets = jet_channels(
            params_like.weights,
            params_like.biases,
            params_like.input_scaling_arrays(),
            region.points,
        )
        res = op(jets, region.points)
        res_data = as_array(res)
        if not np.isfinite(res_data).all():
            bad = int(np.flatnonzero(~np.isfinite(res_data))[0])
            raise NumericError("non-finite residual", region=name, index=bad)
        lam = lambda_hat.get(name, 1.0) if lambda_hat else 1.0
        term = vdot(region.weights, res * res) * (lam / region.volume)
        terms[name] = term
        scalars.append(term)
    # deterministic reduction order: insertion order of the grid regions
    total = scalars[0]
    for term in scalars[1:]:
        total = total + term
    return terms, total


def assemble_field(spec, jets_fn, grid, mode=PDE_BOUNDARY, lambda_hat=None):
    """Loss breakdown of an arbitrary jet-producing field.

    ``jets_fn(points)`` returns the field's jet channels at the given
    space-time points; closed-form solutions plug in here for oracle checks.
    """
    residual_set = build_residuals(spec, mode)
    _check_regions(grid, residual_set)
    terms = {}
    total = 0.0
    for name, region in grid.regions.items():
        if region.points.shape[0] == 0:
            terms[name] = 0.0
            continue
        res = residual_set[name](jets_fn(region.points), region.points)
        res = as_array(res)
        if not np.isfinite(res).all():
            bad = int(np.flatnonzero(~np.isfinite(res))[0])
            raise NumericError("non-finite residual", region=name, index=bad)
        lam = lambda_hat.get(name, 1.0) if lambda_hat else 1.0
        terms[name] = float(np.dot(region.weights, res * res) * (lam / region.volume))
        total += terms[name]
    return LossBreakdown(regions=terms, total=total)


def assemble(spec, params, grid, mode=PDE_BOUNDARY, lambda_hat=None):
    """Loss breakdown without gradient tracking."""
    tune_allocator()
    residual_set = build_residuals(spec, mode)
    _check_regions(grid, residual_set)
    terms, total = _region_terms(params, grid, residual_set, lambda_hat)
    return LossBreakdown(
        regions={k: float(as_array(v)) for k, v in terms.items()}, total=float(as_array(total))
    )


def assemble_with_gradient(spec, params, grid, mode=PDE_BOUNDARY, lambda_hat=None):
    """Loss breakdown plus the flat parameter gradient.

    Runs the identical operation sequence as :func:`assemble` with parameter
    leaves taped, so the returned loss matches bit for bit.
    """
    tune_allocator()
    residual_set = build_residuals(spec, mode)
    _check_regions(grid, residual_set)
    taped = TapedParams(params)
    terms, total = _region_terms(taped, grid, residual_set, lambda_hat)
    total.backward()
    breakdown = LossBreakdown(
        regions={k: float(as_array(v)) for k, v in terms.items()}, total=float(as_array(total))
    )
    return breakdown, taped.gradient()


def write_trajectory(path, rows, region_names):
    """Loss trajectory CSV: step, total, one column per region, learning rate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", *region_names, "lr"])
        for row in rows:
            writer.writerow(
                [row["step"], repr(row["total"])]
                + [repr(row["regions"][name]) for name in region_names]
                + [repr(row["lr"])]
            )


def read_trajectory(path):
    with open(path) as fh:
        reader = csv.DictReader(fh)
        return [
            {
                "step": int(r["step"]),
                "total": float(r["total"]),
                "lr": float(r["lr"]),
                "regions": {
                    k: float(v) for k, v in r.items() if k not in ("step", "total", "lr")
                },
            }
            for r in reader
        ]
