"""Error norms between an approximation and a reference on a shared grid,
plus the clamped relative-error map used for surface plots.

Relative L1/L2 use quadrature-weighted discrete norms (unweighted variants
are reported alongside); L-infinity is the unweighted ratio of maxima.  The
clamped map switches to absolute error scaled by the threshold wherever the
reference is smaller than the threshold, so it never divides by a vanishing
price.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

__all__ = ["ErrorReport", "relative_norms", "clamped_error_map", "log10_or_sentinel"]

DEFAULT_CLAMP = 0.01


def log10_or_sentinel(x):
    return -math.inf if x == 0.0 else math.log10(x)


@dataclass(frozen=True)
class ErrorReport:
    rel_l1: float
    rel_l2: float
    rel_linf: float
    rel_l1_uniform: float
    rel_l2_uniform: float
    grid: str
    clamp_threshold: float = DEFAULT_CLAMP
    extras: dict = field(default_factory=dict)

    @property
    def log10_rel_l1(self):
        return log10_or_sentinel(self.rel_l1)

    @property
    def log10_rel_l2(self):
        return log10_or_sentinel(self.rel_l2)

    @property
    def log10_rel_linf(self):
        return log10_or_sentinel(self.rel_linf)

    def to_dict(self):
        def finite(x):
            return None if not math.isfinite(x) else x

        return {
            "rel_l1": self.rel_l1,
            "rel_l2": self.rel_l2,
            "rel_linf": self.rel_linf,
            "rel_l1_uniform": self.rel_l1_uniform,
            "rel_l2_uniform": self.rel_l2_uniform,
            "log10_rel_l1": finite(self.log10_rel_l1),
            "log10_rel_l2": finite(self.log10_rel_l2),
            "log10_rel_linf": finite(self.log10_rel_linf),
            "grid": self.grid,
            "clamp_threshold": self.clamp_threshold,
            "extras": self.extras,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def relative_norms(approx, ref, weights=None, grid="unspecified", clamp_threshold=DEFAULT_CLAMP,
                   extras=None):
    """Relative L1/L2/Linf between two fields sampled on a shared grid."""
    a = np.asarray(approx, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if a.shape != r.shape:
        raise ContractError(f"field shapes differ: {a.shape} vs {r.shape}")
    if a.size == 0:
        raise ContractError("empty fields")
    w = np.ones_like(r) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != r.shape:
        raise ContractError("weights shape does not match the grid")
    ref_l1 = np.sum(w * np.abs(r))
    ref_l2 = np.sqrt(np.sum(w * r * r))
    ref_linf = np.max(np.abs(r))
    if ref_l1 == 0.0 or ref_l2 == 0.0 or ref_linf == 0.0:
        raise ContractError("reference field has zero norm")
    diff = a - r
    return ErrorReport(
        rel_l1=float(np.sum(w * np.abs(diff)) / ref_l1),
        rel_l2=float(np.sqrt(np.sum(w * diff * diff)) / ref_l2),
        rel_linf=float(np.max(np.abs(diff)) / ref_linf),
        rel_l1_uniform=float(np.sum(np.abs(diff)) / np.sum(np.abs(r))),
        rel_l2_uniform=float(np.sqrt(np.sum(diff * diff) / np.sum(r * r))),
        grid=grid,
        clamp_threshold=clamp_threshold,
        extras=extras or {},
    )


def clamped_error_map(approx, ref, threshold=DEFAULT_CLAMP):
    """Per-point relative error, switching to threshold-scaled absolute error
    where |ref| falls below the threshold."""
    a = np.asarray(approx, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if a.shape != r.shape:
        raise ContractError(f"field shapes differ: {a.shape} vs {r.shape}")
    if threshold <= 0:
        raise ContractError("threshold must be positive")
    denom = np.where(np.abs(r) >= threshold, np.abs(r), threshold)
    return np.abs(a - r) / denom


def write_pointwise_csv(path, columns, names):
    """Per-point error table for external plotting."""
    columns = [np.asarray(c).ravel() for c in columns]
    if len({c.size for c in columns}) != 1:
        raise ContractError("all columns must have the same length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])
