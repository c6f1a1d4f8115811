"""Space-time domain, region decomposition and trapezoid collocation grids.

The domain is a box [0, T] x prod_k [lo_k, hi_k].  A grid decomposes it into
an interior block, one region per boundary face, and the initial (t = 0)
slice, with the index conventions

  1-D:  interior (i, j), i = 1..N_T, j = 1..N_S-1
        lower face (i, 0) and upper face (i, N_S), i = 1..N_T
        initial (0, j), j = 0..N_S

  2-D:  interior i = 1..N_T, j = 1..N_1-1, k = 1..N_2-1
        min axis1: i = 1..N_T, axis2 index 0..N_2        (owns both corners)
        min axis2: i = 1..N_T, axis1 index 1..N_1
        max axis1: i = 1..N_T, axis2 index 1..N_2-1
        max axis2: i = 1..N_T, axis1 index 1..N_1
        initial:   j = 0..N_1, k = 0..N_2

so the regions partition all (N_T+1) * prod(N_k+1) nodes with no duplicates.
Each region carries tensor-product trapezoid quadrature weights over its own
point lattice and the volume of the nominal region (full axis extents) used
to normalize its loss term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

INTERIOR = "interior"
INITIAL = "initial"


def min_face(axis):
    return f"min_{axis}"


def max_face(axis):
    return f"max_{axis}"


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ContractError(f"axis {self.name}: need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def extent(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class DomainBox:
    """Maturity T (years) and the spatial axes of the truncated domain."""

    maturity: float
    axes: tuple

    def __post_init__(self):
        if not self.maturity > 0:
            raise ContractError("maturity must be positive")
        if not self.axes:
            raise ContractError("at least one spatial axis is required")

    @property
    def axis_names(self):
        return tuple(a.name for a in self.axes)

    def axis(self, name):
        for a in self.axes:
            if a.name == name:
                return a
        raise ContractError(f"unknown axis {name!r}")


def trapezoid_weights(samples):
    """Composite trapezoid weights (h/2, h, ..., h, h/2) for uniform samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 2:
        raise ContractError("trapezoid_weights needs at least 2 samples")
    h = np.diff(samples)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ContractError("trapezoid_weights expects uniform samples")
    w = np.full(samples.size, h[0])
    w[0] = w[-1] = h[0] / 2.0
    return w


def _axis_weights(samples, step):
    # A free axis collapsed to a single sample (smallest grids) keeps a band
    # of one step so its region is not annihilated.
    if len(samples) == 1:
        return np.array([step])
    return trapezoid_weights(samples)


@dataclass(frozen=True)
class Region:
    """One block of the decomposition: points, quadrature weights, volumes.

    ``volume`` is the nominal normalizer (product of full extents of the free
    axes, time included for boundary faces); ``tiled_measure`` is what the
    trapezoid weights actually tile, i.e. the span of the region's own point
    lattice.
    """

    name: str
    points: np.ndarray
    weights: np.ndarray
    volume: float
    tiled_measure: float


def region_volume(region):
    return region.volume


@dataclass(frozen=True)
class CollocationSet:
    domain: DomainBox
    regions: dict
    steps: dict

    @property
    def total_points(self):
        return sum(r.points.shape[0] for r in self.regions.values())

    def region(self, name):
        if name not in self.regions:
            raise ContractError(f"unknown region {name!r}")
        return self.regions[name]

    def to_csv(self, path):
        """Grid dump for debugging: region, coordinates, weight."""
        names = ("t",) + self.domain.axis_names
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("region",) + names + ("weight",))
            for name, region in self.regions.items():
                for pt, w in zip(region.points, region.weights):
                    writer.writerow([name] + [repr(float(c)) for c in pt] + [repr(float(w))])


def _build_region(name, axis_samples, axis_steps, free_extents):
    """Tensor grid over per-axis sample vectors (time first).

    ``axis_samples`` entries are 1-D arrays; pinned axes (a single boundary
    value) pass ``None`` as their step and contribute no weight factor.
    """
    grids = np.meshgrid(*axis_samples, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weight = np.ones(1)
    tiled = 1.0
    for samples, step in zip(axis_samples, axis_steps):
        if step is None:
            continue
        w = _axis_weights(samples, step)
        weight = np.multiply.outer(weight, w).ravel()
        tiled *= w.sum()
    weights = np.broadcast_to(weight, (points.shape[0],)) if weight.size == 1 else weight
    if weights.shape[0] != points.shape[0]:
        raise ContractError("internal: weight/point count mismatch")
    return Region(
        name=name,
        points=points,
        weights=np.ascontiguousarray(weights, dtype=np.float64),
        volume=float(np.prod(free_extents)) if free_extents else 1.0,
        tiled_measure=tiled,
    )


def build_grid_1d(domain, n_t, n_s):
    """Uniform collocation grid for one spatial axis."""
    if len(domain.axes) != 1:
        raise ContractError("build_grid_1d requires a 1-D domain")
    if n_t < 2 or n_s < 2:
        raise ContractError("need at least 2 steps per axis")
    ax = domain.axes[0]
    if ax.lo != 0.0:
        raise ContractError("pricing domains start at 0 on every spatial axis")
    T = domain.maturity
    dt, ds = T / n_t, ax.extent / n_s
    t = np.linspace(0.0, T, n_t + 1)
    s = np.linspace(ax.lo, ax.hi, n_s + 1)

    regions = {
        INTERIOR: _build_region(
            INTERIOR, (t[1:], s[1:n_s]), (dt, ds), (T, ax.extent)
        ),
        min_face(ax.name): _build_region(
            min_face(ax.name), (t[1:], s[:1]), (dt, None), (T,)
        ),
        max_face(ax.name): _build_region(
            max_face(ax.name), (t[1:], s[n_s:]), (dt, None), (T,)
        ),
        INITIAL: _build_region(INITIAL, (t[:1], s), (None, ds), (ax.extent,)),
    }
    return CollocationSet(domain=domain, regions=regions, steps={"t": n_t, ax.name: n_s})


def build_grid_2d(domain, n_t, n_1, n_2):
    """Uniform collocation grid for two spatial axes (basket or Heston)."""
    if len(domain.axes) != 2:
        raise ContractError("build_grid_2d requires a 2-D domain")
    if n_t < 2 or n_1 < 2 or n_2 < 2:
        raise ContractError("need at least 2 steps per axis")
    a1, a2 = domain.axes
    if a1.lo != 0.0 or a2.lo != 0.0:
        raise ContractError("pricing domains start at 0 on every spatial axis")
    T = domain.maturity
    dt, d1, d2 = T / n_t, a1.extent / n_1, a2.extent / n_2
    t = np.linspace(0.0, T, n_t + 1)
    x1 = np.linspace(a1.lo, a1.hi, n_1 + 1)
    x2 = np.linspace(a2.lo, a2.hi, n_2 + 1)

    regions = {
        INTERIOR: _build_region(
            INTERIOR, (t[1:], x1[1:n_1], x2[1:n_2]), (dt, d1, d2), (T, a1.extent, a2.extent)
        ),
        min_face(a1.name): _build_region(
            min_face(a1.name), (t[1:], x1[:1], x2), (dt, None, d2), (T, a2.extent)
        ),
        min_face(a2.name): _build_region(
            min_face(a2.name), (t[1:], x1[1:], x2[:1]), (dt, d1, None), (T, a1.extent)
        ),
        max_face(a1.name): _build_region(
            max_face(a1.name), (t[1:], x1[n_1:], x2[1:n_2]), (dt, None, d2), (T, a2.extent)
        ),
        max_face(a2.name): _build_region(
            max_face(a2.name), (t[1:], x1[1:], x2[n_2:]), (dt, d1, None), (T, a1.extent)
        ),
        INITIAL: _build_region(INITIAL, (t[:1], x1, x2), (None, d1, d2), (a1.extent, a2.extent)),
    }
    return CollocationSet(
        domain=domain, regions=regions, steps={"t": n_t, a1.name: n_1, a2.name: n_2}
    )
