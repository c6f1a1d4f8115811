"""Ground-truth engines used as oracles: closed-form (risky) Black-Scholes
prices and Greeks, the standard normal CDF, and Crank-Nicolson finite
difference solvers with a fixed-point treatment of the nonlinear credit
source term.

All prices are functions of time-to-maturity t, so surfaces march forward
from the payoff at t = 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu
from scipy.special import ndtr

from .autodiff import JetBatch
from .errors import ContractError, NumericError
from .models import (
    BASKET_AVERAGE,
    BASKET_WORST_OF,
    BS1D,
    HESTON,
    dirichlet_floor,
    payoff,
    source_term,
)

__all__ = [
    "normal_cdf",
    "normal_pdf",
    "vanilla_price",
    "vanilla_delta_gamma",
    "vanilla_theta",
    "risky_factor",
    "risky_vanilla_price",
    "bs_price",
    "bs_greeks",
    "risky_bs_price",
    "risky_bs_greeks",
    "risky_bs_jets",
    "SolutionSurface",
    "fd_solve_1d",
    "fd_solve_2d",
]


def normal_cdf(x):
    """Standard normal CDF (erfc-based, absolute error below 1e-15)."""
    return ndtr(np.asarray(x, dtype=np.float64)) if np.ndim(x) else float(ndtr(x))


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return out if out.ndim else float(out)


def _zetas(t, s, strike, sigma, repo_rate):
    root = sigma * np.sqrt(t)
    z1 = (np.log(s / strike) + (repo_rate + 0.5 * sigma**2) * t) / root
    return z1, z1 - root


def vanilla_price(t, spot, strike, sigma, rate, repo_rate, alpha):
    """Risk-free vanilla price under lognormal dynamics with drift
    ``repo_rate`` and discount rate ``rate``; t is time to maturity.

    Limits: at t = 0 the payoff, at S = 0 the discounted-strike branch.
    """
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    if strike <= 0:
        raise ContractError("strike must be positive")
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(spot, dtype=np.float64)
    if np.any(t < 0):
        raise ContractError("time to maturity must be non-negative")
    if np.any(s < 0):
        raise ContractError("spot must be non-negative")
    t, s = np.broadcast_arrays(t, s)
    out = np.empty(t.shape)

    degenerate = (t <= 0) | (s <= 0)
    if np.any(degenerate):
        pay = np.maximum(alpha * (s - strike), 0.0)
        floor = abs(alpha - 1) / 2.0 * strike * np.exp(-rate * t)
        out[degenerate] = np.where(s[degenerate] <= 0, floor[degenerate], pay[degenerate])
    regular = ~degenerate
    if np.any(regular):
        tr, sr = t[regular], s[regular]
        z1, z2 = _zetas(tr, sr, strike, sigma, repo_rate)
        out[regular] = alpha * (
            sr * np.exp(-(rate - repo_rate) * tr) * ndtr(alpha * z1)
            - strike * np.exp(-rate * tr) * ndtr(alpha * z2)
        )
    return out if out.ndim else float(out)


def vanilla_delta_gamma(t, spot, strike, sigma, rate, repo_rate, alpha):
    """Closed-form first and second spot derivatives of ``vanilla_price``."""
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(spot, dtype=np.float64)
    t, s = np.broadcast_arrays(t, s)
    delta = np.empty(t.shape)
    gamma = np.zeros(t.shape)

    degenerate = (t <= 0) | (s <= 0)
    if np.any(degenerate):
        td, sd = t[degenerate], s[degenerate]
        carry = np.exp(-(rate - repo_rate) * td)
        intrinsic = np.where(alpha * (sd - strike) > 0, float(alpha), 0.0)
        # S -> 0 limit: Phi(alpha * zeta_1) -> 1 for puts, 0 for calls
        floor_delta = alpha * carry if alpha < 0 else np.zeros_like(carry)
        delta[degenerate] = np.where(sd <= 0, floor_delta, intrinsic)
    regular = ~degenerate
    if np.any(regular):
        tr, sr = t[regular], s[regular]
        z1, _ = _zetas(tr, sr, strike, sigma, repo_rate)
        carry = np.exp(-(rate - repo_rate) * tr)
        delta[regular] = alpha * carry * ndtr(alpha * z1)
        gamma[regular] = carry * normal_pdf(z1) / (sr * sigma * np.sqrt(tr))
    if delta.ndim:
        return delta, gamma
    return float(delta), float(gamma)


def vanilla_theta(t, spot, strike, sigma, rate, repo_rate, alpha):
    """Derivative of ``vanilla_price`` with respect to time to maturity.

    One-sided limits at the domain edges: at S = 0 the discounted-strike
    branch is differentiated directly; at t = 0 the in-the-money limit
    alpha (r K - q S) applies away from the kink (0 at the kink, where theta
    is singular for the true solution).
    """
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(spot, dtype=np.float64)
    t, s = np.broadcast_arrays(t, s)
    out = np.empty(t.shape)
    q = rate - repo_rate

    degenerate = (t <= 0) | (s <= 0)
    if np.any(degenerate):
        td, sd = t[degenerate], s[degenerate]
        floor_theta = -rate * abs(alpha - 1) / 2.0 * strike * np.exp(-rate * td)
        itm = alpha * (sd - strike) > 0
        out[degenerate] = np.where(
            sd <= 0, floor_theta, np.where(itm, alpha * (rate * strike - q * sd), 0.0)
        )
    regular = ~degenerate
    if np.any(regular):
        tr, sr = t[regular], s[regular]
        z1, z2 = _zetas(tr, sr, strike, sigma, repo_rate)
        carry = np.exp(-q * tr)
        out[regular] = (
            -alpha * q * sr * carry * ndtr(alpha * z1)
            + alpha * rate * strike * np.exp(-rate * tr) * ndtr(alpha * z2)
            + sr * carry * normal_pdf(z1) * sigma / (2.0 * np.sqrt(tr))
        )
    return out if out.ndim else float(out)


def risky_factor(xva, t):
    """Credit adjustment exp(-(lam_B (1-R_B) + lam_C (1-R_C)) t)."""
    t = np.asarray(t, dtype=np.float64)
    out = np.exp(-xva.credit_discount * t)
    return out if out.ndim else float(out)


def risky_vanilla_price(t, spot, strike, sigma, rate, repo_rate, alpha, xva):
    return vanilla_price(t, spot, strike, sigma, rate, repo_rate, alpha) * risky_factor(xva, t)


# -- spec-level wrappers (one-asset Black-Scholes model) ----------------------


def _require_bs1d(spec):
    if spec.kind != BS1D:
        raise ContractError(f"closed form requires a bs1d spec, got {spec.kind!r}")


def bs_price(t, s, spec):
    """Risk-free price of the spec's vanilla option."""
    _require_bs1d(spec)
    m = spec.market
    return vanilla_price(t, s, spec.strike, m.sigma, spec.xva.rate, m.repo_rate, spec.alpha)


def bs_greeks(t, s, spec):
    _require_bs1d(spec)
    m = spec.market
    return vanilla_delta_gamma(
        t, s, spec.strike, m.sigma, spec.xva.rate, m.repo_rate, spec.alpha
    )


def risky_bs_price(t, s, spec):
    """Counterparty-risk-adjusted price: risk-free price times the credit
    discount factor (under the default funding rule this solves the risky
    PDE exactly)."""
    _require_bs1d(spec)
    return bs_price(t, s, spec) * risky_factor(spec.xva, t)


def risky_bs_greeks(t, s, spec):
    delta, gamma = bs_greeks(t, s, spec)
    factor = risky_factor(spec.xva, t)
    return delta * factor, gamma * factor


def risky_bs_jets(t, s, spec):
    """Jet channels (value, d_t, d_S, d_SS) of the risky closed form, for
    pushing the analytic solution through residual operators."""
    _require_bs1d(spec)
    m = spec.market
    args = (t, s, spec.strike, m.sigma, spec.xva.rate, m.repo_rate, spec.alpha)
    price = vanilla_price(*args)
    delta, gamma = vanilla_delta_gamma(*args)
    theta = vanilla_theta(*args)
    factor = risky_factor(spec.xva, t)
    return JetBatch(
        val=price * factor,
        dt=(theta - spec.xva.credit_discount * price) * factor,
        dx=[delta * factor],
        dxx_pairs=[gamma * factor],
        dim=1,
    )


# -- finite differences --------------------------------------------------------


@dataclass
class SolutionSurface:
    """Grid solution of one boundary value problem.

    ``values`` has shape (len(t),) + tuple(len(g) for each spatial grid).
    """

    model_kind: str
    t: np.ndarray
    axes: dict
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (len(self.t),) + tuple(len(g) for g in self.axes.values())
        if self.values.shape != expected:
            raise ContractError(f"values shape {self.values.shape} != grid shape {expected}")
        if not np.isfinite(self.values).all():
            raise NumericError("surface contains non-finite values")

    @property
    def axis_names(self):
        return tuple(self.axes)

    def final(self):
        """Slice at the full time to maturity."""
        return self.values[-1]

    def save(self, path_csv, path_meta=None):
        path_meta = path_meta or str(path_csv) + ".json"
        names = self.axis_names
        grids = [self.t] + [self.axes[n] for n in names]
        with open(path_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *names, "value"])
            mesh = np.meshgrid(*grids, indexing="ij")
            flat = [m.ravel() for m in mesh]
            for row in zip(*flat, self.values.ravel()):
                writer.writerow([repr(float(v)) for v in row])
        with open(path_meta, "w") as fh:
            json.dump(
                {
                    "model_kind": self.model_kind,
                    "t": self.t.tolist(),
                    "axes": {k: v.tolist() for k, v in self.axes.items()},
                    "metadata": self.metadata,
                },
                fh,
                indent=2,
            )

    @classmethod
    def load(cls, path_csv, path_meta=None):
        path_meta = path_meta or str(path_csv) + ".json"
        with open(path_meta) as fh:
            meta = json.load(fh)
        t = np.asarray(meta["t"], dtype=np.float64)
        axes = {k: np.asarray(v, dtype=np.float64) for k, v in meta["axes"].items()}
        shape = (len(t),) + tuple(len(g) for g in axes.values())
        values = np.empty(shape)
        with open(path_csv) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-1] != "value":
                raise ContractError("surface CSV must end with a 'value' column")
            flat = np.array([float(row[-1]) for row in reader])
        if flat.size != values.size:
            raise ContractError("surface CSV row count does not match metadata grid")
        values[...] = flat.reshape(shape)
        return cls(
            model_kind=meta["model_kind"], t=t, axes=axes, values=values,
            metadata=meta.get("metadata", {}),
        )


class _FixedPointTracker:
    def __init__(self, tol, max_iters):
        self.tol = tol
        self.max_iters = max_iters
        self.worst = 0
        self.converged = True

    def record(self, iterations, converged):
        self.worst = max(self.worst, iterations)
        self.converged = self.converged and converged

    def metadata(self):
        return {
            "tol": self.tol,
            "max_iterations_allowed": self.max_iters,
            "max_iterations_used": self.worst,
            "converged": self.converged,
        }


def fd_solve_1d(spec, n_s, n_t, fixed_point_tol=1e-10, max_iters=50):
    """Crank-Nicolson march of the one-asset risky problem.

    Boundary rows: the closed-form floor value at S = 0, a vanishing
    one-sided second difference at S_max.
    """
    if spec.kind != BS1D:
        raise ContractError("fd_solve_1d requires a bs1d spec")
    if n_s < 4 or n_t < 4:
        raise ContractError("resolutions must be at least 4")
    m, x = spec.market, spec.xva
    ax = spec.domain.axes[0]
    T = spec.domain.maturity
    s = np.linspace(ax.lo, ax.hi, n_s + 1)
    t = np.linspace(0.0, T, n_t + 1)
    ds, dt = s[1] - s[0], t[1] - t[0]

    # spatial operator A = 0.5 sig^2 S^2 d_SS + repo S d_S - r, rows 1..n-1
    si = s[1:-1]
    diff = 0.5 * m.sigma**2 * si**2 / ds**2
    drift = m.repo_rate * si / (2.0 * ds)
    lo_c = diff - drift
    mid_c = -2.0 * diff - x.rate
    hi_c = diff + drift

    def apply_a(v):
        out = np.zeros_like(v)
        out[1:-1] = lo_c * v[:-2] + mid_c * v[1:-1] + hi_c * v[2:]
        return out

    # banded LHS, bandwidths (2, 1): Dirichlet row 0, CN rows, extrapolation
    # row n (V_n - 2V_{n-1} + V_{n-2} = 0)
    n = n_s
    ab = np.zeros((4, n + 1))
    ab[1, 0] = 1.0
    ab[1, 1:n] = 1.0 - 0.5 * dt * mid_c
    ab[1, n] = 1.0
    ab[0, 2 : n + 1] = -0.5 * dt * hi_c
    ab[2, 0 : n - 1] = -0.5 * dt * lo_c
    ab[2, n - 1] = -2.0
    ab[3, n - 2] = 1.0

    tracker = _FixedPointTracker(fixed_point_tol, max_iters)
    values = np.empty((n_t + 1, n_s + 1))
    values[0] = payoff(spec, s)
    v = values[0].copy()
    for step in range(1, n_t + 1):
        f_old = source_term(v, x)
        explicit = v + 0.5 * dt * apply_a(v)
        guess = v
        for it in range(1, max_iters + 1):
            rhs = explicit - 0.5 * dt * (f_old + source_term(guess, x))
            rhs[0] = dirichlet_floor(spec, t[step])
            rhs[n] = 0.0
            new = solve_banded((2, 1), ab, rhs)
            delta = np.max(np.abs(new - guess))
            guess = new
            if delta < fixed_point_tol:
                tracker.record(it, True)
                break
        else:
            tracker.record(max_iters, False)
        v = guess
        values[step] = v
    if not np.isfinite(values).all():
        raise NumericError("finite-difference solution diverged", step=int(step))
    return SolutionSurface(
        model_kind=spec.kind,
        t=t,
        axes={ax.name: s},
        values=values,
        metadata={
            "scheme": "crank-nicolson",
            "n_s": n_s,
            "n_t": n_t,
            "fixed_point": tracker.metadata(),
        },
    )


def _basket_matrix(spec, s1, s2):
    """Sparse PDE operator and row bookkeeping for the two-asset problem."""
    m, x = spec.market, spec.xva
    n1, n2 = len(s1) - 1, len(s2) - 1
    d1, d2 = s1[1] - s1[0], s2[1] - s2[0]
    nn = (n1 + 1) * (n2 + 1)

    def idx(j, k):
        return j * (n2 + 1) + k

    rows, cols, vals = [], [], []
    pde = np.zeros(nn, dtype=bool)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for j in range(1, n1):
        for k in range(1, n2):
            r = idx(j, k)
            pde[r] = True
            a11 = 0.5 * m.sigma1**2 * s1[j] ** 2 / d1**2
            a22 = 0.5 * m.sigma2**2 * s2[k] ** 2 / d2**2
            a12 = m.corr * m.sigma1 * m.sigma2 * s1[j] * s2[k] / (4.0 * d1 * d2)
            b1 = m.repo_rate1 * s1[j] / (2.0 * d1)
            b2 = m.repo_rate2 * s2[k] / (2.0 * d2)
            add(r, idx(j - 1, k), a11 - b1)
            add(r, idx(j + 1, k), a11 + b1)
            add(r, idx(j, k - 1), a22 - b2)
            add(r, idx(j, k + 1), a22 + b2)
            add(r, r, -2.0 * a11 - 2.0 * a22 - x.rate)
            add(r, idx(j + 1, k + 1), a12)
            add(r, idx(j - 1, k - 1), a12)
            add(r, idx(j + 1, k - 1), -a12)
            add(r, idx(j - 1, k + 1), -a12)
    operator = sp.csr_matrix((vals, (rows, cols)), shape=(nn, nn))

    alg_rows, alg_cols, alg_vals = [], [], []
    dirichlet = []  # (row, which_axis, coordinate)
    for k in range(0, n2 + 1):
        r = idx(0, k)
        alg_rows.append(r), alg_cols.append(r), alg_vals.append(1.0)
        dirichlet.append((r, 0, s2[k]))
    for j in range(1, n1 + 1):
        r = idx(j, 0)
        alg_rows.append(r), alg_cols.append(r), alg_vals.append(1.0)
        dirichlet.append((r, 1, s1[j]))
    for j in range(1, n1 + 1):  # upper S2 face, second difference vanishes
        r = idx(j, n2)
        for c, v in ((idx(j, n2), 1.0), (idx(j, n2 - 1), -2.0), (idx(j, n2 - 2), 1.0)):
            alg_rows.append(r), alg_cols.append(c), alg_vals.append(v)
    for k in range(1, n2):  # upper S1 face
        r = idx(n1, k)
        for c, v in ((idx(n1, k), 1.0), (idx(n1 - 1, k), -2.0), (idx(n1 - 2, k), 1.0)):
            alg_rows.append(r), alg_cols.append(c), alg_vals.append(v)
    algebraic = sp.csr_matrix((alg_vals, (alg_rows, alg_cols)), shape=(nn, nn))
    return operator, algebraic, pde, dirichlet


def _heston_matrix(spec, s, v):
    m, x = spec.market, spec.xva
    ns, nv = len(s) - 1, len(v) - 1
    ds, dv = s[1] - s[0], v[1] - v[0]
    nn = (ns + 1) * (nv + 1)

    def idx(j, k):
        return j * (nv + 1) + k

    rows, cols, vals = [], [], []
    pde = np.zeros(nn, dtype=bool)

    def add(r, c, val):
        rows.append(r)
        cols.append(c)
        vals.append(val)

    for j in range(1, ns):
        for k in range(1, nv):
            r = idx(j, k)
            pde[r] = True
            ass = 0.5 * s[j] ** 2 * v[k] / ds**2
            avv = 0.5 * m.sigma**2 * v[k] / dv**2
            asv = m.corr * m.sigma * s[j] * v[k] / (4.0 * ds * dv)
            bs = m.repo_rate * s[j] / (2.0 * ds)
            bv = m.kappa * (m.eta - v[k]) / (2.0 * dv)
            add(r, idx(j - 1, k), ass - bs)
            add(r, idx(j + 1, k), ass + bs)
            add(r, idx(j, k - 1), avv - bv)
            add(r, idx(j, k + 1), avv + bv)
            add(r, r, -2.0 * ass - 2.0 * avv - x.rate)
            add(r, idx(j + 1, k + 1), asv)
            add(r, idx(j - 1, k - 1), asv)
            add(r, idx(j + 1, k - 1), -asv)
            add(r, idx(j - 1, k + 1), -asv)
    # S = 0 column: degenerate equation in v only
    for k in range(1, nv):
        r = idx(0, k)
        pde[r] = True
        avv = 0.5 * m.sigma**2 * v[k] / dv**2
        bv = m.kappa * (m.eta - v[k]) / (2.0 * dv)
        add(r, idx(0, k - 1), avv - bv)
        add(r, idx(0, k + 1), avv + bv)
        add(r, r, -2.0 * avv - x.rate)
    # v = 0 row: transport equation, one-sided second-order differences
    for j in range(0, ns + 1):
        r = idx(j, 0)
        pde[r] = True
        bv = m.kappa * m.eta / (2.0 * dv)
        add(r, idx(j, 0), -3.0 * bv)
        add(r, idx(j, 1), 4.0 * bv)
        add(r, idx(j, 2), -bv)
        add(r, r, -x.rate)
        if 0 < j < ns:
            bs = m.repo_rate * s[j] / (2.0 * ds)
            add(r, idx(j - 1, 0), -bs)
            add(r, idx(j + 1, 0), bs)
        elif j == ns:
            bs = m.repo_rate * s[j] / (2.0 * ds)
            add(r, idx(j, 0), 3.0 * bs)
            add(r, idx(j - 1, 0), -4.0 * bs)
            add(r, idx(j - 2, 0), bs)
    operator = sp.csr_matrix((vals, (rows, cols)), shape=(nn, nn))

    alg_rows, alg_cols, alg_vals = [], [], []
    for k in range(1, nv):  # S_max face: vanishing one-sided second difference
        r = idx(ns, k)
        for c, val in ((idx(ns, k), 1.0), (idx(ns - 1, k), -2.0), (idx(ns - 2, k), 1.0)):
            alg_rows.append(r), alg_cols.append(c), alg_vals.append(val)
    for j in range(0, ns + 1):  # v_max face: Neumann dV/dv = 0, one-sided
        r = idx(j, nv)
        for c, val in ((idx(j, nv), 3.0), (idx(j, nv - 1), -4.0), (idx(j, nv - 2), 1.0)):
            alg_rows.append(r), alg_cols.append(c), alg_vals.append(val)
    algebraic = sp.csr_matrix((alg_vals, (alg_rows, alg_cols)), shape=(nn, nn))
    return operator, algebraic, pde, []


def fd_solve_2d(spec, n_1, n_2, n_t, fixed_point_tol=1e-10, max_iters=50, keep="all"):
    """Crank-Nicolson march of a two-dimensional problem (basket or Heston),
    mixed derivative on the 4-point centered stencil, direct sparse solves.
    """
    if spec.kind not in (BASKET_AVERAGE, BASKET_WORST_OF, HESTON):
        raise ContractError("fd_solve_2d requires a basket or Heston spec")
    if min(n_1, n_2, n_t) < 4:
        raise ContractError("resolutions must be at least 4")
    x = spec.xva
    ax1, ax2 = spec.domain.axes
    g1 = np.linspace(ax1.lo, ax1.hi, n_1 + 1)
    g2 = np.linspace(ax2.lo, ax2.hi, n_2 + 1)
    T = spec.domain.maturity
    t = np.linspace(0.0, T, n_t + 1)
    dt = t[1] - t[0]

    if spec.kind == HESTON:
        operator, algebraic, pde, dirichlet = _heston_matrix(spec, g1, g2)
    else:
        operator, algebraic, pde, dirichlet = _basket_matrix(spec, g1, g2)

    nn = (n_1 + 1) * (n_2 + 1)
    identity_pde = sp.diags(pde.astype(np.float64))
    lhs = (identity_pde - 0.5 * dt * operator) + algebraic
    factor = splu(lhs.tocsc())

    def dirichlet_values(tk):
        out = {}
        m = spec.market
        for r, axis, coord in dirichlet:
            if spec.kind == BASKET_WORST_OF:
                out[r] = float(dirichlet_floor(spec, tk))
            else:
                sig = (m.sigma1, m.sigma2)[1 - axis]
                repo = (m.repo_rate1, m.repo_rate2)[1 - axis]
                out[r] = risky_vanilla_price(
                    tk, 0.5 * coord, spec.strike, sig, x.rate, repo, spec.alpha, x
                )
        return out

    mesh1, mesh2 = np.meshgrid(g1, g2, indexing="ij")
    flat_pts = np.stack([mesh1.ravel(), mesh2.ravel()], axis=1)
    v0 = payoff(spec, flat_pts)

    tracker = _FixedPointTracker(fixed_point_tol, max_iters)
    store_all = keep == "all"
    values = np.empty((n_t + 1, n_1 + 1, n_2 + 1)) if store_all else None
    if store_all:
        values[0] = v0.reshape(n_1 + 1, n_2 + 1)
    vec = v0.copy()
    for step in range(1, n_t + 1):
        f_old = np.where(pde, source_term(vec, x), 0.0)
        explicit = pde * vec + 0.5 * dt * (operator @ vec)
        bound = dirichlet_values(t[step])
        guess = vec
        for it in range(1, max_iters + 1):
            f_new = np.where(pde, source_term(guess, x), 0.0)
            rhs = explicit - 0.5 * dt * (f_old + f_new)
            for r, val in bound.items():
                rhs[r] = val
            new = factor.solve(rhs)
            delta = np.max(np.abs(new - guess))
            guess = new
            if delta < fixed_point_tol:
                tracker.record(it, True)
                break
        else:
            tracker.record(max_iters, False)
        vec = guess
        if not np.isfinite(vec).all():
            raise NumericError("finite-difference solution diverged", step=step)
        if store_all:
            values[step] = vec.reshape(n_1 + 1, n_2 + 1)
    if not store_all:
        values = np.stack([v0.reshape(n_1 + 1, n_2 + 1), vec.reshape(n_1 + 1, n_2 + 1)])
        t = np.array([0.0, T])
    return SolutionSurface(
        model_kind=spec.kind,
        t=t,
        axes={ax1.name: g1, ax2.name: g2},
        values=values,
        metadata={
            "scheme": "crank-nicolson",
            "n_1": n_1,
            "n_2": n_2,
            "n_t": n_t,
            "feller_satisfied": spec.market.feller_satisfied if spec.kind == HESTON else None,
            "fixed_point": tracker.metadata(),
        },
    )
