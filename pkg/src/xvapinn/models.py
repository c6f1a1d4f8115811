"""PDE model catalogue: market/credit parameters, payoffs, the nonlinear
source term, and per-region residual operators.

Every model prices in time-to-maturity, so the "initial" condition at t = 0
is the payoff.  The risky price solves

    dV/dt + L[V] + f(V) = 0,    f(V) = lam_B (1 - R_B) min(V, 0)
                                      + (lam_C (1 - R_C) + s_F) max(V, 0),

with L the model's elliptic operator.  Boundary residuals follow the
substitution strategy: each boundary term is the PDE restricted to that
boundary with the boundary condition plugged in (a Neumann/linearity
condition removes its derivative term; a Dirichlet value that solves the
restricted PDE leaves the restricted PDE itself as the residual).  The
``classic`` residual mode instead penalizes each boundary condition directly,
for A/B comparison against that strategy.

Residual operators accept any jet-producing field, not just networks, so
closed-form solutions can be pushed through them in oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import vmax0, vmin0
from .errors import ContractError
from .geometry import (
    INTERIOR,
    INITIAL,
    Axis,
    DomainBox,
    build_grid_1d,
    build_grid_2d,
    max_face,
    min_face,
)

BS1D = "bs1d"
BASKET_AVERAGE = "basket_average"
BASKET_WORST_OF = "basket_worst_of"
HESTON = "heston"

PDE_BOUNDARY = "pde-boundary"
CLASSIC = "classic"

CALL = 1
PUT = -1


@dataclass(frozen=True)
class XvaParams:
    """Hazard rates, recoveries, funding spread and the risk-free rate."""

    lambda_b: float
    lambda_c: float
    recovery_b: float
    recovery_c: float
    funding_spread: float
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.recovery_b <= 1.0 or not 0.0 <= self.recovery_c <= 1.0:
            raise ContractError("recovery rates must lie in [0, 1]")
        if self.lambda_b < 0 or self.lambda_c < 0:
            raise ContractError("hazard rates must be non-negative")

    @classmethod
    def with_funding_rule(cls, lambda_b, lambda_c, recovery_b, recovery_c, rate):
        """Default funding rule for non-collateralizable derivatives:
        s_F = (1 - R_B) * lambda_B."""
        return cls(
            lambda_b=lambda_b,
            lambda_c=lambda_c,
            recovery_b=recovery_b,
            recovery_c=recovery_c,
            funding_spread=(1.0 - recovery_b) * lambda_b,
            rate=rate,
        )

    @property
    def risk_free(self):
        return self.lambda_b == 0.0 and self.lambda_c == 0.0 and self.funding_spread == 0.0

    @property
    def credit_discount(self):
        """Exponent of the credit adjustment in the closed-form risky price:
        lambda_B (1 - R_B) + lambda_C (1 - R_C)."""
        return self.lambda_b * (1.0 - self.recovery_b) + self.lambda_c * (1.0 - self.recovery_c)


@dataclass(frozen=True)
class Bs1dMarket:
    sigma: float
    repo_rate: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ContractError("sigma must be positive")


@dataclass(frozen=True)
class BasketMarket:
    sigma1: float
    sigma2: float
    repo_rate1: float
    repo_rate2: float
    corr: float

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ContractError("volatilities must be positive")
        if abs(self.corr) > 1.0:
            raise ContractError("|corr| must be <= 1")


@dataclass(frozen=True)
class HestonMarket:
    repo_rate: float
    kappa: float
    eta: float
    sigma: float
    corr: float

    def __post_init__(self):
        if self.kappa <= 0 or self.eta <= 0 or self.sigma <= 0:
            raise ContractError("kappa, eta and sigma must be positive")
        if abs(self.corr) > 1.0:
            raise ContractError("|corr| must be <= 1")

    @property
    def feller_satisfied(self):
        return 2.0 * self.kappa * self.eta > self.sigma**2


@dataclass(frozen=True)
class ModelSpec:
    """Which PDE to price, its market and credit parameters, and the domain.

    ``strict_neumann`` switches the Heston upper-variance boundary residual
    from the published reduced operator (asset diffusion removed) to the
    operator with the variance-derivative terms removed instead.
    """

    kind: str
    alpha: int
    strike: float
    market: object
    xva: XvaParams
    domain: DomainBox
    strict_neumann: bool = False

    def __post_init__(self):
        if self.alpha not in (CALL, PUT):
            raise ContractError("alpha must be +1 (call) or -1 (put)")
        if self.strike <= 0:
            raise ContractError("strike must be positive")

    @property
    def spatial_dim(self):
        return len(self.domain.axes)


def bs1d(alpha, strike, maturity, sigma, repo_rate, xva, s_max=None):
    s_max = 4.0 * strike if s_max is None else s_max
    return ModelSpec(
        kind=BS1D,
        alpha=alpha,
        strike=strike,
        market=Bs1dMarket(sigma=sigma, repo_rate=repo_rate),
        xva=xva,
        domain=DomainBox(maturity=maturity, axes=(Axis("S", 0.0, s_max),)),
    )


def _basket(kind, alpha, strike, maturity, market, xva, s1_max, s2_max):
    s1_max = 4.0 * strike if s1_max is None else s1_max
    s2_max = 4.0 * strike if s2_max is None else s2_max
    return ModelSpec(
        kind=kind,
        alpha=alpha,
        strike=strike,
        market=market,
        xva=xva,
        domain=DomainBox(
            maturity=maturity,
            axes=(Axis("S1", 0.0, s1_max), Axis("S2", 0.0, s2_max)),
        ),
    )


def basket_average(alpha, strike, maturity, sigma1, sigma2, repo_rate1, repo_rate2, corr,
                   xva, s1_max=None, s2_max=None):
    market = BasketMarket(sigma1=sigma1, sigma2=sigma2, repo_rate1=repo_rate1,
                          repo_rate2=repo_rate2, corr=corr)
    return _basket(BASKET_AVERAGE, alpha, strike, maturity, market, xva, s1_max, s2_max)


def basket_worst_of(alpha, strike, maturity, sigma1, sigma2, repo_rate1, repo_rate2, corr,
                    xva, s1_max=None, s2_max=None):
    market = BasketMarket(sigma1=sigma1, sigma2=sigma2, repo_rate1=repo_rate1,
                          repo_rate2=repo_rate2, corr=corr)
    return _basket(BASKET_WORST_OF, alpha, strike, maturity, market, xva, s1_max, s2_max)


def heston(alpha, strike, maturity, repo_rate, kappa, eta, sigma, corr, xva,
           s_max=None, v_max=3.0, strict_neumann=False):
    s_max = 4.0 * strike if s_max is None else s_max
    return ModelSpec(
        kind=HESTON,
        alpha=alpha,
        strike=strike,
        market=HestonMarket(repo_rate=repo_rate, kappa=kappa, eta=eta, sigma=sigma, corr=corr),
        xva=xva,
        domain=DomainBox(
            maturity=maturity,
            axes=(Axis("S", 0.0, s_max), Axis("v", 0.0, v_max)),
        ),
        strict_neumann=strict_neumann,
    )


def feller_check(spec):
    """True iff 2*kappa*eta > sigma^2 for a Heston spec."""
    if spec.kind != HESTON:
        raise ContractError(f"feller_check requires a Heston spec, got {spec.kind!r}")
    return spec.market.feller_satisfied


def source_term(v, xva):
    """Piecewise-linear credit/funding source f(V)."""
    down = xva.lambda_b * (1.0 - xva.recovery_b)
    up = xva.lambda_c * (1.0 - xva.recovery_c) + xva.funding_spread
    return down * vmin0(v) + up * vmax0(v)


def payoff(spec, underlyings):
    """Terminal payoff at the given underlying value(s).

    ``underlyings`` is (n,) for one-asset models or (n, 2) for two-asset
    models (a 1-D input is also accepted for a single 2-asset point).
    """
    s = np.asarray(underlyings, dtype=np.float64)
    if spec.kind == BS1D:
        return np.maximum(spec.alpha * (s - spec.strike), 0.0)
    if s.ndim == 1:
        s = s[None, :]
    if s.shape[1] != 2:
        raise ContractError("two-asset payoff needs (n, 2) underlyings")
    if spec.kind == BASKET_AVERAGE:
        basis = 0.5 * (s[:, 0] + s[:, 1])
    elif spec.kind == BASKET_WORST_OF:
        basis = np.minimum(s[:, 0], s[:, 1])
    elif spec.kind == HESTON:
        basis = s[:, 0]  # variance does not enter the vanilla payoff
    else:
        raise ContractError(f"unknown model kind {spec.kind!r}")
    return np.maximum(spec.alpha * (basis - spec.strike), 0.0)


def dirichlet_floor(spec, t):
    """Value pinned at an all-zero-asset boundary: |alpha - 1|/2 * K * exp(-(r + ...) t).

    Solves the boundary-restricted equation dV/dt + rV + f(V) = 0 with the
    payoff there, under the default funding rule.
    """
    t = np.asarray(t, dtype=np.float64)
    x = spec.xva
    lvl = abs(spec.alpha - 1) / 2.0 * spec.strike
    return lvl * np.exp(-(x.rate + x.credit_discount) * t)


class ResidualSet:
    """Map region-id -> residual operator ``(jets, points) -> residual``."""

    def __init__(self, spec, operators):
        self.spec = spec
        self._ops = dict(operators)

    def regions(self):
        return set(self._ops)

    def __getitem__(self, region):
        if region not in self._ops:
            raise ContractError(f"no residual operator for region {region!r}")
        return self._ops[region]


def residuals(spec, mode=PDE_BOUNDARY):
    if mode not in (PDE_BOUNDARY, CLASSIC):
        raise ContractError(f"unknown residual mode {mode!r}")
    if spec.kind == BS1D:
        return _bs1d_residuals(spec, mode)
    if spec.kind in (BASKET_AVERAGE, BASKET_WORST_OF):
        return _basket_residuals(spec, mode)
    if spec.kind == HESTON:
        return _heston_residuals(spec, mode)
    raise ContractError(f"unknown model kind {spec.kind!r}")


def _bs1d_residuals(spec, mode):
    m, x = spec.market, spec.xva
    r, half_sig2 = x.rate, 0.5 * m.sigma**2

    def interior(jets, pts):
        s = pts[:, 1]
        return (
            jets.dt
            - (half_sig2 * s * s) * jets.dxx(0, 0)
            - (m.repo_rate * s) * jets.dx[0]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def lower(jets, pts):
        # S = 0 kills every S-carrying term of the operator
        return jets.dt + r * jets.val + source_term(jets.val, x)

    def upper(jets, pts):
        # linearity condition d2V/dS2 = 0 substituted into the PDE
        s = pts[:, 1]
        return jets.dt - (m.repo_rate * s) * jets.dx[0] + r * jets.val + source_term(jets.val, x)

    def initial(jets, pts):
        return jets.val - payoff(spec, pts[:, 1])

    ops = {INTERIOR: interior, INITIAL: initial}
    if mode == PDE_BOUNDARY:
        ops[min_face("S")] = lower
        ops[max_face("S")] = upper
    else:
        ops[min_face("S")] = lambda jets, pts: jets.val - dirichlet_floor(spec, pts[:, 0])
        ops[max_face("S")] = lambda jets, pts: jets.dxx(0, 0)
    return ResidualSet(spec, ops)


def _basket_residuals(spec, mode):
    from .reference import risky_vanilla_price  # local import to avoid a cycle

    m, x = spec.market, spec.xva
    r = x.rate
    sig = (m.sigma1, m.sigma2)
    repo = (m.repo_rate1, m.repo_rate2)

    def interior(jets, pts):
        s1, s2 = pts[:, 1], pts[:, 2]
        return (
            jets.dt
            - (0.5 * sig[0] ** 2 * s1 * s1) * jets.dxx(0, 0)
            - (m.corr * sig[0] * sig[1] * s1 * s2) * jets.dxx(0, 1)
            - (0.5 * sig[1] ** 2 * s2 * s2) * jets.dxx(1, 1)
            - (repo[0] * s1) * jets.dx[0]
            - (repo[1] * s2) * jets.dx[1]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def lower(i):
        j = 1 - i

        def op(jets, pts):
            # S_i = 0 leaves the one-dimensional risky operator in S_j
            sj = pts[:, 1 + j]
            return (
                jets.dt
                - (0.5 * sig[j] ** 2 * sj * sj) * jets.dxx(j, j)
                - (repo[j] * sj) * jets.dx[j]
                + r * jets.val
                + source_term(jets.val, x)
            )

        return op

    def upper(i):
        j = 1 - i

        def op(jets, pts):
            # interior operator with the S_i-diffusion term removed
            si, sj = pts[:, 1 + i], pts[:, 1 + j]
            return (
                jets.dt
                - (m.corr * sig[0] * sig[1] * si * sj) * jets.dxx(0, 1)
                - (0.5 * sig[j] ** 2 * sj * sj) * jets.dxx(j, j)
                - (repo[i] * si) * jets.dx[i]
                - (repo[j] * sj) * jets.dx[j]
                + r * jets.val
                + source_term(jets.val, x)
            )

        return op

    def initial(jets, pts):
        return jets.val - payoff(spec, pts[:, 1:])

    def classic_lower(i):
        j = 1 - i

        def op(jets, pts):
            if spec.kind == BASKET_WORST_OF:
                target = dirichlet_floor(spec, pts[:, 0])
            else:
                # surviving-asset price: payoff max(alpha (S_j/2 - K), 0)
                target = risky_vanilla_price(
                    pts[:, 0], 0.5 * pts[:, 1 + j], spec.strike,
                    sig[j], x.rate, repo[j], spec.alpha, x,
                )
            return jets.val - target

        return op

    names = ("S1", "S2")
    ops = {INTERIOR: interior, INITIAL: initial}
    for i, name in enumerate(names):
        if mode == PDE_BOUNDARY:
            ops[min_face(name)] = lower(i)
            ops[max_face(name)] = upper(i)
        else:
            ops[min_face(name)] = classic_lower(i)
            ops[max_face(name)] = (lambda ii: lambda jets, pts: jets.dxx(ii, ii))(i)
    return ResidualSet(spec, ops)


def _heston_residuals(spec, mode):
    m, x = spec.market, spec.xva
    r = x.rate

    def interior(jets, pts):
        s, v = pts[:, 1], pts[:, 2]
        return (
            jets.dt
            - (0.5 * s * s * v) * jets.dxx(0, 0)
            - (m.corr * m.sigma * s * v) * jets.dxx(0, 1)
            - (0.5 * m.sigma**2 * v) * jets.dxx(1, 1)
            - (m.repo_rate * s) * jets.dx[0]
            - (m.kappa * (m.eta - v)) * jets.dx[1]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def no_asset_diffusion(jets, pts):
        # linearity in S substituted: drop the S^2 diffusion term only
        s, v = pts[:, 1], pts[:, 2]
        return (
            jets.dt
            - (m.corr * m.sigma * s * v) * jets.dxx(0, 1)
            - (0.5 * m.sigma**2 * v) * jets.dxx(1, 1)
            - (m.repo_rate * s) * jets.dx[0]
            - (m.kappa * (m.eta - v)) * jets.dx[1]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def neumann_variance(jets, pts):
        # dV/dv = 0 on the face removes the variance drift and mixed terms
        s, v = pts[:, 1], pts[:, 2]
        return (
            jets.dt
            - (0.5 * s * s * v) * jets.dxx(0, 0)
            - (0.5 * m.sigma**2 * v) * jets.dxx(1, 1)
            - (m.repo_rate * s) * jets.dx[0]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def asset_floor(jets, pts):
        # S = 0: every S-carrying term vanishes
        v = pts[:, 2]
        return (
            jets.dt
            - (0.5 * m.sigma**2 * v) * jets.dxx(1, 1)
            - (m.kappa * (m.eta - v)) * jets.dx[1]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def variance_floor(jets, pts):
        # v = 0: diffusion terms vanish, variance drift freezes at kappa*eta
        s = pts[:, 1]
        return (
            jets.dt
            - (m.repo_rate * s) * jets.dx[0]
            - (m.kappa * m.eta) * jets.dx[1]
            + r * jets.val
            + source_term(jets.val, x)
        )

    def initial(jets, pts):
        return jets.val - payoff(spec, pts[:, 1:])

    ops = {
        INTERIOR: interior,
        INITIAL: initial,
        min_face("S"): asset_floor,  # kept as a residual region: the degenerate PDE itself
        min_face("v"): variance_floor,
    }
    if mode == PDE_BOUNDARY:
        ops[max_face("S")] = no_asset_diffusion
        ops[max_face("v")] = neumann_variance if spec.strict_neumann else no_asset_diffusion
    else:
        ops[max_face("S")] = lambda jets, pts: jets.dxx(0, 0)
        ops[max_face("v")] = lambda jets, pts: jets.dx[1]
    return ResidualSet(spec, ops)


def build_grid(spec, steps):
    """Collocation grid for a model: ``steps`` maps axis name (and "t") to
    its step count."""
    n_t = steps["t"]
    if spec.spatial_dim == 1:
        return build_grid_1d(spec.domain, n_t, steps[spec.domain.axes[0].name])
    return build_grid_2d(
        spec.domain, n_t, steps[spec.domain.axes[0].name], steps[spec.domain.axes[1].name]
    )
