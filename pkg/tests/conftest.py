"""Shared fixtures and independent oracle helpers.

The finite-difference helpers here are the oracles for every AD check; they
never call into the package's derivative code.
"""

import numpy as np
import pytest

from xvapinn import models
from xvapinn.network import Architecture, InputScaling, NetworkParams, init


def central_jet(f, point, h1=1e-4, h2=1e-3):
    """Finite-difference value/first/second derivatives of a scalar field.

    ``f`` maps a 1-D coordinate array (t, x...) to a float.  First
    derivatives use centered differences with step ``h1``, second derivatives
    (including mixed) use step ``h2``.
    """
    point = np.asarray(point, dtype=np.float64)
    dim = point.size

    def shift(i, h):
        e = np.zeros(dim)
        e[i] = h
        return e

    value = f(point)
    first = np.array(
        [(f(point + shift(i, h1)) - f(point - shift(i, h1))) / (2 * h1) for i in range(dim)]
    )
    second = np.empty((dim - 1, dim - 1))
    for i in range(1, dim):
        for j in range(1, dim):
            if i == j:
                second[i - 1, j - 1] = (
                    f(point + shift(i, h2)) - 2 * value + f(point - shift(i, h2))
                ) / h2**2
            else:
                second[i - 1, j - 1] = (
                    f(point + shift(i, h2) + shift(j, h2))
                    - f(point + shift(i, h2) - shift(j, h2))
                    - f(point - shift(i, h2) + shift(j, h2))
                    + f(point - shift(i, h2) - shift(j, h2))
                ) / (4 * h2**2)
    return value, first[0], first[1:], second


def central_grad(fun, x, h=1e-6):
    """Centered finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def relative_mismatch(got, want, floor=1e-8):
    """Max relative error over entries whose reference magnitude exceeds
    ``floor``; absolute error elsewhere."""
    got = np.atleast_1d(np.asarray(got, dtype=np.float64)).ravel()
    want = np.atleast_1d(np.asarray(want, dtype=np.float64)).ravel()
    big = np.abs(want) > floor
    worst = 0.0
    if big.any():
        worst = np.max(np.abs(got[big] - want[big]) / np.abs(want[big]))
    if (~big).any():
        worst = max(worst, np.max(np.abs(got[~big] - want[~big])))
    return worst


def raw_params(weights, biases, input_dim, scaling=None):
    """NetworkParams around explicit layer arrays (identity output last)."""
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    biases = [np.asarray(b, dtype=np.float64) for b in biases]
    hidden = max(len(weights) - 1, 1)
    width = weights[0].shape[0] if len(weights) > 1 else 1
    arch = Architecture(
        input_dim=input_dim,
        hidden_layers=hidden,
        hidden_width=width,
        input_scaling=scaling,
    )
    return NetworkParams(arch=arch, weights=weights, biases=biases, seed=None)


def table1_xva(lambda_b=0.04):
    return models.XvaParams.with_funding_rule(
        lambda_b=lambda_b, lambda_c=0.05, recovery_b=0.4, recovery_c=0.4, rate=0.03
    )


def table1_spec(lambda_b=0.04, alpha=models.PUT):
    """One-asset put with the published market and credit parameters."""
    return models.bs1d(
        alpha=alpha, strike=15.0, maturity=5.0, sigma=0.25, repo_rate=0.015,
        xva=table1_xva(lambda_b),
    )


def table3_xva(lambda_b=0.02):
    return models.XvaParams.with_funding_rule(
        lambda_b=lambda_b, lambda_c=0.07, recovery_b=0.5, recovery_c=0.3, rate=0.03
    )


def table3_average_spec(lambda_b=0.02, alpha=models.PUT):
    return models.basket_average(
        alpha=alpha, strike=50.0, maturity=1.0, sigma1=0.25, sigma2=0.15,
        repo_rate1=0.015, repo_rate2=0.022, corr=-0.65, xva=table3_xva(lambda_b),
    )


def table3_worst_of_spec(lambda_b=0.02, alpha=models.PUT):
    return models.basket_worst_of(
        alpha=alpha, strike=50.0, maturity=1.0, sigma1=0.25, sigma2=0.15,
        repo_rate1=0.015, repo_rate2=0.022, corr=-0.65, xva=table3_xva(lambda_b),
    )


def table4_xva(lambda_b=0.02):
    return models.XvaParams.with_funding_rule(
        lambda_b=lambda_b, lambda_c=0.04, recovery_b=0.3, recovery_c=0.3, rate=0.025
    )


def table4_spec(lambda_b=0.02, alpha=models.PUT, v_max=3.0, **kwargs):
    return models.heston(
        alpha=alpha, strike=1.0, maturity=2.0, repo_rate=0.025, kappa=1.5, eta=0.04,
        sigma=0.3, corr=-0.9, xva=table4_xva(lambda_b), v_max=v_max, **kwargs,
    )


def scaled_bs1d_arch(spec, hidden_layers=2, hidden_width=8):
    scaling = InputScaling.from_bounds(
        [(0.0, spec.domain.maturity)] + [(a.lo, a.hi) for a in spec.domain.axes]
    )
    return Architecture(
        input_dim=1 + len(spec.domain.axes),
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
        input_scaling=scaling,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def seeded_net(input_dim=2, hidden_layers=2, hidden_width=6, seed=42, scaling=None):
    arch = Architecture(
        input_dim=input_dim, hidden_layers=hidden_layers, hidden_width=hidden_width,
        input_scaling=scaling,
    )
    return init(arch, seed)
