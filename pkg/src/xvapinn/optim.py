"""Two-stage training: full-batch Adam (global) followed by L-BFGS (local).

Both optimizers work on flat parameter vectors through a value-and-gradient
closure, so they are reusable for plain test functions.  The PDE wrappers
evaluate the volume-normalized loss on the whole collocation set (no
minibatching).  Everything is deterministic for a fixed seed and platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .loss import assemble_with_gradient
from .models import PDE_BOUNDARY

__all__ = [
    "TrainConfig",
    "TrainResult",
    "lr_at",
    "adam_minimize",
    "lbfgs_minimize",
    "adam_run",
    "lbfgs_run",
    "train",
    "STATUS_CONVERGED",
    "STATUS_STEP_LIMIT",
    "STATUS_LINE_SEARCH_FAILURE",
]

STATUS_CONVERGED = "converged"
STATUS_STEP_LIMIT = "step-limit"
STATUS_LINE_SEARCH_FAILURE = "line-search-failure"

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_WOLFE_C1 = 1e-4
_WOLFE_C2 = 0.9
_GRAD_TOL = 1e-10


@dataclass(frozen=True)
class DecaySchedule:
    """Inverse time decay eps_k = eps_0 / (1 + delta * k / a)."""

    delta: float
    a: int

    def __post_init__(self):
        if self.a <= 0:
            raise ConfigError("decay step a must be positive", field="training.decay.a")


@dataclass(frozen=True)
class TrainConfig:
    adam_steps: int
    lbfgs_steps: int
    lr0: float = 1e-3
    decay: DecaySchedule | None = None
    lbfgs_memory: int = 10
    seed: int = 0
    log_every: int = 100
    mode: str = PDE_BOUNDARY
    lambda_hat: dict | None = None

    def __post_init__(self):
        if self.adam_steps < 0 or self.lbfgs_steps < 0:
            raise ConfigError("step counts must be non-negative", field="training")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive", field="training.lr0")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1", field="training.log_every")


def lr_at(config, k):
    """Learning rate at Adam step k under the configured schedule."""
    if k < 0:
        raise ConfigError("step index must be non-negative")
    if config.decay is None:
        return config.lr0
    return config.lr0 / (1.0 + config.decay.delta * k / config.decay.a)


@dataclass
class TrainResult:
    x: np.ndarray
    value: float
    status: str
    steps: int
    trajectory: list = field(default_factory=list)

    def extend(self, other):
        self.x = other.x
        self.value = other.value
        self.status = other.status
        self.steps += other.steps
        self.trajectory.extend(other.trajectory)
        return self


def adam_minimize(value_and_grad, x0, steps, config, callback=None, step_offset=0):
    """Full-batch Adam with the reference moment constants."""
    x = np.asarray(x0, dtype=np.float64).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    value, grad = value_and_grad(x)
    _check_finite(value, step_offset)
    if callback:
        callback(step_offset, x, value, lr_at(config, 0))
    for k in range(steps):
        lr = lr_at(config, k)
        m = _ADAM_BETA1 * m + (1.0 - _ADAM_BETA1) * grad
        v = _ADAM_BETA2 * v + (1.0 - _ADAM_BETA2) * grad * grad
        m_hat = m / (1.0 - _ADAM_BETA1 ** (k + 1))
        v_hat = v / (1.0 - _ADAM_BETA2 ** (k + 1))
        x = x - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        value, grad = value_and_grad(x)
        _check_finite(value, step_offset + k + 1)
        if callback:
            callback(step_offset + k + 1, x, value, lr)
    return TrainResult(x=x, value=value, status=STATUS_STEP_LIMIT, steps=steps)


def _check_finite(value, step):
    if not np.isfinite(value):
        raise NumericError("loss became non-finite during training", step=step)


def _cubic_interpolate(a, fa, ga, b, fb, gb):
    # Nocedal & Wright eq. (3.59); falls back to bisection on degeneracy
    with np.errstate(all="ignore"):
        d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
        square = d1 * d1 - ga * gb
        if square < 0.0 or not np.isfinite(square):
            return 0.5 * (a + b)
        d2 = np.sign(b - a) * np.sqrt(square)
        x = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2)
    lo, hi = min(a, b), max(a, b)
    margin = 0.1 * (hi - lo)
    if not np.isfinite(x) or x < lo + margin or x > hi - margin:
        return 0.5 * (a + b)
    return x


def _zoom(phi, a_lo, f_lo, g_lo, a_hi, f_hi, g_hi, f0, g0, max_iter=25):
    for _ in range(max_iter):
        a = _cubic_interpolate(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        f, g, state = phi(a)
        if f > f0 + _WOLFE_C1 * a * g0 or f >= f_lo:
            a_hi, f_hi, g_hi = a, f, g
        else:
            if abs(g) <= -_WOLFE_C2 * g0:
                return a, f, state
            if g * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = a, f, g
        if abs(a_hi - a_lo) < 1e-16:
            break
    return None


def _strong_wolfe(phi, f0, g0, alpha0):
    """Line search enforcing the strong Wolfe conditions (c1=1e-4, c2=0.9)."""
    if g0 >= 0.0:
        return None
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = alpha0
    for _ in range(25):
        f, g, state = phi(a)
        if not np.isfinite(f):
            # treat blow-ups as a failed sufficient-decrease test and shrink
            result = _zoom(phi, a_prev, f_prev, g_prev, a, np.inf, 0.0, f0, g0)
            return result
        if f > f0 + _WOLFE_C1 * a * g0 or (f >= f_prev and a_prev > 0.0):
            return _zoom(phi, a_prev, f_prev, g_prev, a, f, g, f0, g0)
        if abs(g) <= -_WOLFE_C2 * g0:
            return a, f, state
        if g >= 0.0:
            return _zoom(phi, a, f, g, a_prev, f_prev, g_prev, f0, g0)
        a_prev, f_prev, g_prev = a, f, g
        a = 2.0 * a
    return None


def lbfgs_minimize(value_and_grad, x0, steps, memory=10, grad_tol=_GRAD_TOL,
                   callback=None, step_offset=0):
    """Two-loop-recursion L-BFGS with a strong Wolfe line search.

    Accepted iterates never increase the objective; on a failed line search
    the best iterate so far is returned with a warning status.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = value_and_grad(x)
    _check_finite(f, step_offset)
    if callback:
        callback(step_offset, x, f, 0.0)
    s_hist, y_hist, rho_hist = [], [], []
    status = STATUS_STEP_LIMIT
    k = 0
    for k in range(1, steps + 1):
        gnorm = np.linalg.norm(g)
        if gnorm < grad_tol:
            status = STATUS_CONVERGED
            k -= 1
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            q += (a - rho * np.dot(y, q)) * s
        d = -q
        dg0 = np.dot(g, d)
        if dg0 >= 0.0:  # not a descent direction; restart from steepest descent
            s_hist, y_hist, rho_hist = [], [], []
            d = -g
            dg0 = -gnorm**2

        def phi(alpha):
            xa = x + alpha * d
            fa, ga = value_and_grad(xa)
            return fa, np.dot(ga, d), (xa, fa, ga)

        alpha0 = 1.0 if y_hist else min(1.0, 1.0 / max(gnorm, 1e-12))
        hit = _strong_wolfe(phi, f, dg0, alpha0)
        if hit is None:
            status = STATUS_LINE_SEARCH_FAILURE
            k -= 1
            break
        alpha, f_new, (x_new, _, g_new) = hit
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if callback:
            callback(step_offset + k, x, f, alpha)
    return TrainResult(x=x, value=f, status=status, steps=k)


# -- PDE wrappers ---------------------------------------------------------------


def _pde_closure(spec, params_template, grid, config, trajectory, region_names):
    def value_and_grad(flat):
        params = params_template.from_flat(flat)
        breakdown, grad = assemble_with_gradient(
            spec, params, grid, mode=config.mode, lambda_hat=config.lambda_hat
        )
        value_and_grad.last_breakdown = breakdown
        return breakdown.total, grad

    def callback(step, x, value, lr):
        if step % config.log_every == 0:
            breakdown = value_and_grad.last_breakdown
            trajectory.append(
                {
                    "step": step,
                    "total": value,
                    "lr": lr,
                    "regions": {name: breakdown.regions[name] for name in region_names},
                }
            )

    value_and_grad.last_breakdown = None
    return value_and_grad, callback


def adam_run(spec, params, grid, config, callback=None):
    """Adam stage on the full collocation loss; returns new parameters and a
    loss trajectory sampled every ``log_every`` steps."""
    region_names = sorted(grid.regions)
    trajectory = []
    fun, log_cb = _pde_closure(spec, params, grid, config, trajectory, region_names)

    def cb(step, x, value, lr):
        log_cb(step, x, value, lr)
        if callback:
            callback(step, x, value, lr)

    result = adam_minimize(fun, params.flatten(), config.adam_steps, config, callback=cb)
    result.trajectory = trajectory
    return params.from_flat(result.x), result


def lbfgs_run(spec, params, grid, config, step_offset=0):
    region_names = sorted(grid.regions)
    trajectory = []
    fun, log_cb = _pde_closure(spec, params, grid, config, trajectory, region_names)
    result = lbfgs_minimize(
        fun,
        params.flatten(),
        config.lbfgs_steps,
        memory=config.lbfgs_memory,
        callback=log_cb,
        step_offset=step_offset,
    )
    result.trajectory = trajectory
    return params.from_flat(result.x), result


def train(spec, params, grid, config, callback=None):
    """Algorithm: Adam stage then L-BFGS stage on the same loss."""
    params_adam, adam_result = adam_run(spec, params, grid, config, callback=callback)
    if config.lbfgs_steps == 0:
        return params_adam, adam_result
    params_final, lbfgs_result = lbfgs_run(
        spec, params_adam, grid, config, step_offset=config.adam_steps
    )
    # drop the duplicated boundary sample between the two stages
    if (
        adam_result.trajectory
        and lbfgs_result.trajectory
        and lbfgs_result.trajectory[0]["step"] == adam_result.trajectory[-1]["step"]
    ):
        lbfgs_result.trajectory.pop(0)
    combined = TrainResult(
        x=lbfgs_result.x,
        value=lbfgs_result.value,
        status=lbfgs_result.status,
        steps=adam_result.steps + lbfgs_result.steps,
        trajectory=adam_result.trajectory + lbfgs_result.trajectory,
    )
    return params_final, combined
