"""Small numerical optimizers used by the placement and sensing stages.

* :func:`truncated_newton` - line-search Newton-CG for smooth unconstrained problems.
* :func:`abc_optimize` - artificial bee colony global search over a box.
* :func:`bfgs_refine` - box-clipped BFGS with central-difference gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "AbcConfig",
    "NewtonResult",
    "abc_optimize",
    "bfgs_refine",
    "truncated_newton",
]


def _safe(fun, x) -> float:
    """Objective value with evaluation failures mapped to +inf."""
    try:
        val = float(fun(x))
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return math.inf
    return val if math.isfinite(val) else math.inf


# ---------------------------------------------------------------------------
# truncated Newton


@dataclass
class NewtonResult:
    x: np.ndarray
    fun: float
    iterations: int
    values: list = field(default_factory=list)
    cg_iterations: int = 0


def _cg_direction(g, hessp, max_cg, forcing):
    """Approximately solve H p = -g, stopping at negative curvature or the forcing tolerance."""
    gnorm = np.linalg.norm(g)
    p = np.zeros_like(g)
    r = -g.copy()
    d = r.copy()
    rr = r @ r
    its = 0
    for its in range(1, max_cg + 1):
        hd = hessp(d)
        curv = d @ hd
        if curv <= 1e-14 * (d @ d):
            if its == 1:
                p = -g.copy()
            break
        step = rr / curv
        p = p + step * d
        r = r - step * hd
        rr_new = r @ r
        if math.sqrt(rr_new) <= forcing * gnorm:
            break
        d = r + (rr_new / rr) * d
        rr = rr_new
    return p, its


def truncated_newton(fun: Callable, model: Callable, x0, *, max_iter: int = 10,
                     gtol: float = 1e-12, max_cg: int | None = None,
                     c1: float = 1e-4, max_backtracks: int = 40) -> NewtonResult:
    """Minimize ``fun`` by inexact Newton steps.

    ``model(x)`` returns ``(grad, hessp)`` where ``hessp(v)`` is a Hessian-vector
    product at ``x``. The inner CG loop stops at negative curvature or when the
    residual falls below ``min(0.5, sqrt(|g|)) |g|``. Steps are accepted by
    Armijo backtracking, so the returned value never exceeds ``fun(x0)``;
    trial points where ``fun`` fails are treated as infinitely bad.
    """
    x = np.array(x0, dtype=float)
    f = _safe(fun, x)
    result = NewtonResult(x=x, fun=f, iterations=0, values=[f])
    if not math.isfinite(f):
        return result
    max_cg = max_cg or 2 * x.size
    for k in range(max_iter):
        g, hessp = model(x)
        gnorm = float(np.linalg.norm(g))
        if not math.isfinite(gnorm) or gnorm <= gtol:
            break
        forcing = min(0.5, math.sqrt(gnorm))
        p, its = _cg_direction(g, hessp, max_cg, forcing)
        result.cg_iterations += its
        slope = g @ p
        if slope >= 0:
            p, slope = -g, -(g @ g)
        t = 1.0
        for _ in range(max_backtracks):
            trial = x + t * p
            ft = _safe(fun, trial)
            if ft <= f + c1 * t * slope:
                break
            t *= 0.5
        else:
            break
        if ft >= f and np.allclose(trial, x, rtol=0, atol=0):
            break
        x, f = trial, ft
        result.iterations = k + 1
        result.values.append(f)
    result.x, result.fun = x, f
    return result


# ---------------------------------------------------------------------------
# artificial bee colony


@dataclass(frozen=True)
class AbcConfig:
    popsize: int = 20
    epoch_limit: int = 10
    max_iters: int = 50
    seed: int = 0


def _fitness(values):
    return np.where(values >= 0, 1.0 / (1.0 + values), 1.0 + np.abs(values))


def abc_optimize(objective: Callable, bounds, config: AbcConfig = AbcConfig()):
    """Minimize ``objective`` over a box with the artificial bee colony scheme.

    ``popsize`` food sources are each worked by one employed bee; the same number
    of onlookers pick sources by fitness-proportional roulette; a source left
    unimproved for more than ``epoch_limit`` trials is replaced by a scout.
    Returns ``(best_x, best_value)``.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(hi >= lo)):
        raise ValueError("bounds must be finite with lower <= upper")
    rng = np.random.default_rng(config.seed)
    n, dim = max(1, int(config.popsize)), len(lo)

    foods = lo + rng.random((n, dim)) * (hi - lo)
    values = np.array([_safe(objective, x) for x in foods])
    trials = np.zeros(n, dtype=int)
    best = int(np.argmin(values))
    best_x, best_f = foods[best].copy(), values[best]

    def work(i):
        nonlocal best_x, best_f
        if n > 1:
            k = int(rng.integers(n - 1))
            k += k >= i
        else:
            k = i
        j = int(rng.integers(dim))
        cand = foods[i].copy()
        cand[j] += rng.uniform(-1.0, 1.0) * (foods[i, j] - foods[k, j])
        cand[j] = min(max(cand[j], lo[j]), hi[j])
        val = _safe(objective, cand)
        if val < values[i]:
            foods[i], values[i], trials[i] = cand, val, 0
            if val < best_f:
                best_x, best_f = cand.copy(), val
        else:
            trials[i] += 1

    for _ in range(int(config.max_iters)):
        for i in range(n):
            work(i)
        fit = _fitness(np.where(np.isfinite(values), values, np.finfo(float).max))
        prob = fit / fit.sum()
        for _ in range(n):
            work(int(rng.choice(n, p=prob)))
        worst = int(np.argmax(trials))
        if trials[worst] > config.epoch_limit:
            foods[worst] = lo + rng.random(dim) * (hi - lo)
            values[worst] = _safe(objective, foods[worst])
            trials[worst] = 0
            if values[worst] < best_f:
                best_x, best_f = foods[worst].copy(), values[worst]
    return best_x, float(best_f)


# ---------------------------------------------------------------------------
# BFGS refinement


def _central_gradient(fun, u, h):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        fp, fm = fun(u + e), fun(u - e)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return None
        g[i] = (fp - fm) / (2 * h)
    return g


def bfgs_refine(objective: Callable, start, bounds, *, max_iter: int = 200,
                step: float = 1e-4, xtol: float = 1e-12):
    """Polish ``start`` with BFGS inside a box.

    Works in box-normalized coordinates; gradients are central differences with
    step ``step`` (a fraction of each side); iterates are clipped to the box and
    accepted by backtracking, so the returned value is never above the start's.
    Returns ``(x, value)``; if the gradient cannot be evaluated the start is
    returned unchanged.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, span = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    span = np.where(span > 0, span, 1.0)
    to_x = lambda u: lo + u * span

    def fu(u):
        if np.any(u < -step) or np.any(u > 1 + step):
            # central differences may poke just past the box; anything further is out
            return math.inf
        return _safe(objective, to_x(u))

    u = np.clip((np.asarray(start, dtype=float) - lo) / span, 0.0, 1.0)
    f0 = _safe(objective, to_x(u))
    x_start = np.array(start, dtype=float)
    if not math.isfinite(f0):
        return x_start, f0
    g = _central_gradient(fu, u, step)
    if g is None:
        return x_start, f0
    f = f0
    H = None
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm == 0.0:
            break
        if H is None:
            p = -g * (0.1 / gnorm)
        else:
            p = -H @ g
            if p @ g >= 0:
                H = None
                p = -g * (0.1 / gnorm)
        t = 1.0
        accepted = False
        for _ in range(50):
            u_new = np.clip(u + t * p, 0.0, 1.0)
            f_new = fu(u_new)
            if f_new <= f + 1e-4 * (g @ (u_new - u)) and f_new <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        s = u_new - u
        g_new = _central_gradient(fu, u_new, step)
        if g_new is None:
            u, f = u_new, f_new
            break
        y = g_new - g
        u, f, g = u_new, f_new, g_new
        if np.linalg.norm(s) <= xtol:
            break
        sy = s @ y
        if sy > 1e-16 * np.linalg.norm(s) * np.linalg.norm(y):
            if H is None:
                H = np.eye(u.size) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(u.size) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
    return to_x(u), float(f)
