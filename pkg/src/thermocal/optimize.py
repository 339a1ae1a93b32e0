"""Bound-constrained limited-memory BFGS.

Each iteration fixes the variables sitting on a bound with the gradient
pushing outward, builds a quasi-Newton direction on the remaining (free)
variables with the two-loop recursion, and runs a Wolfe line search along
that direction clipped to the largest feasible step.

References
----------
R. H. Byrd, P. Lu, J. Nocedal, C. Zhu. A limited memory algorithm for bound
constrained optimization. SIAM J. Sci. Comput. 16 (1995).
J. Nocedal, S. J. Wright. Numerical Optimization, 2nd ed., Alg. 3.5/3.6, 7.4.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CalibrationError

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclass(frozen=True)
class OptimizerConfig:
    """Termination and memory settings.

    ``tolerance`` applies both to the relative cost decrease
    ``|J_k - J_{k-1}| / max(1, J_k)`` and to the projected-gradient
    infinity norm.
    """

    tolerance: float = 1e-6
    max_iterations: int = 500
    memory: int = 10
    fd_rel_step: float = 1e-6
    max_line_search: int = 30
    c1: float = 1e-4
    c2: float = 0.9

    def __post_init__(self):
        if not self.tolerance > 0:
            raise CalibrationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise CalibrationError("max_iterations must be >= 1")
        if self.memory < 1:
            raise CalibrationError("memory must be >= 1")
        if not self.fd_rel_step > 0:
            raise CalibrationError("finite-difference step must be positive")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    termination: str
    cost_trace: list = field(default_factory=list)
    x_trace: list = field(default_factory=list)
    n_fun: int = 0
    n_grad: int = 0

    @property
    def converged(self):
        return self.termination == CONVERGED


def projected_gradient(x, g, lower, upper):
    return np.clip(x - g, lower, upper) - x


def _free_mask(x, g, lower, upper):
    at_lo = (x <= lower) & (g > 0)
    at_hi = (x >= upper) & (g < 0)
    return ~(at_lo | at_hi)


def _two_loop(g, pairs, free):
    q = np.where(free, g, 0.0)
    alphas = []
    used = []
    for s, y in reversed(pairs):
        sf, yf = s * free, y * free
        sy = sf @ yf
        if sy <= 1e-12 * np.sqrt((sf @ sf) * (yf @ yf)) or sy <= 0:
            continue
        rho = 1.0 / sy
        a = rho * (sf @ q)
        q = q - a * yf
        alphas.append((rho, a, sf, yf))
        used.append((sf, yf))
    if used:
        sf, yf = used[0]  # newest usable pair
        q = q * ((sf @ yf) / (yf @ yf))
    for rho, a, sf, yf in reversed(alphas):
        b = rho * (yf @ q)
        q = q + (a - b) * sf
    return -q


def _max_step(x, d, lower, upper):
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (upper - x) / d, np.inf)
        lo = np.where(d < 0, (lower - x) / d, np.inf)
    return float(min(up.min(), lo.min()))


class _Problem:
    def __init__(self, fun, grad, lower, upper):
        self.fun, self.grad = fun, grad
        self.lower, self.upper = lower, upper
        self.n_fun = self.n_grad = 0

    def point(self, x):
        return np.clip(x, self.lower, self.upper)

    def f(self, x):
        self.n_fun += 1
        return float(self.fun(x))

    def g(self, x):
        self.n_grad += 1
        return np.asarray(self.grad(x), float)


def _line_search(prob, x, f0, g0, d, alpha0, alpha_max, cfg):
    """Strong-Wolfe search on x + a d, a in (0, alpha_max].

    Returns (alpha, f, g) or None. Reaching ``alpha_max`` with sufficient
    decrease and a still-descending slope is accepted: the step stops at a
    bound.
    """
    dphi0 = g0 @ d
    cache = {}

    def phi(a):
        if a not in cache:
            xa = prob.point(x + a * d) if a != alpha_max else _hit(x, d, a, prob)
            fa = prob.f(xa)
            ga = prob.g(xa)
            cache[a] = (fa, ga, ga @ d)
        return cache[a]

    def zoom(lo, hi, f_lo):
        for _ in range(cfg.max_line_search):
            a = 0.5 * (lo + hi)
            fa, ga, da = phi(a)
            if fa > f0 + cfg.c1 * a * dphi0 or fa >= f_lo:
                hi = a
            else:
                if abs(da) <= -cfg.c2 * dphi0:
                    return a, fa, ga
                if da * (hi - lo) >= 0:
                    hi = lo
                lo, f_lo = a, fa
            if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
                break
        fa, ga, _ = phi(lo) if lo > 0 else (None, None, None)
        if lo > 0 and fa < f0 + cfg.c1 * lo * dphi0:
            return lo, fa, ga
        return None

    a_prev, f_prev = 0.0, f0
    a = min(alpha0, alpha_max)
    for i in range(cfg.max_line_search):
        fa, ga, da = phi(a)
        if fa > f0 + cfg.c1 * a * dphi0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, a, f_prev)
        if abs(da) <= -cfg.c2 * dphi0:
            return a, fa, ga
        if da >= 0:
            return zoom(a, a_prev, fa)
        if a >= alpha_max:
            return a, fa, ga  # descending into a bound
        a_prev, f_prev = a, fa
        a = min(2.0 * a, alpha_max)
    return None


def _hit(x, d, a, prob):
    """Point at the feasible step limit, snapping the blocking variables onto their bound."""
    xa = prob.point(x + a * d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(d > 0, (prob.upper - x) / d, np.inf)
        t_lo = np.where(d < 0, (prob.lower - x) / d, np.inf)
    xa = np.where(np.isclose(t_up, a, rtol=1e-12, atol=0), prob.upper, xa)
    xa = np.where(np.isclose(t_lo, a, rtol=1e-12, atol=0), prob.lower, xa)
    return xa


def minimize(fun, grad, x0, lower, upper, config=None, callback=None):
    """Minimize ``fun`` subject to ``lower <= x <= upper``.

    Parameters
    ----------
    fun, grad : callables of a 1-D array.
    x0 : feasible starting point.
    lower, upper : bound arrays (may contain +-inf).
    config : OptimizerConfig
    callback : optional ``callback(k, x, f)`` after every accepted iterate.

    Returns
    -------
    OptimizeResult
        Best iterate, termination status and the accepted-iterate cost trace.
    """
    cfg = config or OptimizerConfig()
    x = np.array(x0, float).reshape(-1)
    lower = np.broadcast_to(np.asarray(lower, float), x.shape).copy()
    upper = np.broadcast_to(np.asarray(upper, float), x.shape).copy()
    if np.any(lower >= upper):
        raise CalibrationError("every lower bound must be below its upper bound")
    if np.any(x < lower) or np.any(x > upper) or not np.all(np.isfinite(x)):
        raise CalibrationError(f"infeasible initial point {x}")

    prob = _Problem(fun, grad, lower, upper)
    f = prob.f(x)
    g = prob.g(x)
    pairs = deque(maxlen=cfg.memory)
    trace, xs = [f], [x.copy()]
    termination = MAX_ITERATIONS
    k = 0
    retried = False
    while True:
        if np.max(np.abs(projected_gradient(x, g, lower, upper))) < cfg.tolerance:
            termination = CONVERGED
            break
        if k >= cfg.max_iterations:
            break
        free = _free_mask(x, g, lower, upper)
        d = _two_loop(g, pairs, free) if pairs else -np.where(free, g, 0.0)
        d[((x <= lower) & (d < 0)) | ((x >= upper) & (d > 0))] = 0.0
        if g @ d >= 0:
            pairs.clear()
            d = -np.where(free, g, 0.0)
        alpha_max = _max_step(x, d, lower, upper)
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        step = _line_search(prob, x, f, g, d, alpha0, alpha_max, cfg)
        if step is None:
            if pairs and not retried:
                log.debug("line search failed; dropping curvature pairs")
                pairs.clear()
                retried = True
                continue
            termination = LINE_SEARCH_FAILURE
            break
        retried = False
        a, f_new, g_new = step
        x_new = prob.point(x + a * d) if a != alpha_max else _hit(x, d, a, prob)
        s, y = x_new - x, g_new - g
        if s @ y > np.finfo(float).eps * (y @ y):
            pairs.append((s, y))
        k += 1
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        xs.append(x.copy())
        if callback is not None:
            callback(k, x.copy(), f)
        if abs(f_old - f) / max(1.0, abs(f)) < cfg.tolerance:
            termination = CONVERGED
            break
    return OptimizeResult(x, f, g, k, termination, trace, xs, prob.n_fun, prob.n_grad)
