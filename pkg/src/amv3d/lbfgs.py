"""Limited-memory BFGS with a strong-Wolfe line search, plus a coarse-to-fine wrapper."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteObjective

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 10
    g_tol: float = 1e-10
    g_rtol: float = 1e-6
    max_iter: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 25

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")


@dataclass
class WolfeCertificate:
    step: float
    f0: float
    slope0: float
    f: float
    slope: float

    def satisfied(self, c1: float, c2: float) -> bool:
        armijo = self.f <= self.f0 + c1 * self.step * self.slope0
        curvature = abs(self.slope) <= c2 * abs(self.slope0)
        return armijo and curvature


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    status: str
    n_evals: int
    certificates: list[WolfeCertificate] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (f, f') at a and b, or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


class _LineFunction:
    def __init__(self, fun, x, p):
        self.fun, self.x, self.p = fun, x, p
        self.evals = 0
        self.cache: dict[float, tuple[float, np.ndarray, float]] = {}

    def __call__(self, alpha: float):
        if alpha not in self.cache:
            f, g = self.fun(self.x + alpha * self.p)
            self.evals += 1
            self.cache[alpha] = (float(f), g, float(g @ self.p))
        return self.cache[alpha]


def strong_wolfe_search(phi: _LineFunction, f0, slope0, alpha1, c1, c2, max_evals):
    """Bracketing search with cubic-interpolation zoom.

    Returns ``(alpha, f, g, slope)`` for a step meeting both strong Wolfe
    conditions, or ``None`` when the evaluation budget runs out.
    """
    a_prev, f_prev, s_prev = 0.0, f0, slope0
    alpha = alpha1
    for i in range(max_evals):
        f, g, s = phi(alpha)
        if not np.isfinite(f):
            return _zoom(phi, a_prev, f_prev, s_prev, alpha, np.inf, np.nan, f0, slope0, c1, c2,
                         max_evals - i - 1)
        if f > f0 + c1 * alpha * slope0 or (i > 0 and f >= f_prev):
            return _zoom(phi, a_prev, f_prev, s_prev, alpha, f, s, f0, slope0, c1, c2,
                         max_evals - i - 1)
        if abs(s) <= -c2 * slope0:
            return alpha, f, g, s
        if s >= 0:
            return _zoom(phi, alpha, f, s, a_prev, f_prev, s_prev, f0, slope0, c1, c2,
                         max_evals - i - 1)
        a_prev, f_prev, s_prev = alpha, f, s
        alpha = 2.0 * alpha
    return None


def _zoom(phi, lo, f_lo, s_lo, hi, f_hi, s_hi, f0, slope0, c1, c2, max_evals):
    for _ in range(max(max_evals, 0)):
        width = hi - lo
        trial = None
        if np.isfinite(f_hi) and np.isfinite(s_hi):
            trial = _cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi)
        lo_b, hi_b = min(lo, hi), max(lo, hi)
        margin = 0.1 * abs(width)
        if trial is None or not np.isfinite(trial) or not (lo_b + margin <= trial <= hi_b - margin):
            trial = lo + 0.5 * width
        f, g, s = phi(trial)
        if not np.isfinite(f) or f > f0 + c1 * trial * slope0 or f >= f_lo:
            hi, f_hi, s_hi = trial, f, s
        else:
            if abs(s) <= -c2 * slope0:
                return trial, f, g, s
            if s * (hi - lo) >= 0:
                hi, f_hi, s_hi = lo, f_lo, s_lo
            lo, f_lo, s_lo = trial, f, s
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    return None


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize(fun: Objective, x0: np.ndarray, opts: LbfgsOptions = LbfgsOptions(),
             callback: Callable[[np.ndarray, float], None] | None = None) -> LbfgsResult:
    """Minimize a smooth objective ``fun(x) -> (f, grad)`` from ``x0``.

    Stops when the gradient sup-norm falls below ``max(g_tol, g_rtol * |g0|)``
    or after ``max_iter`` iterations. A failed line search ends the run with
    status ``"linesearch_failed"`` and the best point found so far.
    """
    x = np.array(x0, dtype=float, copy=True)
    f, g = fun(x)
    f = float(f)
    n_evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective("objective is not finite at the starting point")
    gnorm0 = float(np.max(np.abs(g))) if g.size else 0.0
    tol = max(opts.g_tol, opts.g_rtol * gnorm0)
    pairs: deque = deque(maxlen=opts.memory)
    certs: list[WolfeCertificate] = []
    history = [f]
    status = "max_iter"
    it = 0
    while True:
        if g.size == 0 or np.max(np.abs(g)) <= tol:
            status = "converged"
            break
        if it >= opts.max_iter:
            break
        p = _two_loop(g, list(pairs))
        slope = float(g @ p)
        if not slope < 0:
            pairs.clear()
            p = -g
            slope = float(g @ p)
        alpha1 = 1.0 if pairs else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
        phi = _LineFunction(fun, x, p)
        found = strong_wolfe_search(phi, f, slope, alpha1, opts.c1, opts.c2, opts.max_linesearch)
        n_evals += phi.evals
        if found is None and pairs:
            # retry once along steepest descent with a fresh memory
            pairs.clear()
            p = -g
            slope = float(g @ p)
            phi = _LineFunction(fun, x, p)
            alpha1 = min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
            found = strong_wolfe_search(phi, f, slope, alpha1, opts.c1, opts.c2, opts.max_linesearch)
            n_evals += phi.evals
        if found is None:
            best = min(((v[0], a, v[1]) for a, v in phi.cache.items() if np.isfinite(v[0])),
                       default=None, key=lambda t: t[0])
            if best is not None and best[0] < f:
                x = x + best[1] * p
                f, g = best[0], best[2]
                history.append(f)
            status = "linesearch_failed"
            log.debug("line search failed at iteration %d", it)
            break
        alpha, f_new, g_new, slope_new = found
        certs.append(WolfeCertificate(alpha, f, slope, f_new, slope_new))
        assert f_new < f or (f_new == f and slope == 0), "accepted step increased the objective"
        s_vec = alpha * p
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec, 1.0 / sy))
        x = x + s_vec
        f, g = f_new, g_new
        history.append(f)
        it += 1
        if callback is not None:
            callback(x, f)
    return LbfgsResult(x, f, g, it, status, n_evals, certs, history)


def multiscale_minimize(fun: Objective, x0: np.ndarray, stage_masks: Iterable[np.ndarray],
                        opts: LbfgsOptions = LbfgsOptions()) -> LbfgsResult:
    """Run :func:`minimize` stage by stage, freeing more variables each time.

    ``stage_masks`` are nested boolean masks over ``x0``. Variables outside the
    first stage's mask start at zero; each stage warm-starts from the previous.
    """
    masks: Sequence[np.ndarray] = [np.asarray(mk, dtype=bool) for mk in stage_masks]
    if not masks:
        raise ValueError("need at least one stage")
    x = np.where(masks[0], x0, 0.0)
    total_it = total_ev = 0
    certs: list[WolfeCertificate] = []
    history: list[float] = []
    result = None
    for mask in masks:
        base = x.copy()
        free = np.flatnonzero(mask)

        def restricted(z, base=base, free=free):
            full = base.copy()
            full[free] = z
            f, g = fun(full)
            return f, g[free]

        result = minimize(restricted, x[free], opts)
        x = base
        x[free] = result.x
        total_it += result.iterations
        total_ev += result.n_evals
        certs.extend(result.certificates)
        history.extend(result.history)
    f, g = fun(x)
    return LbfgsResult(x, float(f), g, total_it, result.status, total_ev + 1, certs, history)
