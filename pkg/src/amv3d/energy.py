"""Data term, regularizers, ADMM subproblem objectives and their gradients.

Inside the solver, vertical winds and slab thicknesses are expressed in
units of ``SolverConfig.pressure_scale`` (``w_hat = w / p_s``, ``dp_hat =
dp / p_s`` and ``gamma_hat = gamma * p_s``). The warp term is unchanged by
this, and the hydrostatic constraint is simply divided by ``p_s``; with
``pressure_scale=1`` every expression is in raw hPa units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffops
from .errors import NonPositiveRho, ShapeMismatch
from .grid import AMVState, ObservationSet, PhysicsConstants, PressureGrid
from .lbfgs import LbfgsOptions
from .spline import WarpPlan, prefilter_coeffs
from .wavelet import ScaleSchedule, WaveletBasis, default_depth, fwt2, iwt2


@dataclass
class SolverConfig:
    alpha_d: np.ndarray
    alpha_x: np.ndarray
    gamma: PhysicsConstants
    rho: float = 1.0
    tikhonov: float = 1e-8
    pressure_scale: float | None = None
    basis: WaveletBasis = field(default_factory=WaveletBasis)
    n_stages: int | None = None
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)
    dt: float = 1.0

    def __post_init__(self):
        self.alpha_d = np.atleast_1d(np.asarray(self.alpha_d, dtype=float))
        self.alpha_x = np.atleast_1d(np.asarray(self.alpha_x, dtype=float))
        K = self.gamma.K
        if self.alpha_d.size == 1:
            self.alpha_d = np.full(K, self.alpha_d[0])
        if self.alpha_x.size == 1:
            self.alpha_x = np.full(K, self.alpha_x[0])
        if self.alpha_d.shape != (K,) or self.alpha_x.shape != (K,):
            raise ShapeMismatch(f"alpha vectors must have {K} entries")
        if np.any(self.alpha_d < 0) or np.any(self.alpha_x < 0):
            raise ValueError("regularization weights must be nonnegative")
        if self.rho < 0:
            raise NonPositiveRho("rho must be nonnegative")
        if not self.tikhonov > np.finfo(float).eps:
            raise ValueError("tikhonov weight must exceed machine epsilon")

    @property
    def K(self) -> int:
        return self.gamma.K

    def p_scale(self, grid: PressureGrid) -> float:
        if self.pressure_scale is None:
            return float(np.mean(grid.increments))
        return float(self.pressure_scale)

    def schedule(self, rows: int, cols: int) -> ScaleSchedule:
        J = self.basis.resolve_depth(rows, cols) if self.basis.depth else default_depth(rows, cols)
        return ScaleSchedule.coarse_to_fine(J, self.n_stages)


@dataclass
class DualState:
    """Scaled multipliers and consensus copies of the ADMM recursions.

    ``u_w`` is only present in split mode. Wind-like quantities use the
    solver's pressure scale.
    """

    u_d: np.ndarray
    u_c: np.ndarray
    c_tilde: np.ndarray
    u_w: np.ndarray | None = None
    w_tilde: np.ndarray | None = None

    @classmethod
    def zeros(cls, K: int, plane: tuple[int, int], split: bool = False) -> "DualState":
        r, c = plane
        return cls(
            np.zeros((K, r, c)),
            np.zeros((K, 3, r, c)),
            np.zeros((K, 3, r, c)),
            np.zeros((K + 1, r, c)) if split else None,
            np.zeros((K + 1, r, c)) if split else None,
        )

    def copy(self) -> "DualState":
        cp = lambda a: None if a is None else a.copy()  # noqa: E731
        return DualState(self.u_d.copy(), self.u_c.copy(), self.c_tilde.copy(),
                         cp(self.u_w), cp(self.w_tilde))


# --------------------------------------------------------------------------
# plain terms of the estimation problem


def images_t1(c: np.ndarray, basis: WaveletBasis = WaveletBasis()) -> np.ndarray:
    return iwt2(c, basis)


def warp_stack(x1: np.ndarray, d: np.ndarray, w: np.ndarray, gamma: np.ndarray,
               dt: float = 1.0) -> np.ndarray:
    """Apply the layer warp to a whole ``(K, 3, rows, cols)`` stack."""
    plan = WarpPlan(d)
    vert = 0.5 * dt * (gamma[:-1, :, None, None] * w[:-1, None] + gamma[1:, :, None, None] * w[1:, None])
    return plan.sample(prefilter_coeffs(x1)) - vert


def residual(state: AMVState, obs: ObservationSet, gamma: PhysicsConstants,
             grid: PressureGrid, basis: WaveletBasis = WaveletBasis(), dt: float = 1.0) -> np.ndarray:
    """Masked residuals stacked as ``(2, K, 3, rows, cols)`` for t0 and t1."""
    if state.K != obs.K or state.K != grid.K or gamma.K != grid.K:
        raise ShapeMismatch("layer counts of state, observations, grid and gamma differ")
    if state.shape != obs.shape:
        raise ShapeMismatch("state and observation grids differ")
    x1 = iwt2(state.c, basis)
    x0 = warp_stack(x1, state.d, state.w, gamma.gamma, dt)
    r0 = np.where(obs.mask0[:, None], x0 - obs.filled(0), 0.0)
    r1 = np.where(obs.mask1[:, None], x1 - obs.filled(1), 0.0)
    return np.stack([r0, r1])


def data_term(state, obs, gamma, grid, basis: WaveletBasis = WaveletBasis(), dt: float = 1.0) -> float:
    r = residual(state, obs, gamma, grid, basis, dt)
    return 0.5 * float(np.sum(r * r))


def reg_d(d: np.ndarray, alpha_d, tikhonov: float = 0.0) -> float:
    """Squared-Laplacian smoothness of both components plus the Tikhonov term."""
    d = np.asarray(d, dtype=float)
    alpha_d = np.broadcast_to(np.asarray(alpha_d, dtype=float), (d.shape[0],))
    lap = diffops.laplacian(d)
    per_layer = np.sum(lap * lap, axis=(1, 2, 3))
    return 0.5 * float(alpha_d @ per_layer) + tikhonov * float(np.sum(d * d))


def l1_term(c: np.ndarray, alpha_x) -> float:
    alpha_x = np.broadcast_to(np.asarray(alpha_x, dtype=float), (c.shape[0],))
    return float(alpha_x @ np.sum(np.abs(c), axis=(1, 2, 3)))


# --------------------------------------------------------------------------
# batched layer energy


@dataclass
class LayerTerms:
    """Constants of the smooth objective for a batch of B layers."""

    y0: np.ndarray          # (B, 3, r, c), zero where unobserved
    y1: np.ndarray
    m0: np.ndarray          # (B, 1, r, c) float masks
    m1: np.ndarray
    g_lo: np.ndarray        # (B, 3) scaled gamma at boundary k
    g_hi: np.ndarray        # (B, 3) scaled gamma at boundary k + 1
    dp: np.ndarray          # (B,) scaled slab thickness
    alpha_d: np.ndarray     # (B,)
    tikhonov: float
    rho: float = 0.0
    hydro: bool = False
    u_d: np.ndarray | None = None        # (B, r, c)
    c_anchor: np.ndarray | None = None   # (B, 3, r, c): c_tilde - u_c
    lo_anchor: np.ndarray | None = None  # (B, r, c) consensus target for w^k
    hi_anchor: np.ndarray | None = None
    basis: WaveletBasis = field(default_factory=WaveletBasis)
    dt: float = 1.0


def layer_energy(d, w_lo, w_hi, c, t: LayerTerms, grad: bool = True):
    """Value and gradient of the per-layer smooth ADMM objective, summed over the batch.

    Variables: ``d`` (B, 2, r, c), ``w_lo``/``w_hi`` (B, r, c) scaled winds
    at the lower and upper boundary, ``c`` (B, 3, r, c) image coefficients.
    Returns ``(value, (g_d, g_lo, g_hi, g_c))`` or ``(value, None)``.
    """
    x1 = iwt2(c, t.basis)
    C = prefilter_coeffs(x1)
    plan = WarpPlan(d)
    if grad:
        xs, gx, gy = plan.sample_with_gradient(C)
    else:
        xs = plan.sample(C)
    half = 0.5 * t.dt
    vert = half * (t.g_lo[:, :, None, None] * w_lo[:, None] + t.g_hi[:, :, None, None] * w_hi[:, None])
    r0 = t.m0 * (xs - vert - t.y0)
    r1 = t.m1 * (x1 - t.y1)
    value = 0.5 * (np.sum(r0 * r0) + np.sum(r1 * r1))

    lap = diffops.laplacian(d)
    value += 0.5 * float(t.alpha_d @ np.sum(lap * lap, axis=(1, 2, 3)))
    value += t.tikhonov * np.sum(d * d)

    h = None
    if t.hydro and t.rho > 0:
        h = t.dp[:, None, None] * diffops.divergence(d) - w_lo + w_hi
        if t.u_d is not None:
            h = h + t.u_d
        value += 0.5 * t.rho * np.sum(h * h)
    ec = None
    if t.c_anchor is not None and t.rho > 0:
        ec = c - t.c_anchor
        value += 0.5 * t.rho * np.sum(ec * ec)
    elo = ehi = None
    if t.lo_anchor is not None and t.rho > 0:
        elo = w_lo - t.lo_anchor
        value += 0.5 * t.rho * np.sum(elo * elo)
    if t.hi_anchor is not None and t.rho > 0:
        ehi = w_hi - t.hi_anchor
        value += 0.5 * t.rho * np.sum(ehi * ehi)
    if not grad:
        return float(value), None

    g_x = prefilter_coeffs(plan.adjoint(r0)) + r1
    g_c = fwt2(g_x, t.basis)
    g_d = np.stack([np.sum(gx * r0, axis=1), np.sum(gy * r0, axis=1)], axis=1)
    g_d += t.alpha_d[:, None, None, None] * diffops.laplacian(lap)
    g_d += 2.0 * t.tikhonov * d
    g_lo = -half * np.sum(t.g_lo[:, :, None, None] * r0, axis=1)
    g_hi = -half * np.sum(t.g_hi[:, :, None, None] * r0, axis=1)
    if h is not None:
        g_d += t.rho * diffops.divergence_adjoint(t.dp[:, None, None] * h)
        g_lo -= t.rho * h
        g_hi += t.rho * h
    if ec is not None:
        g_c += t.rho * ec
    if elo is not None:
        g_lo += t.rho * elo
    if ehi is not None:
        g_hi += t.rho * ehi
    return float(value), (g_d, g_lo, g_hi, g_c)


# --------------------------------------------------------------------------
# problem assembly


class Problem:
    """Observations, grid and configuration bundled with cached scaled constants."""

    def __init__(self, obs: ObservationSet, grid: PressureGrid, cfg: SolverConfig):
        if obs.K != grid.K or cfg.K != grid.K:
            raise ShapeMismatch("observations, grid and configuration disagree on K")
        self.obs, self.grid, self.cfg = obs, grid, cfg
        self.K = grid.K
        self.shape = obs.shape
        self.p_s = cfg.p_scale(grid)
        self.dp_hat = grid.increments / self.p_s
        self.gamma_hat = cfg.gamma.gamma * self.p_s
        self.y0 = obs.filled(0)
        self.y1 = obs.filled(1)
        self.m0 = obs.mask0[:, None].astype(float)
        self.m1 = obs.mask1[:, None].astype(float)
        rows, cols = self.shape.plane
        self.schedule = cfg.schedule(rows, cols)

    def terms(self, layers, *, hydro=False, u_d=None, c_anchor=None,
              lo_anchor=None, hi_anchor=None) -> LayerTerms:
        ks = np.asarray(layers, dtype=int)
        cfg = self.cfg
        return LayerTerms(
            y0=self.y0[ks], y1=self.y1[ks], m0=self.m0[ks], m1=self.m1[ks],
            g_lo=self.gamma_hat[ks], g_hi=self.gamma_hat[ks + 1],
            dp=self.dp_hat[ks], alpha_d=cfg.alpha_d[ks], tikhonov=cfg.tikhonov,
            rho=cfg.rho, hydro=hydro, u_d=u_d, c_anchor=c_anchor,
            lo_anchor=lo_anchor, hi_anchor=hi_anchor, basis=cfg.basis, dt=cfg.dt,
        )

    def scaled_hydro(self, d: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
        """Hydrostatic residual divided by the pressure scale, per layer."""
        return self.dp_hat[:, None, None] * diffops.divergence(d) - w_hat[:-1] + w_hat[1:]

    def objective(self, state: AMVState, *, soft: bool = False) -> float:
        """Original (non-ADMM) objective; ``soft`` adds rho/2 |h/p_s|^2."""
        cfg = self.cfg
        val = data_term(state, self.obs, cfg.gamma, self.grid, cfg.basis, cfg.dt)
        val += reg_d(state.d, cfg.alpha_d, cfg.tikhonov)
        val += l1_term(state.c, cfg.alpha_x)
        if soft:
            h = self.scaled_hydro(state.d, state.w / self.p_s)
            val += 0.5 * cfg.rho * float(np.sum(h * h))
        return val


MODES = ("joint", "split-G", "split-G~")


def subproblem_objective_and_gradient(problem: Problem, k: int, d_k, w_lo, w_hi, c_k,
                                      duals: DualState, mode: str = "split-G",
                                      hydro: bool = True, w_next=None):
    """Per-layer objective F plus the consensus terms of the chosen mode.

    ``w_lo``/``w_hi`` are the scaled winds at boundaries k and k+1 (the
    split copy in ``"split-G~"`` mode). ``w_next`` supplies the freshly
    updated even-half winds required by ``"split-G~"``; it defaults to
    zeros. In ``"joint"`` mode no wind consensus term is added, so summing
    over all layers gives the joint step-one objective.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if problem.cfg.rho <= 0 and (hydro or mode != "joint"):
        raise NonPositiveRho("constrained modes require rho > 0")
    K = problem.K
    lo_anchor = hi_anchor = None
    if mode != "joint":
        if duals.u_w is None or duals.w_tilde is None:
            raise ValueError("split modes need wind duals")
        if mode == "split-G":
            target = duals.w_tilde - duals.u_w
        else:
            w_next = np.zeros_like(duals.w_tilde) if w_next is None else w_next
            target = w_next + duals.u_w
        if k > 0:
            lo_anchor = target[k][None]
        if k + 1 < K:
            hi_anchor = target[k + 1][None]
    t = problem.terms(
        [k], hydro=hydro, u_d=duals.u_d[k][None],
        c_anchor=(duals.c_tilde[k] - duals.u_c[k])[None],
        lo_anchor=lo_anchor, hi_anchor=hi_anchor,
    )
    value, g = layer_energy(np.asarray(d_k)[None], np.asarray(w_lo)[None],
                            np.asarray(w_hi)[None], np.asarray(c_k)[None], t)
    g_d, g_lo, g_hi, g_c = (a[0] for a in g)
    if k == 0:
        g_lo = np.zeros_like(g_lo)
    if k + 1 == K:
        g_hi = np.zeros_like(g_hi)
    return value, (g_d, g_lo, g_hi, g_c)


class Subproblem:
    """Adapter exposing a block of layers as a flat smooth objective for L-BFGS.

    Displacements are optimized through their wavelet coefficients so that
    the coarse-to-fine schedule can free bands progressively. ``free`` lists
    the wind boundaries (1..K-1) that are variables; all others stay at the
    values in ``w_fixed`` (zero unless a caller pins them elsewhere).
    """

    def __init__(self, problem: Problem, layers, free, terms: LayerTerms, w_fixed=None):
        self.problem = problem
        self.layers = np.asarray(layers, dtype=int)
        self.free = np.asarray(sorted(free), dtype=int)
        self.terms = terms
        rows, cols = problem.shape.plane
        self.plane = (rows, cols)
        B = len(self.layers)
        self.w_full = np.zeros((problem.K + 1, rows, cols)) if w_fixed is None else np.array(w_fixed, dtype=float)
        self.nd = B * 2 * rows * cols
        self.nw = len(self.free) * rows * cols
        self.nc = B * 3 * rows * cols
        self.size = self.nd + self.nw + self.nc

    def pack(self, d, w_full, c) -> np.ndarray:
        a = fwt2(d, self.problem.cfg.basis)
        return np.concatenate([a.ravel(), w_full[self.free].ravel(), c.ravel()])

    def unpack(self, x):
        rows, cols = self.plane
        B = len(self.layers)
        a = x[:self.nd].reshape(B, 2, rows, cols)
        d = iwt2(a, self.problem.cfg.basis)
        w = self.w_full.copy()
        w[self.free] = x[self.nd:self.nd + self.nw].reshape(len(self.free), rows, cols)
        c = x[self.nd + self.nw:].reshape(B, 3, rows, cols)
        return d, w, c

    def __call__(self, x):
        d, w, c = self.unpack(x)
        ks = self.layers
        value, (g_d, g_lo, g_hi, g_c) = layer_energy(d, w[ks], w[ks + 1], c, self.terms)
        g_w = np.zeros_like(w)
        np.add.at(g_w, ks, g_lo)
        np.add.at(g_w, ks + 1, g_hi)
        g_a = fwt2(g_d, self.problem.cfg.basis)
        return value, np.concatenate([g_a.ravel(), g_w[self.free].ravel(), g_c.ravel()])

    def stage_masks(self, schedule: ScaleSchedule | None = None, stages=None) -> list[np.ndarray]:
        """Free-variable masks: displacement bands follow the schedule, winds and c stay free."""
        schedule = schedule or self.problem.schedule
        stages = range(len(schedule)) if stages is None else stages
        rows, cols = self.plane
        B = len(self.layers)
        out = []
        for s in stages:
            band = np.broadcast_to(schedule.mask(s, rows, cols), (B, 2, rows, cols))
            out.append(np.concatenate([band.ravel(), np.ones(self.nw + self.nc, dtype=bool)]))
        return out


def gradient_check(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray,
                   step: float = 1e-5, trials: int = 20, seed: int = 0) -> dict:
    """Compare directional derivatives with central differences along random unit directions.

    Relative error of a probe is ``|fd - an| / max(|fd|, |an|)``; the report
    holds the maximum over probes.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    errors = []
    for _ in range(trials):
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        fp, _ = fun(x + step * v)
        fm, _ = fun(x - step * v)
        fd = (fp - fm) / (2 * step)
        an = float(np.sum(g * v))
        scale = max(abs(fd), abs(an))
        errors.append(0.0 if scale == 0 else abs(fd - an) / scale)
    return {"max_rel_error": max(errors), "errors": errors, "trials": trials, "step": step}
