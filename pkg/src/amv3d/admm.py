"""Joint and even/odd split ADMM drivers and the five benchmark variants.

Variant/constraint compatibility:

=====================  ===========
variant                constraint
=====================  ===========
``2d``                 none
``2d_incompressible``  soft
``3d``                 none
``3d_hydro_soft``      soft
``3d_hydro_hard``      hard
=====================  ===========
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffops import divergence
from .energy import DualState, Problem, SolverConfig, Subproblem, residual
from .errors import DivergenceDetected, InvalidSpec, NonPositiveRho, OddLayerCount
from .grid import AMVState, ObservationSet, PressureGrid
from .lbfgs import multiscale_minimize
from .wavelet import fwt2, prox_step

log = logging.getLogger(__name__)

VARIANTS = {
    "2d": "none",
    "2d_incompressible": "soft",
    "3d": "none",
    "3d_hydro_soft": "soft",
    "3d_hydro_hard": "hard",
}
ALIASES = {"2d-inc": "2d_incompressible", "3d-hydro-soft": "3d_hydro_soft",
           "3d-hydro-hard": "3d_hydro_hard"}
_TINY = 1e-300


def canonical_variant(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in VARIANTS:
        raise InvalidSpec(f"unknown variant {name!r}")
    return name


@dataclass
class AdmmOptions:
    rho: float = 1.0
    max_outer: int = 50
    eps_pri: float = 1e-3
    eps_dual: float = 1e-3
    mode: str = "joint"
    constraint: str | None = None
    variant: str = "3d_hydro_hard"
    workers: int = 1
    pad_odd: bool = False
    init_from_y1: bool = False
    divergence_factor: float = 1e6

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.constraint is None:
            self.constraint = VARIANTS[self.variant]
        if self.constraint != VARIANTS[self.variant]:
            raise InvalidSpec(f"variant {self.variant} requires constraint "
                              f"{VARIANTS[self.variant]!r}, got {self.constraint!r}")
        if self.mode not in ("joint", "split"):
            raise InvalidSpec(f"mode must be joint or split, got {self.mode!r}")
        if not (self.eps_pri > 0 and self.eps_dual > 0):
            raise InvalidSpec("tolerances must be positive")
        if self.max_outer < 0:
            raise InvalidSpec("max_outer must be nonnegative")
        if self.rho <= 0:
            raise NonPositiveRho(f"rho must be positive, got {self.rho}")

    @property
    def winds_free(self) -> bool:
        return self.variant.startswith("3d")

    @property
    def hydro(self) -> bool:
        return self.constraint != "none"


@dataclass
class AdmmRecord:
    iteration: int
    objective: float
    r_hydro: float
    r_c: float
    r_w: float
    s_d: float
    s_w: float
    s_c: float
    inner_iterations: int
    wall_time: float


@dataclass
class AdmmTrace:
    records: list[AdmmRecord] = field(default_factory=list)
    converged: bool = False
    initial_objective: float = float("nan")
    duals: DualState | None = None
    consensus_gap: float = 0.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        names = list(AdmmRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for rec in self.records:
                row = asdict(rec)
                writer.writerow([f"{row[n]:.9g}" if isinstance(row[n], float) else row[n] for n in names])


def _rel(num: float, *scales: float) -> float:
    s = max(scales)
    return 0.0 if num == 0.0 else num / max(s, _TINY)


def _norm(a) -> float:
    return float(np.linalg.norm(np.ravel(a)))


class _Run:
    """Mutable iterate shared by both drivers (winds in scaled units)."""

    def __init__(self, obs: ObservationSet, grid: PressureGrid, cfg: SolverConfig,
                 opts: AdmmOptions, init: AMVState | None):
        self.problem = Problem(obs, grid, replace(cfg, rho=opts.rho))
        self.opts = opts
        K = grid.K
        rows, cols = obs.shape.plane
        self.K = K
        split = opts.mode == "split"
        if init is not None:
            self.d = init.d.copy()
            self.w = init.w / self.problem.p_s
            self.c = init.c.copy()
        else:
            self.d = np.zeros((K, 2, rows, cols))
            self.w = np.zeros((K + 1, rows, cols))
            self.c = self._y1_coeffs() if opts.init_from_y1 else np.zeros((K, 3, rows, cols))
        if not opts.winds_free:
            self.w[:] = 0.0
        self.duals = DualState.zeros(K, (rows, cols), split=split)
        self.duals.c_tilde = self.c.copy()
        if split:
            self.duals.w_tilde = self.w.copy()

    def _y1_coeffs(self) -> np.ndarray:
        obs = self.problem.obs
        y1 = obs.filled(1).copy()
        m = obs.mask1[:, None]
        counts = np.maximum(m.sum(axis=(-2, -1), keepdims=True), 1)
        means = y1.sum(axis=(-2, -1), keepdims=True) / counts
        return fwt2(np.where(m, y1, means), self.problem.cfg.basis)

    @property
    def free_boundaries(self) -> list[int]:
        return list(range(1, self.K)) if self.opts.winds_free else []

    def hydro_residual(self, w=None) -> tuple[float, float]:
        """Relative hydrostatic residual and its absolute norm (scaled units)."""
        p = self.problem
        w = self.w if w is None else w
        Dd = p.dp_hat[:, None, None] * divergence(self.d)
        Lw = w[:-1] - w[1:]
        h = _norm(Dd - Lw)
        return _rel(h, _norm(Dd), _norm(Lw)), h

    def state(self) -> AMVState:
        return AMVState(self.d.copy(), self.w * self.problem.p_s, self.duals.c_tilde.copy())

    def objective(self) -> float:
        st = AMVState(self.d, self.w * self.problem.p_s, self.c)
        return self.problem.objective(st, soft=self.opts.constraint == "soft")

    def u_d_for_solve(self) -> np.ndarray | None:
        if not self.opts.hydro:
            return None
        return self.duals.u_d

    def prox_and_c_dual(self) -> float:
        cfg = self.problem.cfg
        old = self.duals.c_tilde
        self.duals.c_tilde = prox_step(self.c + self.duals.u_c, cfg.alpha_x, cfg.rho)
        self.duals.u_c = self.duals.u_c + (self.c - self.duals.c_tilde)
        return _rel(_norm(self.duals.c_tilde - old), _norm(self.duals.c_tilde), _norm(old))

    def c_residual(self) -> float:
        ct = self.duals.c_tilde
        return _rel(_norm(self.c - ct), _norm(self.c), _norm(ct))


def _solve(problem: Problem, layers, free, terms, d, w, c, first: bool):
    sp = Subproblem(problem, layers, free, terms, w_fixed=w)
    x0 = sp.pack(d, w, c)
    schedule = problem.schedule
    stages = None if first else [schedule.final]
    res = multiscale_minimize(sp, x0, sp.stage_masks(schedule, stages), problem.cfg.lbfgs)
    dn, wn, cn = sp.unpack(res.x)
    return dn, wn, cn, res.iterations


def _precheck(run: _Run) -> bool:
    """True when the starting point is already feasible and fits the data."""
    opts = run.opts
    p = run.problem
    if opts.constraint == "hard" and run.hydro_residual()[0] > opts.eps_pri:
        return False
    if run.c_residual() > opts.eps_pri:
        return False
    st = AMVState(run.d, run.w * p.p_s, run.c)
    r = residual(st, p.obs, p.cfg.gamma, p.grid, p.cfg.basis, p.cfg.dt)
    scale = max(_norm(p.y0), _norm(p.y1))
    return _rel(_norm(r), scale) <= opts.eps_dual


def _check_divergence(run: _Run, trace: AdmmTrace, value: float) -> None:
    f0 = trace.initial_objective
    if not np.isfinite(value) or (f0 > 0 and value > run.opts.divergence_factor * f0):
        raise DivergenceDetected(f"objective {value:.3e} exceeds {run.opts.divergence_factor:g}x "
                                 f"its initial value {f0:.3e}")


def run_joint_admm(obs: ObservationSet, grid: PressureGrid, cfg: SolverConfig,
                   opts: AdmmOptions | None = None, init: AMVState | None = None):
    """Joint ADMM: full-space multiscale solve, l1 prox, dual updates.

    Returns ``(state, trace)``; the state's coefficients are the sparse copy.
    """
    opts = opts or AdmmOptions()
    if opts.mode != "joint":
        raise InvalidSpec("run_joint_admm needs mode='joint'")
    run = _Run(obs, grid, cfg, opts, init)
    p = run.problem
    K = run.K
    trace = AdmmTrace(initial_objective=run.objective())
    if init is not None and _precheck(run):
        trace.converged = True
        trace.duals = run.duals
        return run.state(), trace
    layers = list(range(K))
    for it in range(opts.max_outer):
        t0 = time.perf_counter()
        d_old, w_old = run.d.copy(), run.w.copy()
        du = run.duals
        terms = p.terms(layers, hydro=opts.hydro, u_d=run.u_d_for_solve(),
                        c_anchor=du.c_tilde - du.u_c)
        run.d, run.w, run.c, inner = _solve(p, layers, run.free_boundaries, terms,
                                            run.d, run.w, run.c, first=it == 0)
        s_c = run.prox_and_c_dual()
        if opts.constraint == "hard":
            du.u_d = du.u_d + p.scaled_hydro(run.d, run.w)
        r_h, _ = run.hydro_residual()
        value = run.objective()
        _check_divergence(run, trace, value)
        rec = AdmmRecord(it, value, r_h, run.c_residual(), 0.0,
                         _rel(_norm(run.d - d_old), _norm(run.d)),
                         _rel(_norm(run.w - w_old), _norm(run.w)), s_c, inner,
                         time.perf_counter() - t0)
        trace.records.append(rec)
        log.debug("joint ADMM %d: %s", it, rec)
        if _stop(rec, opts):
            trace.converged = True
            break
    trace.duals = run.duals
    return run.state(), trace


def _stop(rec: AdmmRecord, opts: AdmmOptions) -> bool:
    primal = [rec.r_c, rec.r_w]
    if opts.constraint == "hard":
        primal.append(rec.r_hydro)
    return max(primal) <= opts.eps_pri and max(rec.s_d, rec.s_w, rec.s_c) <= opts.eps_dual


def half_step_layers(K: int, parity: int) -> list[int]:
    return list(range(parity, K, 2))


def run_split_admm(obs: ObservationSet, grid: PressureGrid, cfg: SolverConfig,
                   opts: AdmmOptions | None = None, init: AMVState | None = None,
                   order=None):
    """Even/odd split ADMM; each half-step solves its layers independently.

    ``order`` optionally permutes the submission order of the subproblems
    within a half-step (results do not depend on it).
    """
    opts = opts or AdmmOptions(mode="split")
    if opts.mode != "split":
        raise InvalidSpec("run_split_admm needs mode='split'")
    K = grid.K
    if K % 2 and not opts.pad_odd:
        raise OddLayerCount(f"split ADMM needs an even layer count, got K={K}")
    run = _Run(obs, grid, cfg, opts, init)
    p = run.problem
    du = run.duals
    trace = AdmmTrace(initial_objective=run.objective())
    if init is not None and _precheck(run):
        trace.converged = True
        trace.duals = du
        return run.state(), trace
    free_all = set(run.free_boundaries)
    pool = ThreadPoolExecutor(max_workers=max(1, opts.workers)) if opts.workers > 1 else None
    try:
        for it in range(opts.max_outer):
            t0 = time.perf_counter()
            d_old, w_old, wt_old = run.d.copy(), run.w.copy(), du.w_tilde.copy()
            first = it == 0
            inner_total = 0
            # even half: primary winds, pulled toward w_tilde - u_w
            target_even = du.w_tilde - du.u_w
            # odd half: split copies, pulled toward the fresh w + u_w
            for parity in (0, 1):
                layers = half_step_layers(K, parity)
                w_src = run.w if parity == 0 else du.w_tilde
                if parity == 1:
                    target = run.w + du.u_w
                else:
                    target = target_even
                jobs = []
                for k in layers:
                    free = [b for b in (k, k + 1) if b in free_all]
                    terms = p.terms(
                        [k], hydro=opts.hydro,
                        u_d=None if run.u_d_for_solve() is None else du.u_d[k][None],
                        c_anchor=(du.c_tilde[k] - du.u_c[k])[None],
                        lo_anchor=target[k][None] if k in free_all else None,
                        hi_anchor=target[k + 1][None] if k + 1 in free_all else None,
                    )
                    jobs.append((k, free, terms))
                if order is not None:
                    jobs = [jobs[i] for i in order(len(jobs))]

                def task(job, w_src=w_src):
                    k, free, terms = job
                    return k, free, _solve(p, [k], free, terms, run.d[k][None], w_src,
                                           run.c[k][None], first)

                results = list(pool.map(task, jobs)) if pool else [task(j) for j in jobs]
                w_dst = run.w if parity == 0 else du.w_tilde
                for k, free, (dn, wn, cn, inner) in sorted(results, key=lambda r: r[0]):
                    run.d[k] = dn[0]
                    run.c[k] = cn[0]
                    for b in free:
                        w_dst[b] = wn[b]
                    inner_total += inner
            s_c = run.prox_and_c_dual()
            if opts.constraint == "hard":
                even = half_step_layers(K, 0)
                odd = half_step_layers(K, 1)
                h_w = p.scaled_hydro(run.d, run.w)
                h_wt = p.scaled_hydro(run.d, du.w_tilde)
                du.u_d[even] += h_w[even]
                du.u_d[odd] += h_wt[odd]
            gap = run.w - du.w_tilde
            du.u_w = du.u_w + gap
            r_h, _ = run.hydro_residual()
            value = run.objective()
            _check_divergence(run, trace, value)
            wn = _norm(run.w)
            rec = AdmmRecord(it, value, r_h, run.c_residual(),
                             _rel(_norm(gap), wn, _norm(du.w_tilde)),
                             _rel(_norm(run.d - d_old), _norm(run.d)),
                             max(_rel(_norm(run.w - w_old), wn),
                                 _rel(_norm(du.w_tilde - wt_old), _norm(du.w_tilde))),
                             s_c, inner_total, time.perf_counter() - t0)
            trace.records.append(rec)
            log.debug("split ADMM %d: %s", it, rec)
            if _stop(rec, opts):
                trace.converged = True
                break
    finally:
        if pool:
            pool.shutdown()
    trace.duals = du
    trace.consensus_gap = float(np.max(np.abs(run.w - du.w_tilde))) * p.p_s
    return run.state(), trace


def run_variant(obs: ObservationSet, grid: PressureGrid, cfg: SolverConfig,
                opts: AdmmOptions | None = None, init: AMVState | None = None):
    """Dispatch to the joint or split driver according to ``opts.mode``."""
    opts = opts or AdmmOptions()
    if opts.mode == "split":
        return run_split_admm(obs, grid, cfg, opts, init)
    return run_joint_admm(obs, grid, cfg, opts, init)
