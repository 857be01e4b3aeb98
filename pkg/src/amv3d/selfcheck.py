"""Quick numerical self-tests: gradients, operator adjoints, wavelet and prox identities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffops
from .energy import Problem, SolverConfig, Subproblem, gradient_check
from .grid import ObservationSet, PhysicsConstants, build_pressure_grid, make_rng
from .spline import WarpPlan
from .wavelet import fwt2, iwt2, soft_threshold


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol)


def _adjoint_gap(apply, adjoint, x, y) -> float:
    lhs = float(np.sum(apply(x) * y))
    rhs = float(np.sum(x * adjoint(y)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def run_checks(seed: int = 0, size: int = 16) -> list[CheckResult]:
    rng = make_rng(seed)
    K = 4
    grid = build_pressure_grid([1000.0, 950.0, 900.0, 800.0, 700.0])
    out = []

    d = rng.standard_normal((K, 2, size, size))
    v = rng.standard_normal((K, size, size))
    out.append(CheckResult("adjoint divergence",
                           _adjoint_gap(diffops.divergence, diffops.divergence_adjoint, d, v), 1e-10))
    u = rng.standard_normal((K, size, size))
    out.append(CheckResult("adjoint laplacian",
                           _adjoint_gap(diffops.laplacian, diffops.laplacian, u, v), 1e-10))
    out.append(CheckResult("adjoint D", _adjoint_gap(lambda a: diffops.apply_D(a, grid),
                                                     lambda b: diffops.apply_D_adjoint(b, grid), d, v), 1e-10))
    wi = rng.standard_normal((K - 1, size, size))
    out.append(CheckResult("adjoint L", _adjoint_gap(diffops.apply_L, diffops.apply_L_adjoint, wi, v), 1e-10))
    plan = WarpPlan(2.0 * d)
    x = rng.standard_normal((K, 3, size, size))
    y = rng.standard_normal((K, 3, size, size))
    out.append(CheckResult("adjoint warp", _adjoint_gap(plan.sample, plan.adjoint, x, y), 1e-10))

    out.append(CheckResult("wavelet reconstruction",
                           float(np.max(np.abs(iwt2(fwt2(x)) - x))), 1e-10))
    out.append(CheckResult("wavelet parseval",
                           abs(np.sum(fwt2(x) ** 2) - np.sum(x ** 2)) / np.sum(x ** 2), 1e-10))

    vals = rng.uniform(-3, 3, 200)
    lams = rng.uniform(0, 2, 200)
    grid_u = np.linspace(-5, 5, 20001)
    worst = 0.0
    for val, lam in zip(vals, lams):
        brute = grid_u[np.argmin(lam * np.abs(grid_u) + 0.5 * (grid_u - val) ** 2)]
        worst = max(worst, abs(brute - soft_threshold(val, lam)))
    out.append(CheckResult("prox soft threshold", worst, 1e-3))

    gamma = PhysicsConstants(rng.standard_normal((K + 1, 3)) * 0.02)
    obs = ObservationSet(rng.standard_normal((K, 3, size, size)), rng.standard_normal((K, 3, size, size)),
                         rng.random((K, size, size)) < 0.7, rng.random((K, size, size)) < 0.7)
    problem = Problem(obs, grid, SolverConfig(alpha_d=0.3, alpha_x=0.1, gamma=gamma))
    terms = problem.terms(range(K), hydro=True, u_d=0.1 * rng.standard_normal((K, size, size)),
                          c_anchor=0.1 * rng.standard_normal((K, 3, size, size)))
    sp = Subproblem(problem, range(K), range(1, K), terms)
    report = gradient_check(sp, 0.2 * rng.standard_normal(sp.size), step=1e-5, trials=20, seed=seed)
    out.append(CheckResult("gradient joint subproblem", report["max_rel_error"], 1e-5))
    return out
