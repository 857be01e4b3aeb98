"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import time

import numpy as np
import pytest

from amv3d import diffops
from amv3d.admm import AdmmOptions, run_variant
from amv3d.energy import (DualState, Problem, SolverConfig, Subproblem, data_term, gradient_check,
                          subproblem_objective_and_gradient)
from amv3d.grid import ObservationSet, build_pressure_grid
from amv3d.lbfgs import LbfgsOptions
from amv3d.synth import SyntheticSpec, epe, generate_truth, make_dataset, run_benchmark, vrmse
from amv3d.wavelet import WaveletBasis, fwt2, iwt2, soft_threshold

pytestmark = pytest.mark.acceptance


def _cfg(ds, **kw):
    return SolverConfig(alpha_d=1.0, alpha_x=0.05, gamma=ds.gamma, **kw)


def _random_grid(rng, K):
    dp = rng.uniform(20.0, 150.0, K)
    return build_pressure_grid(1000.0 - np.concatenate([[0.0], np.cumsum(dp)]))


def test_01_model_self_consistency(verdict):
    t0 = time.perf_counter()
    spec = SyntheticSpec(rows=64, cols=64, seed=0)
    truth, x0, x1 = generate_truth(spec)
    full = np.ones((4, 64, 64), bool)
    obs = ObservationSet(x0.values, x1.values, full, full)
    ds = make_dataset(spec)
    f = data_term(truth, obs, ds.gamma, spec.grid)
    h = diffops.hydrostatic_residual(truth, spec.grid)
    rel = np.linalg.norm(h) / np.linalg.norm(diffops.apply_D(truth.d, spec.grid))
    dt = time.perf_counter() - t0
    verdict(1, "model self-consistency", f < 1e-12 and rel < 1e-10 and dt < 5,
            f"data term {f:.2e} (<1e-12), hydro residual {rel:.2e} (<1e-10), {dt:.2f} s (<5 s)")


def test_02_gradient_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    ds = make_dataset(SyntheticSpec(rows=16, cols=16, seed=2, mask_style="random", coverage=0.7))
    P = Problem(ds.obs, ds.grid, _cfg(ds, rho=1.5))
    K, n = 4, 16
    st = ds.truth.copy()
    st.d += 0.1 * rng.standard_normal(st.d.shape)
    st.w[1:-1] += 5.0 * rng.standard_normal(st.w[1:-1].shape)
    st.c += 0.1 * rng.standard_normal(st.c.shape)
    w = st.w / P.p_s
    duals = DualState.zeros(K, (n, n), split=True)
    for name in ("u_d", "u_c", "c_tilde", "u_w", "w_tilde"):
        setattr(duals, name, 0.1 * rng.standard_normal(getattr(duals, name).shape))
    errors = {}
    terms = P.terms(range(K), hydro=True, u_d=duals.u_d, c_anchor=duals.c_tilde - duals.u_c)
    sp = Subproblem(P, range(K), range(1, K), terms)
    errors["joint"] = gradient_check(sp, sp.pack(st.d, w, st.c), trials=20, seed=0)["max_rel_error"]
    w_next = 0.1 * rng.standard_normal(w.shape)
    sizes = [2 * n * n, n * n, n * n, 3 * n * n]
    cuts = np.cumsum(sizes)[:-1]
    for mode in ("split-G", "split-G~"):
        for k in range(K):
            keep = np.concatenate([np.full(s, (i != 1 or k > 0) and (i != 2 or k + 1 < K))
                                   for i, s in enumerate(sizes)])

            def fun(z, k=k, mode=mode, keep=keep):
                x = np.zeros(keep.size)
                x[keep] = z
                d, lo, hi, c = np.split(x, cuts)
                v, g = subproblem_objective_and_gradient(P, k, d.reshape(2, n, n), lo.reshape(n, n),
                                                         hi.reshape(n, n), c.reshape(3, n, n),
                                                         duals, mode, w_next=w_next)
                return v, np.concatenate([a.ravel() for a in g])[keep]
            x = np.concatenate([st.d[k].ravel(), w[k].ravel(), w[k + 1].ravel(), st.c[k].ravel()])[keep]
            errors[f"{mode}[{k}]"] = gradient_check(fun, x, trials=20, seed=k)["max_rel_error"]
    worst = max(errors, key=errors.get)
    dt = time.perf_counter() - t0
    verdict(2, "gradient correctness", errors[worst] < 1e-5 and dt < 60,
            f"worst {worst} {errors[worst]:.2e} over {len(errors)} objectives (<1e-5), {dt:.1f} s (<60 s)")


def test_03_operator_adjoints(verdict):
    rng = np.random.default_rng(3)
    worst = {}

    def gap(ax, y, x, aty):
        lhs, rhs = np.sum(ax * y), np.sum(x * aty)
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs))

    for _ in range(100):
        K = int(rng.integers(2, 7))
        r, c = (int(v) for v in rng.choice([8, 16, 32], 2))
        grid = _random_grid(rng, K)
        d = rng.standard_normal((K, 2, r, c))
        u, v = rng.standard_normal((2, K, r, c))
        wi = rng.standard_normal((K - 1, r, c))
        cases = {
            "divergence": gap(diffops.divergence(d), v, d, diffops.divergence_adjoint(v)),
            "laplacian": gap(diffops.laplacian(u), v, u, diffops.laplacian(v)),
            "D": gap(diffops.apply_D(d, grid), v, d, diffops.apply_D_adjoint(v, grid)),
            "L": gap(diffops.apply_L(wi), v, wi, diffops.apply_L_adjoint(v)),
        }
        for name, g in cases.items():
            worst[name] = max(worst.get(name, 0.0), g)
    top = max(worst.values())
    verdict(3, "operator adjoints", top < 1e-10,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " over 100 trials (<1e-10)")


def test_04_prox_oracle(verdict):
    rng = np.random.default_rng(4)
    vs = rng.uniform(-5, 5, 1000)
    lams = rng.uniform(0, 3, 1000)
    u = np.linspace(-6, 6, 120_001)
    worst = 0.0
    for v, lam in zip(vs, lams):
        brute = u[np.argmin(lam * np.abs(u) + 0.5 * (u - v) ** 2)]
        worst = max(worst, abs(brute - soft_threshold(v, lam)))
    verdict(4, "prox oracle", worst < 1e-3, f"max deviation {worst:.1e} over 1000 pairs (<1e-3)")


def test_05_wavelet_orthonormality(verdict):
    rng = np.random.default_rng(5)
    basis = WaveletBasis()
    worst_pr = worst_pa = 0.0
    shapes = [(n, n) for n in (16, 32, 64, 128, 256)] + [(16, 256), (256, 32)]
    for shape in shapes:
        x = rng.standard_normal((2,) + shape)
        c = fwt2(x, basis)
        worst_pr = max(worst_pr, np.max(np.abs(iwt2(c, basis) - x)))
        worst_pa = max(worst_pa, abs(np.sum(c * c) - np.sum(x * x)) / np.sum(x * x))
    verdict(5, "wavelet orthonormality", worst_pr < 1e-10 and worst_pa < 1e-10,
            f"reconstruction {worst_pr:.1e}, Parseval {worst_pa:.1e} for sizes 16-256 (<1e-10)")


def test_06_vertical_solve_oracle(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for K in range(2, 7):
        grid = _random_grid(rng, K)
        d = rng.standard_normal((K, 2, 16, 16))
        w = diffops.solve_vertical(d, grid)
        L = np.zeros((K, K - 1))
        for k in range(K):
            if k >= 1:
                L[k, k - 1] = 1.0
            if k <= K - 2:
                L[k, k] = -1.0
        rhs = grid.increments[:, None, None] * diffops.divergence(d)
        dense = np.einsum("ij,jyx->iyx", np.linalg.pinv(L), rhs)
        worst = max(worst, np.max(np.abs(w - dense)) / max(1.0, np.max(np.abs(dense))))
    verdict(6, "vertical solve oracle", worst < 1e-9, f"max relative deviation {worst:.1e}, K=2..6 (<1e-9)")


def test_07_constraint_enforcement(verdict):
    t0 = time.perf_counter()
    ds = make_dataset(SyntheticSpec(rows=64, cols=64, seed=0, sigma_obs=0.05))
    _, trace = run_variant(ds.obs, ds.grid, _cfg(ds), AdmmOptions(variant="3d_hydro_hard", rho=3.0, max_outer=50))
    r = trace.records[-1].r_hydro
    dt = time.perf_counter() - t0
    verdict(7, "constraint enforcement", r < 1e-3 and trace.iterations <= 50 and dt < 600,
            f"relative hydro residual {r:.2e} after {trace.iterations} iterations (<1e-3 within 50), "
            f"{dt:.0f} s (<600 s)")


def test_08_benchmark_ordering(verdict):
    variants = ["2d", "3d", "3d_hydro_soft", "3d_hydro_hard"]
    epes = {v: [] for v in variants}
    vrm = {v: [] for v in variants}
    for seed in range(5):
        ds = make_dataset(SyntheticSpec(rows=32, cols=32, seed=seed, mask_style="swath"))
        rep = run_benchmark(ds, variants, _cfg(ds), AdmmOptions(init_from_y1=True))
        for v in variants:
            epes[v].append(rep.mean_epe(v))
            vrm[v].append(rep.mean_vrmse(v))
    e = {v: float(np.mean(epes[v])) for v in variants}
    r = {v: float(np.mean(vrm[v])) for v in variants}
    ok = (e["3d_hydro_hard"] <= e["2d"] and e["3d_hydro_soft"] <= 1.05 * e["3d_hydro_hard"]
          and r["3d_hydro_soft"] < r["3d"] and r["3d_hydro_hard"] < r["3d"])
    verdict(8, "benchmark ordering", ok,
            "EPE " + ", ".join(f"{v} {e[v]:.3f}" for v in variants)
            + "; VRMSE " + ", ".join(f"{v} {r[v]:.3f}" for v in variants[1:]))


def test_09_split_joint_consistency(verdict):
    ds = make_dataset(SyntheticSpec(rows=32, cols=32, seed=3))
    out = {}
    for mode in ("joint", "split"):
        _, trace = run_variant(ds.obs, ds.grid, _cfg(ds),
                               AdmmOptions(variant="3d", mode=mode, max_outer=300, eps_pri=1e-4,
                                           eps_dual=1e-4, init_from_y1=True))
        out[mode] = (trace.records[-1].objective, trace.iterations, trace.converged)
    fj, fs = out["joint"][0], out["split"][0]
    gap = abs(fj - fs) / min(fj, fs)
    ok = gap < 0.01 and out["joint"][2] and out["split"][2]
    verdict(9, "split/joint consistency", ok,
            f"joint {fj:.6g} ({out['joint'][1]} it), split {fs:.6g} ({out['split'][1]} it), "
            f"gap {100 * gap:.3f}% (<1%)")


def test_10_complexity_scaling(verdict):
    medians = []
    for n in (64, 128, 256):
        ds = make_dataset(SyntheticSpec(rows=n, cols=n, seed=0))
        cfg = _cfg(ds, lbfgs=LbfgsOptions(max_iter=10, g_rtol=0.0, g_tol=0.0))
        _, trace = run_variant(ds.obs, ds.grid, cfg,
                               AdmmOptions(variant="3d_hydro_hard", max_outer=5, eps_pri=1e-12,
                                           eps_dual=1e-12, init_from_y1=True))
        # the first outer iteration runs the whole coarse-to-fine schedule
        medians.append(float(np.median(trace.column("wall_time")[1:])))
    ratios = [medians[1] / medians[0], medians[2] / medians[1]]
    verdict(10, "complexity scaling", all(3.0 <= q <= 6.5 for q in ratios),
            f"median s/iteration {medians[0]:.3f}, {medians[1]:.3f}, {medians[2]:.3f}; "
            f"ratios {ratios[0]:.2f}, {ratios[1]:.2f} (within [3, 6.5])")


def test_11_metric_formulas(verdict):
    rng = np.random.default_rng(11)
    d = rng.standard_normal((4, 2, 16, 16))
    w = rng.standard_normal((5, 16, 16))
    w[[0, -1]] = 0.0
    m0, m1 = rng.random((2, 4, 16, 16)) < 0.6
    e = [epe(d, d, m0, m1), epe(np.zeros_like(d), d, m0, m1), epe(-d, d, m0, m1), epe(2 * d, d, m0, m1)]
    v = [vrmse(w, w, m0, m1)[1:-1], vrmse(np.zeros_like(w), w, m0, m1)[1:-1], vrmse(-w, w, m0, m1)[1:-1]]
    expect_e, expect_v = (0.0, 1.0, 2.0, 1.0), (0.0, 1.0, 2.0)
    dev = max(max(np.max(np.abs(a - b)) for a, b in zip(e, expect_e)),
              max(np.max(np.abs(a - b)) for a, b in zip(v, expect_v)))
    verdict(11, "metric formulas", dev <= 1e-15,
            f"epe (exact, zero, negated, doubled) and vrmse (exact, zero, negated) deviate by {dev:.1e}")
