"""Command-line entry point: generate, estimate, evaluate, check, calibrate-gamma.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .admm import AdmmOptions, canonical_variant, run_variant
from .energy import SolverConfig
from .errors import AMVError, DivergenceDetected, InvalidSpec, LineSearchFailure, NonFiniteObjective
from .grid import PhysicsConstants
from .lbfgs import LbfgsOptions
from .selfcheck import run_checks
from .synth import EvalReport, SyntheticSpec, calibrate_gamma, make_dataset
from .wavelet import WaveletBasis, iwt2

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_SELFTEST = 0, 2, 3, 4

CONFIG_DEFAULTS = {
    "alpha_d": 1.0,
    "alpha_x": 0.05,
    "rho": 1.0,
    "tikhonov": 1e-8,
    "pressure_scale": None,
    "n_stages": None,
    "inner_max_iter": 50,
    "inner_g_rtol": 1e-6,
    "max_outer": 50,
    "eps_pri": 1e-3,
    "eps_dual": 1e-3,
    "mode": "joint",
    "workers": 1,
    "init_from_y1": False,
    "wavelet": "coif5",
}


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpec(f"cannot read {path}: {exc}") from exc


def build_config(data: dict, gamma, variant: str) -> tuple[SolverConfig, AdmmOptions]:
    unknown = set(data) - set(CONFIG_DEFAULTS)
    if unknown:
        raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
    c = {**CONFIG_DEFAULTS, **data}
    cfg = SolverConfig(
        alpha_d=c["alpha_d"], alpha_x=c["alpha_x"], gamma=gamma, rho=c["rho"],
        tikhonov=c["tikhonov"], pressure_scale=c["pressure_scale"],
        basis=WaveletBasis(c["wavelet"]), n_stages=c["n_stages"],
        lbfgs=LbfgsOptions(max_iter=c["inner_max_iter"], g_rtol=c["inner_g_rtol"]),
    )
    opts = AdmmOptions(rho=c["rho"], max_outer=c["max_outer"], eps_pri=c["eps_pri"],
                       eps_dual=c["eps_dual"], mode=c["mode"], variant=variant,
                       workers=c["workers"], init_from_y1=c["init_from_y1"])
    return cfg, opts


def cmd_generate(args) -> int:
    spec = SyntheticSpec.from_dict(load_json(args.spec)) if args.spec else SyntheticSpec()
    ds = make_dataset(spec)
    io.write_dataset(args.out, ds)
    print(f"wrote K={ds.grid.K} {spec.rows}x{spec.cols} dataset to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    files = io.DatasetFiles(args.data)
    variant = canonical_variant(args.variant)
    gamma = files.gamma
    if args.gamma:
        gamma = PhysicsConstants(np.asarray(load_json(args.gamma)["gamma"], dtype=float))
    cfg, opts = build_config(load_json(args.config) if args.config else {}, gamma, variant)
    state, trace = run_variant(files.observations(), files.grid, cfg, opts)
    io.write_estimate(args.out, state, iwt2(state.c, cfg.basis), variant, trace)
    last = trace.records[-1] if trace.records else None
    print(f"{variant}: {trace.iterations} outer iterations, converged={trace.converged}"
          + (f", objective={_fmt(last.objective)}" if last else ""))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    files = io.DatasetFiles(args.data)
    truth = files.truth()
    if truth is None:
        raise InvalidSpec("dataset carries no ground truth")
    d, w, variant = io.read_estimate(args.estimate)
    report = EvalReport()
    report.add(variant, d, w, truth, files.mask("mask0"), files.mask("mask1"))
    report.to_csv(args.out)
    print(f"{variant}: mean EPE {_fmt(report.mean_epe(variant))}, "
          f"mean VRMSE {_fmt(report.mean_vrmse(variant))}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} {_fmt(r.value)} (tol {r.tol:g})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def cmd_calibrate(args) -> int:
    files = io.DatasetFiles(args.data)
    truth = files.truth()
    if truth is None:
        raise InvalidSpec("calibration needs ground-truth winds and displacements")
    if files.has("truth_x0") and files.has("truth_x1"):
        x0, x1, masks = files.field("truth_x0"), files.field("truth_x1"), None
    else:
        obs = files.observations()
        x0, x1, masks = obs.filled(0), obs.filled(1), obs.joint_mask
    gamma = calibrate_gamma(x0, x1, truth.d, truth.w, files.grid, masks)
    Path(args.out).write_text(json.dumps({"gamma": [[float(_fmt(v)) for v in row] for row in gamma.gamma]},
                                         indent=2))
    print(f"wrote gamma for {gamma.K + 1} boundaries to {args.out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amv3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", help="run one variant on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True,
                   choices=["2d", "2d-inc", "3d", "3d-hydro-soft", "3d-hydro-hard"])
    p.add_argument("--config", help="JSON solver configuration")
    p.add_argument("--gamma", help="JSON file from calibrate-gamma overriding the dataset's gamma")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="per-layer EPE/VRMSE of an estimate")
    p.add_argument("--data", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check", help="numerical self-tests")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("calibrate-gamma", help="least-squares gamma from ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (DivergenceDetected, NonFiniteObjective, LineSearchFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (AMVError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
