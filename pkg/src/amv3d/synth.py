"""Synthetic ground truth, gamma calibration, pressure averaging and error metrics."""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import diffops
from .errors import CoverageGap, InvalidSpec, ShapeMismatch, SingularFit, ZeroDenominator
from .grid import (AMVState, GridShape, ImageStack, ObservationSet, PhysicsConstants, PressureGrid,
                   build_pressure_grid, make_rng, synthesize_observations)
from .spline import WarpPlan, prefilter_coeffs
from .wavelet import WaveletBasis, fwt2

DEFAULT_LEVELS = (1000.0, 950.0, 900.0, 800.0, 700.0)
MASK_STYLES = ("full", "swath", "random")


@dataclass
class SyntheticSpec:
    rows: int = 64
    cols: int = 64
    levels: Sequence[float] = DEFAULT_LEVELS
    slope: float = -5.0 / 3.0     # decay exponent of displacement energy per octave of scale
    amplitude: float = 1.0        # RMS displacement in pixels
    divergent_fraction: float = 0.5
    balance: bool = True
    image_slope: float = -3.0
    image_contrast: float = 0.5
    mask_style: str = "full"
    swath_width: int = 11
    swath_period: int = 20
    coverage: float = 0.55
    sigma_obs: float = 0.05
    gamma_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.levels = tuple(float(v) for v in self.levels)
        if self.amplitude < 0:
            raise InvalidSpec("amplitude must be nonnegative")
        if not 0.0 <= self.divergent_fraction <= 1.0:
            raise InvalidSpec("divergent_fraction must lie in [0, 1]")
        if self.mask_style not in MASK_STYLES:
            raise InvalidSpec(f"mask_style must be one of {MASK_STYLES}")
        if self.swath_width <= 0 or self.swath_period <= 0 or self.swath_width > self.swath_period:
            raise InvalidSpec("swath width and period must be positive with width <= period")
        if not 0.0 < self.coverage <= 1.0:
            raise InvalidSpec("coverage must lie in (0, 1]")
        if self.sigma_obs < 0:
            raise InvalidSpec("sigma_obs must be nonnegative")
        try:
            GridShape(self.rows, self.cols)
            build_pressure_grid(self.levels)
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from exc

    @property
    def grid(self) -> PressureGrid:
        return build_pressure_grid(self.levels)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InvalidSpec(f"unknown spec keys: {sorted(extra)}")
        return cls(**data)


def default_gamma(grid: PressureGrid, seed: int, scale: float = 1.0) -> PhysicsConstants:
    """Signed O(1) constants per boundary and channel, scaled by the mean slab thickness."""
    rng = make_rng(seed + 7919)
    mag = rng.uniform(0.5, 1.5, size=(grid.K + 1, 3))
    sign = rng.choice([-1.0, 1.0], size=(grid.K + 1, 3))
    return PhysicsConstants(sign * mag * scale / float(np.mean(grid.increments)))


def power_law_field(rng: np.random.Generator, shape, exponent: float, count: int = 1) -> np.ndarray:
    """Zero-mean periodic Gaussian fields whose amplitude spectrum decays as |k|^exponent."""
    rows, cols = shape
    ky = np.fft.fftfreq(rows)[:, None]
    kx = np.fft.rfftfreq(cols)[None, :]
    kk = np.sqrt(kx * kx + ky * ky)
    amp = np.zeros_like(kk)
    amp[kk > 0] = kk[kk > 0] ** exponent
    noise = rng.standard_normal((count, rows, cols))
    out = np.fft.irfft2(np.fft.rfft2(noise) * amp, s=(rows, cols))
    out -= out.mean(axis=(-2, -1), keepdims=True)
    std = out.std(axis=(-2, -1), keepdims=True)
    return out / np.where(std > 0, std, 1.0)


def _displacements(spec: SyntheticSpec, grid: PressureGrid, rng) -> np.ndarray:
    K = grid.K
    shape = (spec.rows, spec.cols)
    # octave energy ~ k^slope means |u_hat| ~ k^(slope/2 - 1); potentials are one power smoother
    expo = spec.slope / 2.0 - 2.0
    psi = power_law_field(rng, shape, expo, K)
    phi = power_law_field(rng, shape, expo, K)
    if spec.balance:
        dp = grid.increments[:, None, None]
        phi = phi - np.sum(dp * phi, axis=0) / np.sum(dp)
    rot = diffops.curl_of_stream(psi)
    div = diffops.gradient(phi)

    def unit(v):
        rms = np.sqrt(np.mean(v * v))
        return v / rms if rms > 0 else v

    f = spec.divergent_fraction
    d = np.sqrt(1.0 - f) * unit(rot) + np.sqrt(f) * unit(div)
    rms = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    return d * (spec.amplitude / rms) if rms > 0 else d * 0.0


def _images(spec: SyntheticSpec, K: int, rng) -> np.ndarray:
    z = power_law_field(rng, (spec.rows, spec.cols), spec.image_slope / 2.0 - 0.5, 3 * K)
    x = np.exp(spec.image_contrast * z)
    x /= x.std(axis=(-2, -1), keepdims=True)
    return x.reshape(K, 3, spec.rows, spec.cols)


def warp_images(x1: np.ndarray, d: np.ndarray, w: np.ndarray, gamma: np.ndarray, dt: float = 1.0) -> np.ndarray:
    plan = WarpPlan(d)
    vert = 0.5 * dt * (gamma[:-1, :, None, None] * w[:-1, None] + gamma[1:, :, None, None] * w[1:, None])
    return plan.sample(prefilter_coeffs(x1)) - vert


def generate_truth(spec: SyntheticSpec, gamma: PhysicsConstants | None = None,
                   basis: WaveletBasis = WaveletBasis()):
    """Ground-truth state and the exact image pair it generates.

    Returns ``(truth, x_t0, x_t1)``. The state's coefficients are the
    analysis transform of ``x_t1``.
    """
    grid = spec.grid
    gamma = gamma or default_gamma(grid, spec.seed, spec.gamma_scale)
    if gamma.K != grid.K:
        raise InvalidSpec("gamma does not match the pressure grid")
    rng = make_rng(spec.seed)
    d = _displacements(spec, grid, rng)
    w = np.zeros((grid.K + 1, spec.rows, spec.cols))
    w[1:-1] = diffops.solve_vertical(d, grid)
    x1 = _images(spec, grid.K, rng)
    x0 = warp_images(x1, d, w, gamma.gamma)
    truth = AMVState(d, w, fwt2(x1, basis))
    return truth, ImageStack(x0, grid, "t0"), ImageStack(x1, grid, "t1")


def make_masks(spec: SyntheticSpec, K: int, rng) -> tuple[np.ndarray, np.ndarray]:
    shape = (K, spec.rows, spec.cols)
    if spec.mask_style == "full":
        return np.ones(shape, bool), np.ones(shape, bool)
    if spec.mask_style == "random":
        return rng.random(shape) < spec.coverage, rng.random(shape) < spec.coverage
    ii, jj = np.meshgrid(np.arange(spec.rows), np.arange(spec.cols), indexing="ij")
    masks = []
    for _ in range(2):
        offsets = rng.integers(0, spec.swath_period, size=K)
        masks.append(((ii + jj)[None] + offsets[:, None, None]) % spec.swath_period < spec.swath_width)
    return masks[0], masks[1]


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    grid: PressureGrid
    gamma: PhysicsConstants
    truth: AMVState
    x_t0: ImageStack
    x_t1: ImageStack
    obs: ObservationSet


def make_dataset(spec: SyntheticSpec, basis: WaveletBasis = WaveletBasis()) -> SyntheticDataset:
    grid = spec.grid
    gamma = default_gamma(grid, spec.seed, spec.gamma_scale)
    truth, x0, x1 = generate_truth(spec, gamma, basis)
    m0, m1 = make_masks(spec, grid.K, make_rng(spec.seed + 104729))
    obs = synthesize_observations(x0, x1, m0, m1, spec.sigma_obs, spec.seed + 1299709)
    return SyntheticDataset(spec, grid, gamma, truth, x0, x1, obs)


def pressure_average(bands: np.ndarray, band_pressures: Sequence[float], grid: PressureGrid) -> np.ndarray:
    """Slab means of a piecewise-constant vertical profile.

    ``bands`` holds B profiles on arbitrary trailing axes; band b covers
    pressures between ``band_pressures[b + 1]`` and ``band_pressures[b]``.
    """
    bands = np.asarray(bands, dtype=float)
    bp = np.asarray(band_pressures, dtype=float)
    if bp.shape != (bands.shape[0] + 1,):
        raise ShapeMismatch(f"need {bands.shape[0] + 1} band pressures, got {bp.shape}")
    if np.any(np.diff(bp) >= 0):
        raise InvalidSpec("band pressures must strictly decrease")
    p = grid.levels
    hi = np.minimum(p[:-1, None], bp[None, :-1])
    lo = np.maximum(p[1:, None], bp[None, 1:])
    overlap = np.maximum(hi - lo, 0.0)           # (K, B)
    covered = overlap.sum(axis=1)
    bad = np.flatnonzero(covered < grid.increments * (1 - 1e-12))
    if bad.size:
        raise CoverageGap(f"layers {bad.tolist()} are not fully covered by the bands")
    flat = bands.reshape(bands.shape[0], -1)
    out = (overlap @ flat) / grid.increments[:, None]
    return out.reshape((grid.K,) + bands.shape[1:])


def calibrate_gamma(x_t0: np.ndarray, x_t1: np.ndarray, d: np.ndarray, w: np.ndarray,
                    grid: PressureGrid, masks: np.ndarray | None = None, dt: float = 1.0) -> PhysicsConstants:
    """Least-squares gamma per channel from image pairs with known winds.

    The warping residual is linear in gamma, so the fit is one small normal
    system per channel over all layers. Boundaries whose winds are
    numerically zero are unidentifiable and get zero.
    """
    x_t0 = np.asarray(getattr(x_t0, "values", x_t0), dtype=float)
    x_t1 = np.asarray(getattr(x_t1, "values", x_t1), dtype=float)
    K = grid.K
    if x_t0.shape != x_t1.shape or x_t0.shape[0] != K or w.shape[0] != K + 1:
        raise ShapeMismatch("stack, wind and grid layer counts disagree")
    gamma = np.zeros((K + 1, 3))
    if float(np.sum(np.square(w))) < 1e-12:
        warnings.warn("vertical winds vanish; gamma is unidentifiable", SingularFit, stacklevel=2)
        return PhysicsConstants(gamma)
    plan = WarpPlan(d)
    target = plan.sample(prefilter_coeffs(x_t1)) - x_t0        # = (dt/2)(g_k w_k + g_k1 w_k1)
    m = np.ones((K,) + x_t0.shape[2:], bool) if masks is None else np.asarray(masks, bool)
    energy = np.array([np.sum(np.square(w[b])) for b in range(K + 1)])
    active = np.flatnonzero(energy >= 1e-12)
    for ch in range(3):
        rows, rhs = [], []
        for k in range(K):
            sel = m[k]
            cols = np.zeros((sel.sum(), active.size))
            for j, b in enumerate(active):
                if b == k:
                    cols[:, j] = 0.5 * dt * w[k][sel]
                elif b == k + 1:
                    cols[:, j] = 0.5 * dt * w[k + 1][sel]
            rows.append(cols)
            rhs.append(target[k, ch][sel])
        A = np.concatenate(rows)
        sol = np.linalg.solve(A.T @ A, A.T @ np.concatenate(rhs))
        gamma[active, ch] = sol
    return PhysicsConstants(gamma)


def epe(d_hat: np.ndarray, d_true: np.ndarray, mask0: np.ndarray, mask1: np.ndarray) -> np.ndarray:
    """Per-layer normalized endpoint error over pixels observed at both times."""
    d_hat = np.asarray(d_hat, dtype=float)
    d_true = np.asarray(d_true, dtype=float)
    if d_hat.shape != d_true.shape or d_hat.ndim != 4 or d_hat.shape[1] != 2:
        raise ShapeMismatch("displacements must share a (K, 2, rows, cols) shape")
    omega = np.asarray(mask0, bool) & np.asarray(mask1, bool)
    if omega.shape != (d_true.shape[0],) + d_true.shape[2:]:
        raise ShapeMismatch("mask shape does not match the displacements")
    err = np.sqrt(np.sum((d_true - d_hat) ** 2, axis=1))
    mag = np.sqrt(np.sum(d_true ** 2, axis=1))
    num = np.sum(err * omega, axis=(1, 2))
    den = np.sum(mag * omega, axis=(1, 2))
    if np.any(den == 0):
        raise ZeroDenominator(f"true displacement vanishes on layers {np.flatnonzero(den == 0).tolist()}")
    return num / den


def boundary_masks(mask0: np.ndarray, mask1: np.ndarray) -> np.ndarray:
    """Pixels of boundary b observed in either adjacent layer, shape ``(K + 1, rows, cols)``."""
    joint = np.asarray(mask0, bool) & np.asarray(mask1, bool)
    K = joint.shape[0]
    out = np.zeros((K + 1,) + joint.shape[1:], bool)
    out[:-1] |= joint
    out[1:] |= joint
    return out


def vrmse(w_hat: np.ndarray, w_true: np.ndarray, mask0: np.ndarray, mask1: np.ndarray) -> np.ndarray:
    """Normalized vertical-wind RMSE per boundary; the pinned end boundaries are NaN."""
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w_hat.shape != w_true.shape:
        raise ShapeMismatch("wind fields differ in shape")
    sel = boundary_masks(mask0, mask1)
    if sel.shape != w_true.shape:
        raise ShapeMismatch("mask shape does not match the winds")
    out = np.full(w_true.shape[0], np.nan)
    for b in range(1, w_true.shape[0] - 1):
        den = np.sum(w_true[b][sel[b]] ** 2)
        if den == 0:
            raise ZeroDenominator(f"true vertical wind vanishes on boundary {b}")
        out[b] = np.sqrt(np.sum((w_true[b] - w_hat[b])[sel[b]] ** 2) / den)
    return out


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    maps: dict[str, np.ndarray] = field(default_factory=dict)
    runtime: dict[str, float] = field(default_factory=dict)

    def add(self, variant: str, d_hat, w_hat, truth: AMVState, mask0, mask1, runtime: float = 0.0):
        e = epe(d_hat, truth.d, mask0, mask1)
        v = vrmse(w_hat, truth.w, mask0, mask1)
        for k, ek in enumerate(e):
            self.rows.append({"variant": variant, "layer": k, "epe": float(ek), "vrmse": float(v[k + 1])})
        self.maps[variant] = np.sqrt(np.sum((truth.d - d_hat) ** 2, axis=1))
        self.runtime[variant] = runtime

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r["variant"] for r in self.rows))

    def mean_epe(self, variant: str) -> float:
        return float(np.mean([r["epe"] for r in self.rows if r["variant"] == variant]))

    def mean_vrmse(self, variant: str) -> float:
        vals = [r["vrmse"] for r in self.rows if r["variant"] == variant]
        return float(np.nanmean(vals))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "layer", "epe", "vrmse"])
            for r in self.rows:
                writer.writerow([r["variant"], r["layer"], f"{r['epe']:.9g}", f"{r['vrmse']:.9g}"])


def run_benchmark(dataset: SyntheticDataset, variants: Sequence[str], cfg, opts=None) -> EvalReport:
    """Run each variant on one dataset and collect per-layer error profiles."""
    from .admm import AdmmOptions, run_variant

    base = opts or AdmmOptions()
    report = EvalReport()
    for name in variants:
        o = replace(base, variant=name, constraint=None)
        t0 = time.perf_counter()
        state, _ = run_variant(dataset.obs, dataset.grid, cfg, o)
        report.add(o.variant, state.d, state.w, dataset.truth, dataset.obs.mask0, dataset.obs.mask1,
                   time.perf_counter() - t0)
    return report
