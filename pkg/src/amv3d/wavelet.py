"""Orthonormal periodic 2D wavelet transform, scale schedules and the l1 prox.

Coefficients are laid out in the usual packed-array form: the approximation
band sits in the top-left corner and each finer level of detail bands
doubles the block. A schedule stage therefore activates a top-left block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pywt

from .errors import BadDepth, BadStage, NegativeLambda, NonPositiveRho, NonPowerOfTwo

# coif5 has 30 taps, 10 vanishing moments for the wavelet and 9 for the
# scaling function; reading "10 moments" as a scaling-function property
# would give coif6 instead, selectable through WaveletBasis.
DEFAULT_FAMILY = "coif5"


def default_depth(rows: int, cols: int) -> int:
    """Depth leaving a 4x4 coarse band on square grids."""
    return max(int(np.log2(min(rows, cols))) - 2, 1)


@dataclass(frozen=True)
class WaveletBasis:
    family: str = DEFAULT_FAMILY
    depth: int | None = None
    mode: str = "periodization"

    def resolve_depth(self, rows: int, cols: int) -> int:
        for n in (rows, cols):
            if n <= 0 or n & (n - 1):
                raise NonPowerOfTwo(f"size {n} is not a power of two")
        J = default_depth(rows, cols) if self.depth is None else int(self.depth)
        if J < 1 or J > int(np.log2(min(rows, cols))):
            raise BadDepth(f"depth {J} invalid for a {rows}x{cols} grid")
        return J


@lru_cache(maxsize=64)
def _slices(family: str, mode: str, rows: int, cols: int, J: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coeffs = pywt.wavedec2(np.zeros((rows, cols)), family, mode=mode, level=J)
    _, slices = pywt.coeffs_to_array(coeffs)
    return slices


def fwt2(image: np.ndarray, basis: WaveletBasis = WaveletBasis()) -> np.ndarray:
    """Analysis transform over the last two axes; output has the input's shape."""
    image = np.asarray(image, dtype=float)
    rows, cols = image.shape[-2:]
    J = basis.resolve_depth(rows, cols)
    with warnings.catch_warnings():
        # long filters on small bands trigger pywt's level warning; periodization stays exact
        warnings.simplefilter("ignore")
        coeffs = pywt.wavedec2(image, basis.family, mode=basis.mode, level=J, axes=(-2, -1))
    arr, _ = pywt.coeffs_to_array(coeffs, axes=(-2, -1))
    return arr


def iwt2(coeffs: np.ndarray, basis: WaveletBasis = WaveletBasis()) -> np.ndarray:
    """Synthesis transform, the exact inverse and adjoint of :func:`fwt2`."""
    coeffs = np.asarray(coeffs, dtype=float)
    rows, cols = coeffs.shape[-2:]
    J = basis.resolve_depth(rows, cols)
    slices = _slices(basis.family, basis.mode, rows, cols, J)
    lead = (slice(None),) * (coeffs.ndim - 2)
    parts = [coeffs[lead + tuple(slices[0])]]
    for level in slices[1:]:
        parts.append(tuple(coeffs[lead + tuple(level[key])] for key in ("da", "ad", "dd")))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return pywt.waverec2(parts, basis.family, mode=basis.mode, axes=(-2, -1))


@dataclass(frozen=True)
class ScaleSchedule:
    """Nested activation stages; entry s is the number of detail levels freed at stage s."""

    levels: tuple[int, ...]
    depth: int

    def __post_init__(self):
        lv = tuple(int(v) for v in self.levels)
        if not lv or any(b <= a for a, b in zip(lv, lv[1:])):
            raise BadStage(f"stages must be strictly increasing, got {lv}")
        if lv[0] < 0 or lv[-1] > self.depth:
            raise BadStage(f"stages {lv} exceed depth {self.depth}")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def coarse_to_fine(cls, depth: int, n_stages: int | None = None) -> "ScaleSchedule":
        if n_stages is None or n_stages >= depth:
            return cls(tuple(range(1, depth + 1)), depth)
        if n_stages < 1:
            raise BadStage("need at least one stage")
        lv = np.unique(np.round(np.linspace(1, depth, n_stages)).astype(int))
        return cls(tuple(int(v) for v in lv), depth)

    @classmethod
    def single(cls, depth: int) -> "ScaleSchedule":
        return cls((depth,), depth)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def final(self) -> int:
        return len(self.levels) - 1

    def block(self, stage: int, rows: int, cols: int) -> tuple[int, int]:
        if not 0 <= stage < len(self.levels):
            raise BadStage(f"stage {stage} outside 0..{len(self.levels) - 1}")
        shift = self.depth - self.levels[stage]
        return rows >> shift, cols >> shift

    def mask(self, stage: int, rows: int, cols: int) -> np.ndarray:
        br, bc = self.block(stage, rows, cols)
        out = np.zeros((rows, cols), dtype=bool)
        out[:br, :bc] = True
        return out


def restrict_to_schedule(coeffs: np.ndarray, schedule: ScaleSchedule, stage: int) -> np.ndarray:
    """Zero every coefficient outside the bands active at ``stage``."""
    rows, cols = coeffs.shape[-2:]
    return np.where(schedule.mask(stage, rows, cols), coeffs, 0.0)


def soft_threshold(v, lam):
    """Prox of lam*|.|: shrink toward zero by lam, zero inside the dead zone."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise NegativeLambda(f"threshold must be nonnegative, got {lam}")
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    return float(out) if out.ndim == 0 else out


def prox_step(c_plus_u: np.ndarray, alpha_x, rho: float) -> np.ndarray:
    """Layer-wise soft threshold at alpha_x^k / rho of ``(K, 3, rows, cols)`` coefficients."""
    if rho <= 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")
    alpha_x = np.asarray(alpha_x, dtype=float).reshape(-1)
    if alpha_x.size == 1:
        alpha_x = np.full(c_plus_u.shape[0], alpha_x[0])
    lam = (alpha_x / rho).reshape((-1,) + (1,) * (c_plus_u.ndim - 1))
    return soft_threshold(c_plus_u, lam)
