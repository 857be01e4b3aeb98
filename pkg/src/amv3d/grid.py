"""Domain types for the layered discretization and the observation model.

Array layout used throughout the package (``m = rows * cols`` pixels kept
as a 2D ``(rows, cols)`` plane):

* images and wavelet coefficients: ``(K, 3, rows, cols)``, channels T, q, o
* horizontal displacements ``d``: ``(K, 2, rows, cols)``, component 0 is
  along columns (x), component 1 along rows (y)
* vertical winds ``w``: ``(K + 1, rows, cols)`` with zero boundary planes
* masks: ``(K, rows, cols)`` booleans, shared by the three channels
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonMonotoneLevels, NonPowerOfTwo, ShapeMismatch

CHANNELS = ("T", "q", "o")
N_CHANNELS = 3


def make_rng(seed: int) -> np.random.Generator:
    """Seedable counter-based generator, reproducible across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if not (_is_pow2(self.rows) and _is_pow2(self.cols)):
            raise NonPowerOfTwo(f"grid {self.rows}x{self.cols} is not a power of two")

    @property
    def m(self) -> int:
        return self.rows * self.cols

    @property
    def plane(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def position(self, j: int) -> tuple[int, int]:
        """Row-major index map from linear pixel index to ``(x, y) = (col, row)``."""
        if not 0 <= j < self.m:
            raise IndexError(j)
        row, col = divmod(int(j), self.cols)
        return col, row

    def index(self, x: int, y: int) -> int:
        return (y % self.rows) * self.cols + (x % self.cols)

    @classmethod
    def of(cls, array: np.ndarray) -> "GridShape":
        return cls(int(array.shape[-2]), int(array.shape[-1]))


@dataclass(frozen=True)
class PressureGrid:
    """Decreasing pressure levels p^0 > ... > p^K (hPa) and slab thicknesses."""

    levels: np.ndarray
    increments: np.ndarray

    @property
    def K(self) -> int:
        return len(self.increments)

    @property
    def layers(self) -> range:
        return range(self.K)


def build_pressure_grid(levels: Sequence[float]) -> PressureGrid:
    p = np.asarray(levels, dtype=float)
    if p.ndim != 1 or p.size < 3:
        raise NonMonotoneLevels("need at least three pressure levels (K >= 2)")
    dp = p[:-1] - p[1:]
    if not np.all(np.isfinite(p)) or np.any(dp <= 0):
        raise NonMonotoneLevels(f"pressure levels must strictly decrease: {p.tolist()}")
    p.setflags(write=False)
    dp.setflags(write=False)
    return PressureGrid(p, dp)


@dataclass(frozen=True)
class PhysicsConstants:
    """One tri-variate constant per layer boundary, shape ``(K + 1, 3)``."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[1] != N_CHANNELS:
            raise ShapeMismatch(f"gamma must be (K+1, 3), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("gamma must be finite")
        object.__setattr__(self, "gamma", g)

    @property
    def K(self) -> int:
        return self.gamma.shape[0] - 1


@dataclass(frozen=True)
class ImageStack:
    values: np.ndarray
    grid: PressureGrid
    timestamp: str = "t1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 4 or v.shape[:2] != (self.grid.K, N_CHANNELS):
            raise ShapeMismatch(f"image stack must be (K, 3, rows, cols), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image stack contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.values)


@dataclass
class AMVState:
    """Horizontal displacements, boundary vertical winds and image coefficients."""

    d: np.ndarray
    w: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        K = self.d.shape[0]
        plane = self.d.shape[-2:]
        if self.d.shape != (K, 2) + plane:
            raise ShapeMismatch(f"d must be (K, 2, rows, cols), got {self.d.shape}")
        if self.w.shape != (K + 1,) + plane:
            raise ShapeMismatch(f"w must be (K+1, rows, cols), got {self.w.shape}")
        if self.c.shape != (K, N_CHANNELS) + plane:
            raise ShapeMismatch(f"c must be (K, 3, rows, cols), got {self.c.shape}")
        if np.any(self.w[0]) or np.any(self.w[-1]):
            raise ValueError("boundary vertical winds must be zero")

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.d)

    @property
    def w_interior(self) -> np.ndarray:
        return self.w[1:-1]

    @classmethod
    def zeros(cls, K: int, shape: GridShape) -> "AMVState":
        r, c = shape.plane
        return cls(np.zeros((K, 2, r, c)), np.zeros((K + 1, r, c)), np.zeros((K, 3, r, c)))

    def copy(self) -> "AMVState":
        return AMVState(self.d.copy(), self.w.copy(), self.c.copy())


def theta_size(K: int, m: int) -> int:
    return (6 * K - 1) * m


def pack_theta(state: AMVState) -> np.ndarray:
    """Flatten ``(d, interior w, c)`` into one vector of length (6K - 1) m."""
    return np.concatenate([state.d.ravel(), state.w_interior.ravel(), state.c.ravel()])


def unpack_theta(theta: np.ndarray, K: int, shape: GridShape) -> AMVState:
    theta = np.asarray(theta, dtype=float)
    m = shape.m
    if theta.shape != (theta_size(K, m),):
        raise ShapeMismatch(f"theta has {theta.size} entries, expected {theta_size(K, m)}")
    r, c = shape.plane
    nd, nw = 2 * K * m, (K - 1) * m
    w = np.zeros((K + 1, r, c))
    w[1:-1] = theta[nd:nd + nw].reshape(K - 1, r, c)
    return AMVState(
        theta[:nd].reshape(K, 2, r, c).copy(),
        w,
        theta[nd + nw:].reshape(K, 3, r, c).copy(),
    )


@dataclass
class ObservationSet:
    """Noisy masked image pairs; unobserved entries hold NaN and must not be read."""

    y0: np.ndarray
    y1: np.ndarray
    mask0: np.ndarray
    mask1: np.ndarray
    sigma_obs: float = 0.0
    _filled: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        self.y1 = np.asarray(self.y1, dtype=float)
        self.mask0 = np.asarray(self.mask0, dtype=bool)
        self.mask1 = np.asarray(self.mask1, dtype=bool)
        if self.y0.shape != self.y1.shape or self.y0.ndim != 4 or self.y0.shape[1] != N_CHANNELS:
            raise ShapeMismatch("y0 and y1 must both be (K, 3, rows, cols)")
        expect = (self.y0.shape[0],) + self.y0.shape[2:]
        if self.mask0.shape != expect or self.mask1.shape != expect:
            raise ShapeMismatch(f"masks must be {expect}")

    @property
    def K(self) -> int:
        return self.y0.shape[0]

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.y0)

    def filled(self, t: int) -> np.ndarray:
        """Observations with unobserved entries replaced by zero."""
        if t not in self._filled:
            y, mask = (self.y0, self.mask0) if t == 0 else (self.y1, self.mask1)
            self._filled[t] = np.where(mask[:, None], y, 0.0)
        return self._filled[t]

    @property
    def joint_mask(self) -> np.ndarray:
        return self.mask0 & self.mask1


def synthesize_observations(
    truth_t0: ImageStack,
    truth_t1: ImageStack,
    mask0: np.ndarray,
    mask1: np.ndarray,
    sigma_obs: float,
    seed: int,
) -> ObservationSet:
    """Add i.i.d. Gaussian noise to the visible entries and sentinel the rest."""
    x0, x1 = truth_t0.values, truth_t1.values
    mask0 = np.asarray(mask0, dtype=bool)
    mask1 = np.asarray(mask1, dtype=bool)
    if x0.shape != x1.shape:
        raise ShapeMismatch("truth stacks differ in shape")
    expect = (x0.shape[0],) + x0.shape[2:]
    if mask0.shape != expect or mask1.shape != expect:
        raise ShapeMismatch(f"masks must be {expect}, got {mask0.shape} and {mask1.shape}")
    if sigma_obs < 0:
        raise ValueError("sigma_obs must be nonnegative")
    rng = make_rng(seed)
    noise0 = rng.standard_normal(x0.shape)
    noise1 = rng.standard_normal(x1.shape)
    y0 = np.where(mask0[:, None], x0 + sigma_obs * noise0, np.nan)
    y1 = np.where(mask1[:, None], x1 + sigma_obs * noise1, np.nan)
    return ObservationSet(y0, y1, mask0, mask1, float(sigma_obs))
