"""Periodic cubic cardinal-spline interpolation and the layer warp operator.

Spline coefficients are obtained by an exact periodic prefilter computed in
the Fourier domain. Evaluation at an arbitrary point uses the 4x4 cubic
B-spline support around it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ShapeMismatch
from .grid import GridShape


@lru_cache(maxsize=32)
def _prefilter_symbol(rows: int, cols: int) -> np.ndarray:
    """rfft2 transfer function of the sampled separable cubic B-spline."""
    hy = (4.0 + 2.0 * np.cos(2 * np.pi * np.fft.fftfreq(rows))) / 6.0
    hx = (4.0 + 2.0 * np.cos(2 * np.pi * np.fft.rfftfreq(cols))) / 6.0
    return hy[:, None] * hx[None, :]


def prefilter_coeffs(planes: np.ndarray) -> np.ndarray:
    """Cardinal spline coefficients of every plane along the last two axes.

    The operator is a symmetric circulant, so it is its own adjoint.
    """
    planes = np.asarray(planes, dtype=float)
    rows, cols = planes.shape[-2:]
    spec = np.fft.rfft2(planes) / _prefilter_symbol(rows, cols)
    return np.fft.irfft2(spec, s=(rows, cols))


@dataclass(frozen=True)
class SplinePlane:
    coeffs: np.ndarray
    shape: GridShape


def prefilter(plane: np.ndarray, shape: GridShape | None = None) -> SplinePlane:
    plane = np.asarray(plane, dtype=float)
    if shape is None:
        shape = GridShape.of(plane)
    if plane.size != shape.m:
        raise ShapeMismatch(f"plane has {plane.size} samples, grid has {shape.m}")
    plane = plane.reshape(shape.plane)
    return SplinePlane(prefilter_coeffs(plane), shape)


def bspline_weights(t: np.ndarray) -> np.ndarray:
    """Cubic B-spline weights for offsets -1, 0, 1, 2 given fractional part t."""
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    return np.stack([
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ])


def bspline_weight_derivatives(t: np.ndarray) -> np.ndarray:
    t2 = t * t
    s = 1.0 - t
    return np.stack([
        -0.5 * s * s,
        1.5 * t2 - 2.0 * t,
        -1.5 * t2 + t + 0.5,
        0.5 * t2,
    ])


def interp(spline: SplinePlane, point) -> float:
    """Value of the spline surface at ``point = (x, y)``, wrapped periodically."""
    x, y = (float(v) for v in point)
    rows, cols = spline.shape.plane
    x0, y0 = np.floor(x), np.floor(y)
    wx = bspline_weights(np.asarray(x - x0))
    wy = bspline_weights(np.asarray(y - y0))
    ix = (int(x0) + np.arange(-1, 3)) % cols
    iy = (int(y0) + np.arange(-1, 3)) % rows
    return float(wy @ spline.coeffs[np.ix_(iy, ix)] @ wx)


class WarpPlan:
    """Sampling operator for spline coefficient planes at ``grid + d``.

    ``d`` has shape ``(..., 2, rows, cols)`` with the x (column) displacement
    first; leading axes index independent layers. Coefficients passed to the
    plan carry the same leading axes followed by a channel axis. The 16-tap
    stencils are stored as sparse matrices so the operator, its spatial
    derivatives and its transpose are cheap to reapply.
    """

    def __init__(self, d: np.ndarray):
        d = np.asarray(d, dtype=float)
        if d.ndim < 3 or d.shape[-3] != 2:
            raise ShapeMismatch(f"displacement must be (..., 2, rows, cols), got {d.shape}")
        rows, cols = d.shape[-2:]
        self.lead = d.shape[:-3]
        self.nb = int(np.prod(self.lead, dtype=np.int64))
        self.rows, self.cols = rows, cols
        m = rows * cols
        n = self.nb * m
        d = d.reshape(self.nb, 2, rows, cols)
        yy, xx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        px = xx + d[:, 0]
        py = yy + d[:, 1]
        fx, fy = np.floor(px), np.floor(py)
        tx, ty = px - fx, py - fy
        offs = np.arange(-1, 3)[None, None, None, :]
        ix = (fx.astype(np.int64)[..., None] + offs) % cols   # (nb, r, c, 4)
        iy = (fy.astype(np.int64)[..., None] + offs) % rows
        wx = np.moveaxis(bspline_weights(tx), 0, -1)
        wy = np.moveaxis(bspline_weights(ty), 0, -1)
        dwx = np.moveaxis(bspline_weight_derivatives(tx), 0, -1)
        dwy = np.moveaxis(bspline_weight_derivatives(ty), 0, -1)

        def taps(a, b):  # outer product over the two tap axes -> (n * 16,)
            return (a[..., :, None] * b[..., None, :]).reshape(-1)

        base = (np.arange(self.nb) * m)[:, None, None, None, None]
        index = (iy[..., :, None] * cols + ix[..., None, :] + base).reshape(-1)
        indptr = np.arange(0, 16 * n + 1, 16)

        def matrix(data):
            return sparse.csr_matrix((data, index, indptr), shape=(n, n))

        self.S = matrix(taps(wy, wx))
        self.Sx = matrix(taps(wy, dwx))
        self.Sy = matrix(taps(dwy, wx))

    @property
    def m(self) -> int:
        return self.rows * self.cols

    def _columns(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=float)
        if arr.shape[:-3] != self.lead or arr.shape[-2:] != (self.rows, self.cols):
            raise ShapeMismatch(f"array {arr.shape} does not match the plan")
        nch = arr.shape[-3]
        return arr.reshape(self.nb, nch, self.m).transpose(0, 2, 1).reshape(-1, nch)

    def _finish(self, cols: np.ndarray) -> np.ndarray:
        nch = cols.shape[1]
        out = cols.reshape(self.nb, self.m, nch).transpose(0, 2, 1)
        return out.reshape(self.lead + (nch, self.rows, self.cols))

    def sample(self, coeffs: np.ndarray) -> np.ndarray:
        return self._finish(self.S @ self._columns(coeffs))

    def gradient(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Spatial derivatives (d/dx, d/dy) of the spline surface at the warped points."""
        X = self._columns(coeffs)
        return self._finish(self.Sx @ X), self._finish(self.Sy @ X)

    def sample_with_gradient(self, coeffs: np.ndarray):
        X = self._columns(coeffs)
        return tuple(self._finish(M @ X) for M in (self.S, self.Sx, self.Sy))

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`sample`, scattering values back onto the coefficient grid."""
        return self._finish(self.S.T @ self._columns(values))


def vertical_term(wk, wk1, gk, gk1, dt: float = 1.0) -> np.ndarray:
    """(dt/2)(gamma^k w^k + gamma^{k+1} w^{k+1}) for the three channels."""
    gk = np.asarray(gk, dtype=float)[:, None, None]
    gk1 = np.asarray(gk1, dtype=float)[:, None, None]
    return 0.5 * dt * (gk * np.asarray(wk)[None] + gk1 * np.asarray(wk1)[None])


def _check(x1k, dk, wk, wk1):
    x1k = np.asarray(x1k, dtype=float)
    dk = np.asarray(dk, dtype=float)
    if x1k.ndim != 3 or dk.shape != (2,) + x1k.shape[1:]:
        raise ShapeMismatch(f"incompatible image {x1k.shape} and displacement {dk.shape}")
    if np.shape(wk) != x1k.shape[1:] or np.shape(wk1) != x1k.shape[1:]:
        raise ShapeMismatch("vertical wind planes do not match the image plane")
    return x1k, dk


def warp_layer(x1k, dk, wk, wk1, gk, gk1, dt: float = 1.0) -> np.ndarray:
    """Warp the layer's t1 images to t0: spline sample at grid + d minus the vertical term."""
    x1k, dk = _check(x1k, dk, wk, wk1)
    plan = WarpPlan(dk)
    return plan.sample(prefilter_coeffs(x1k)) - vertical_term(wk, wk1, gk, gk1, dt)


def warp_jvp(x1k, dk, wk, wk1, gk, gk1, tx=None, td=None, twk=None, twk1=None, dt: float = 1.0):
    """Jacobian of :func:`warp_layer` applied to tangents of its four arguments.

    Any tangent left as ``None`` is treated as zero.
    """
    x1k, dk = _check(x1k, dk, wk, wk1)
    plan = WarpPlan(dk)
    out = np.zeros_like(x1k)
    if tx is not None:
        out += plan.sample(prefilter_coeffs(tx))
    if td is not None:
        gx, gy = plan.gradient(prefilter_coeffs(x1k))
        out += gx * td[0] + gy * td[1]
    zero = np.zeros(x1k.shape[1:])
    if twk is not None or twk1 is not None:
        out -= vertical_term(zero if twk is None else twk, zero if twk1 is None else twk1, gk, gk1, dt)
    return out
