"""Matrix-free periodic differential operators and the hydrostatic constraint.

The constraint between horizontal displacements and vertical winds is
``h(d, w) = D d - L w`` where block ``k`` of ``D d`` is
``dp^k * div(d^k)`` and block ``k`` of ``L w`` is ``w^k - w^{k+1}`` with the
boundary winds ``w^0 = w^K = 0`` eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import solveh_banded

from .errors import ShapeMismatch
from .grid import AMVState, PressureGrid


def _dx(u):
    return 0.5 * (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1))


def _dy(u):
    return 0.5 * (np.roll(u, -1, axis=-2) - np.roll(u, 1, axis=-2))


def divergence(dk: np.ndarray) -> np.ndarray:
    """Centered periodic divergence of ``(..., 2, rows, cols)`` fields."""
    dk = np.asarray(dk, dtype=float)
    if dk.ndim < 3 or dk.shape[-3] != 2:
        raise ShapeMismatch(f"displacement must be (..., 2, rows, cols), got {dk.shape}")
    return _dx(dk[..., 0, :, :]) + _dy(dk[..., 1, :, :])


def divergence_adjoint(v: np.ndarray) -> np.ndarray:
    """Transpose of :func:`divergence` (a negated centered gradient)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-_dx(v), -_dy(v)], axis=-3)


def gradient(u: np.ndarray) -> np.ndarray:
    """Centered periodic gradient, stacked as (d/dx, d/dy)."""
    return np.stack([_dx(u), _dy(u)], axis=-3)


def curl_of_stream(psi: np.ndarray) -> np.ndarray:
    """Solenoidal field (-dpsi/dy, dpsi/dx); its discrete divergence is exactly zero."""
    return np.stack([-_dy(psi), _dx(psi)], axis=-3)


def laplacian(u: np.ndarray) -> np.ndarray:
    """Five-point periodic Laplacian over the last two axes (self-adjoint)."""
    u = np.asarray(u, dtype=float)
    if u.ndim < 2:
        raise ShapeMismatch("laplacian needs at least a 2D plane")
    return (np.roll(u, 1, -1) + np.roll(u, -1, -1) + np.roll(u, 1, -2)
            + np.roll(u, -1, -2) - 4.0 * u)


def _check_d(d, grid):
    d = np.asarray(d, dtype=float)
    if d.ndim != 4 or d.shape[:2] != (grid.K, 2):
        raise ShapeMismatch(f"d must be ({grid.K}, 2, rows, cols), got {d.shape}")
    return d


def apply_D(d: np.ndarray, grid: PressureGrid) -> np.ndarray:
    d = _check_d(d, grid)
    return grid.increments[:, None, None] * divergence(d)


def apply_D_adjoint(v: np.ndarray, grid: PressureGrid) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != grid.K:
        raise ShapeMismatch(f"expected {grid.K} layers, got {v.shape[0]}")
    return divergence_adjoint(grid.increments[:, None, None] * v)


def apply_L(w_interior: np.ndarray) -> np.ndarray:
    """Map the K-1 interior wind planes to K constraint blocks."""
    w = np.asarray(w_interior, dtype=float)
    zero = np.zeros((1,) + w.shape[1:])
    full = np.concatenate([zero, w, zero])
    return full[:-1] - full[1:]


def apply_L_adjoint(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[1:] - v[:-1]


def hydrostatic_residual(state: AMVState, grid: PressureGrid) -> np.ndarray:
    if state.K != grid.K:
        raise ShapeMismatch(f"state has {state.K} layers, grid has {grid.K}")
    return apply_D(state.d, grid) - apply_L(state.w_interior)


def relative_hydrostatic_residual(state: AMVState, grid: PressureGrid) -> float:
    Dd = apply_D(state.d, grid)
    Lw = apply_L(state.w_interior)
    scale = max(np.linalg.norm(Dd), np.linalg.norm(Lw))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(Dd - Lw) / scale)


@lru_cache(maxsize=16)
def _normal_bands(K: int) -> np.ndarray:
    # L^T L is the (K-1)x(K-1) tridiagonal matrix with 2 on the diagonal, -1 off it
    ab = np.empty((2, K - 1))
    ab[0] = -1.0
    ab[1] = 2.0
    return ab


def solve_vertical(d: np.ndarray, grid: PressureGrid) -> np.ndarray:
    """Per-pixel least-squares interior winds minimizing ||D d - L w||."""
    rhs_blocks = apply_D(d, grid)
    return solve_vertical_from_flux(rhs_blocks)


def solve_vertical_from_flux(flux: np.ndarray) -> np.ndarray:
    K = flux.shape[0]
    plane = flux.shape[1:]
    rhs = apply_L_adjoint(flux).reshape(K - 1, -1)
    if K == 2:
        w = 0.5 * rhs  # single interior unknown, normal equation 2 w = rhs
    else:
        w = solveh_banded(_normal_bands(K), rhs)
    return w.reshape((K - 1,) + plane)


def mass_flux_imbalance(d: np.ndarray, grid: PressureGrid) -> np.ndarray:
    """Column sum of dp^k div d^k; nonzero pixels make the constraint infeasible."""
    return apply_D(d, grid).sum(axis=0)


def materialize_L(K: int) -> np.ndarray:
    """Dense K x (K-1) matrix of L for a single pixel."""
    return apply_L(np.eye(K - 1)[:, :, None])[..., 0]


@dataclass(frozen=True)
class LinearFieldOperator:
    kind: str
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]


def field_operator(kind: str, grid: PressureGrid | None = None) -> LinearFieldOperator:
    if kind == "divergence":
        return LinearFieldOperator(kind, divergence, divergence_adjoint)
    if kind == "laplacian":
        return LinearFieldOperator(kind, laplacian, laplacian)
    if kind == "D":
        if grid is None:
            raise ValueError("D needs a pressure grid")
        return LinearFieldOperator(kind, lambda d: apply_D(d, grid), lambda v: apply_D_adjoint(v, grid))
    if kind == "L":
        return LinearFieldOperator(kind, apply_L, apply_L_adjoint)
    raise ValueError(f"unknown operator kind {kind!r}")
