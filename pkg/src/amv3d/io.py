"""Binary field/mask files and dataset directories.

Field files start with the magic ``AMV1`` and four little-endian u32
(layers, channels, rows, cols) followed by row-major little-endian float32.
Mask files start with ``AMSK`` and three u32 (layers, rows, cols) followed
by one byte per pixel, 1 where observed. A ``manifest.json`` maps roles to
file names and carries scalar parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, ShapeMismatch
from .grid import AMVState, ObservationSet, PhysicsConstants, build_pressure_grid

FIELD_MAGIC = b"AMV1"
MASK_MAGIC = b"AMSK"
MANIFEST = "manifest.json"


def write_field(path, array) -> None:
    a = np.asarray(array, dtype=float)
    while a.ndim < 4:
        a = a[:, None] if a.ndim == 3 else a[None]
    if a.ndim != 4:
        raise ShapeMismatch(f"fields have at most 4 axes, got {a.ndim}")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<4I", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_field(path) -> np.ndarray:
    """Field as a float64 array of shape (layers, channels, rows, cols)."""
    raw = Path(path).read_bytes()
    if raw[:4] != FIELD_MAGIC:
        raise InvalidSpec(f"{path}: not an AMV1 field file")
    shape = struct.unpack("<4I", raw[4:20])
    n = int(np.prod(shape))
    if len(raw) != 20 + 4 * n:
        raise InvalidSpec(f"{path}: size does not match header {shape}")
    return np.frombuffer(raw, dtype="<f4", offset=20).astype(float).reshape(shape)


def write_mask(path, mask) -> None:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 3:
        raise ShapeMismatch(f"masks are (layers, rows, cols), got {m.shape}")
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<3I", *m.shape))
        fh.write(m.astype(np.uint8).tobytes())


def read_mask(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MASK_MAGIC:
        raise InvalidSpec(f"{path}: not an AMSK mask file")
    shape = struct.unpack("<3I", raw[4:16])
    if len(raw) != 16 + int(np.prod(shape)):
        raise InvalidSpec(f"{path}: size does not match header {shape}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(shape).astype(bool)


def write_dataset(out, dataset) -> Path:
    """Store a synthetic dataset: observations, masks, truth, levels and gamma."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    obs = dataset.obs
    files = {
        "y0": ("y0.amv", obs.filled(0)),
        "y1": ("y1.amv", obs.filled(1)),
        "truth_d": ("truth_d.amv", dataset.truth.d),
        "truth_w": ("truth_w.amv", dataset.truth.w),
        "truth_x0": ("truth_x0.amv", dataset.x_t0.values),
        "truth_x1": ("truth_x1.amv", dataset.x_t1.values),
        "levels": ("levels.amv", np.asarray(dataset.grid.levels)[None, None, None]),
        "gamma": ("gamma.amv", dataset.gamma.gamma[:, :, None, None]),
    }
    roles = {}
    for role, (name, arr) in files.items():
        write_field(out / name, arr)
        roles[role] = name
    for role, m in (("mask0", obs.mask0), ("mask1", obs.mask1)):
        write_mask(out / f"{role}.amsk", m)
        roles[role] = f"{role}.amsk"
    manifest = {"format": "AMV1", "roles": roles, "sigma_obs": obs.sigma_obs,
                "K": dataset.grid.K, "rows": obs.shape.rows, "cols": obs.shape.cols,
                "spec": asdict(dataset.spec)}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return out


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise InvalidSpec(f"{directory}: missing {MANIFEST}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc


class DatasetFiles:
    """Lazy accessor for a dataset directory written by :func:`write_dataset`."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.manifest = read_manifest(self.dir)
        self.roles = self.manifest.get("roles", {})

    def has(self, role: str) -> bool:
        return role in self.roles

    def field(self, role: str) -> np.ndarray:
        if role not in self.roles:
            raise InvalidSpec(f"dataset has no {role!r} file")
        return read_field(self.dir / self.roles[role])

    def mask(self, role: str) -> np.ndarray:
        if role not in self.roles:
            raise InvalidSpec(f"dataset has no {role!r} file")
        return read_mask(self.dir / self.roles[role])

    @property
    def grid(self):
        return build_pressure_grid(self.field("levels").ravel())

    @property
    def gamma(self) -> PhysicsConstants:
        return PhysicsConstants(self.field("gamma")[:, :, 0, 0])

    def observations(self) -> ObservationSet:
        m0, m1 = self.mask("mask0"), self.mask("mask1")
        y0 = np.where(m0[:, None], self.field("y0"), np.nan)
        y1 = np.where(m1[:, None], self.field("y1"), np.nan)
        return ObservationSet(y0, y1, m0, m1, float(self.manifest.get("sigma_obs", 0.0)))

    def truth(self) -> AMVState | None:
        if not (self.has("truth_d") and self.has("truth_w")):
            return None
        d = self.field("truth_d")
        w = self.field("truth_w")[:, 0]
        K, _, r, c = d.shape
        return AMVState(d, w, np.zeros((K, 3, r, c)))


def write_estimate(out, state: AMVState, x_t1: np.ndarray, variant: str, trace=None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_field(out / "d.amv", state.d)
    write_field(out / "w.amv", state.w)
    write_field(out / "x.amv", x_t1)
    roles = {"estimate_d": "d.amv", "estimate_w": "w.amv", "estimate_x": "x.amv"}
    if trace is not None:
        trace.to_csv(out / "trace.csv")
        roles["trace"] = "trace.csv"
    manifest = {"format": "AMV1", "roles": roles, "variant": variant,
                "converged": None if trace is None else bool(trace.converged),
                "iterations": None if trace is None else trace.iterations}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return out


def read_estimate(directory) -> tuple[np.ndarray, np.ndarray, str]:
    files = DatasetFiles(directory)
    d = files.field("estimate_d")
    w = files.field("estimate_w")[:, 0]
    return d, w, files.manifest.get("variant", "unknown")
