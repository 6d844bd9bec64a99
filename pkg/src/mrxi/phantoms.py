"""Test densities on the unit square and conservative resampling between grids.

Phantom geometry is expressed in unit-square coordinates with ``y`` pointing
up; array row ``i`` of a planar field holds the cells with the ``i``-th
smallest ``y``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text, read_grid_csv, read_pgm, write_grid_csv, write_pgm
from .forward import DensityField
from .geometry import PixelGrid

KINDS = ("p_shape", "shepp_logan", "tumor")


@dataclass(frozen=True)
class Shape:
    """Ellipse or (rotated) rectangle with a value and a compositing rule.

    ``hx``/``hy`` are semi-axes (ellipse) or half-widths (rect) before rotation
    by ``angle`` degrees about ``(cx, cy)``. ``op`` is ``"add"`` or ``"set"``.
    """

    type: str
    cx: float
    cy: float
    hx: float
    hy: float
    value: float
    angle: float = 0.0
    op: str = "add"

    def mask(self, x, y) -> np.ndarray:
        t = np.deg2rad(self.angle)
        dx, dy = x - self.cx, y - self.cy
        u = (dx * np.cos(t) + dy * np.sin(t)) / self.hx
        v = (-dx * np.sin(t) + dy * np.cos(t)) / self.hy
        if self.type == "ellipse":
            return u * u + v * v <= 1.0
        if self.type == "rect":
            return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
        raise ValueError(f"unknown shape type {self.type!r}")


@dataclass(frozen=True)
class PhantomSpec:
    kind: str
    shapes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported phantom kind {self.kind!r}; choose from {KINDS}")
        shapes = tuple(s if isinstance(s, Shape) else Shape(**s) for s in self.shapes)
        if not shapes:
            shapes = DEFAULT_SHAPES[self.kind]
        for s in shapes:
            if s.op not in ("add", "set"):
                raise ValueError(f"shape op must be 'add' or 'set', got {s.op!r}")
            if s.op == "set" and s.value < 0:
                raise ValueError("set intensities must be nonnegative")
            if s.hx <= 0 or s.hy <= 0:
                raise ValueError("shape extents must be positive")
            if not (0.0 <= s.cx <= 1.0 and 0.0 <= s.cy <= 1.0):
                raise ValueError("shape centers must lie in the unit square")
        object.__setattr__(self, "shapes", shapes)

    def evaluate(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for s in self.shapes:
            m = s.mask(x, y)
            if s.op == "set":
                out[m] = s.value
            else:
                out[m] += s.value
        # additive tables can dip below zero by rounding; densities cannot
        return np.maximum(out, 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shapes": [asdict(s) for s in self.shapes]}


def _shepp_logan_shapes():
    # Modified (Toft) table on [-1, 1]^2: (value, a, b, x0, y0, angle)
    table = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
    ]
    return tuple(
        Shape("ellipse", (x0 + 1) / 2, (y0 + 1) / 2, a / 2, b / 2, v, ang, "add")
        for v, a, b, x0, y0, ang in table
    )


DEFAULT_SHAPES = {
    "p_shape": (
        Shape("rect", 0.35, 0.50, 0.10, 0.35, 1.0, op="set"),  # stem
        Shape("rect", 0.485, 0.665, 0.235, 0.185, 1.0, op="set"),  # bowl
        Shape("ellipse", 0.52, 0.665, 0.10, 0.08, 0.0, op="set"),  # hole
    ),
    "shepp_logan": _shepp_logan_shapes(),
    "tumor": (
        Shape("ellipse", 0.5, 0.5, 0.32, 0.22, 1.0, angle=25.0, op="set"),
        Shape("ellipse", 0.56, 0.54, 0.12, 0.09, 0.5, angle=25.0, op="add"),
        Shape("rect", 0.5, 0.47, 0.5, 0.035, 0.0, angle=-35.0, op="set"),  # vein
    ),
}


def default_phantom(kind: str) -> PhantomSpec:
    return PhantomSpec(kind)


def rasterize(spec: PhantomSpec, grid: PixelGrid) -> DensityField:
    """Sample the phantom at cell midpoints of a planar grid."""
    if grid.ndim != 2:
        raise ValueError("phantoms are planar; grid must be 2D")
    pts = grid.midpoints()
    vals = spec.evaluate(pts[:, 0], pts[:, 1])
    return DensityField(grid, vals.reshape(grid.shape))


def _overlap_matrix(src_edges, dst_edges) -> np.ndarray:
    """Row i: fraction of destination cell i covered by each source cell."""
    lo = np.maximum(dst_edges[:-1, None], src_edges[None, :-1])
    hi = np.minimum(dst_edges[1:, None], src_edges[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / np.diff(dst_edges)[:, None]


def _edges(grid: PixelGrid, axis: int) -> np.ndarray:
    n = grid.shape[::-1][axis]
    return np.linspace(grid.lower[axis], grid.upper[axis], n + 1)


def resample(c: DensityField, target: PixelGrid) -> DensityField:
    """Cell-average ``c`` onto ``target`` (area-weighted, mass conserving)."""
    src = c.grid
    if src.ndim != target.ndim:
        raise ValueError("source and target grids differ in dimension")
    if not (np.allclose(src.lower, target.lower, atol=1e-12) and np.allclose(src.upper, target.upper, atol=1e-12)):
        raise ValueError("source and target grids do not cover the same region")
    if src.shape == target.shape:
        return DensityField(target, c.values.copy())
    out = c.values
    # array axis k corresponds to spatial axis ndim-1-k
    for k in range(src.ndim):
        spatial = src.ndim - 1 - k
        r = _overlap_matrix(_edges(src, spatial), _edges(target, spatial))
        out = np.moveaxis(np.tensordot(r, np.moveaxis(out, k, 0), axes=(1, 0)), 0, k)
    return DensityField(target, out)


def export_pgm(path, c: DensityField, bits: int = 16) -> dict:
    """Write a planar field as PGM (top row = largest y) plus a JSON sidecar."""
    if c.grid.ndim != 2:
        raise ValueError("PGM export needs a planar field")
    path = Path(path)
    scaling = write_pgm(path, np.flipud(c.values), bits=bits, vmin=0.0 if c.values.min() >= 0 else None)
    sidecar = {"grid": c.grid.descriptor(), "scaling": scaling, "row_order": "top=max_y"}
    atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return sidecar


def import_pgm(path) -> DensityField:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    vals = np.flipud(read_pgm(path, sidecar["scaling"]))
    return DensityField(PixelGrid.from_descriptor(sidecar["grid"]), vals)


def export_csv(path, c: DensityField):
    return write_grid_csv(path, c.values)


def import_csv(path, grid: PixelGrid | None = None) -> DensityField:
    vals = read_grid_csv(path)
    return DensityField(grid or PixelGrid(vals.shape), vals)
