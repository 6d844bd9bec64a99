"""Measurement kernel and dense forward operator assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .fileio import read_container, write_container
from .geometry import (
    DegenerateGeometryError,
    DipoleActivation,
    PixelGrid,
    SegmentedCoil,
    SensorSpec,
    dipole_field_many,
    dipole_tensor,
)

LANGEVIN_SLOPE = 1.0 / 3.0


def langevin(x):
    """coth(x) - 1/x, with the odd Taylor series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        out = 1.0 / np.tanh(safe) - 1.0 / safe
    out = np.where(small, x / 3.0 - x**3 / 45.0, out)
    return out if out.ndim else float(out)


@dataclass
class DensityField:
    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.n_cells:
            raise ValueError(f"{v.size} values for a grid of {self.grid.n_cells} cells")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        self.values = v.reshape(self.grid.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_measure)


@dataclass
class ForwardOperator:
    """Dense matrix with activation-major, sensor-minor row ordering."""

    matrix: np.ndarray
    activation_ids: tuple
    sensor_ids: tuple
    grid: PixelGrid
    langevin_applied: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.activation_ids = tuple(str(a) for a in self.activation_ids)
        self.sensor_ids = tuple(str(s) for s in self.sensor_ids)
        m, n = self.matrix.shape
        if m != len(self.activation_ids) * len(self.sensor_ids):
            raise ValueError(
                f"{m} rows but {len(self.activation_ids)} activations x {len(self.sensor_ids)} sensors"
            )
        if n != self.grid.n_cells:
            raise ValueError(f"{n} columns but the grid has {self.grid.n_cells} cells")
        if len(set(self.activation_ids)) != len(self.activation_ids):
            raise ValueError("duplicate activation ids")
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            raise ValueError("duplicate sensor ids")

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_ids)

    def row_index(self, activation_id, sensor_id) -> int:
        a = self.activation_ids.index(str(activation_id))
        s = self.sensor_ids.index(str(sensor_id))
        return a * self.n_sensors + s

    def row_map(self) -> list:
        return [(a, s) for a in self.activation_ids for s in self.sensor_ids]

    def block(self, activation_id) -> np.ndarray:
        a = self.activation_ids.index(str(activation_id))
        s = self.n_sensors
        return self.matrix[a * s : (a + 1) * s]

    def records(self) -> list:
        return [
            {"activation_ids": list(self.activation_ids), "sensor_ids": list(self.sensor_ids), "order": "activation-major"},
            {"grid": self.grid.descriptor()},
            {"langevin_applied": self.langevin_applied, "meta": self.meta},
        ]


def default_ids(prefix: str, n: int) -> tuple:
    return tuple(f"{prefix}{i:03d}" for i in range(n))


def sensor_sensitivity(sensor: SensorSpec, points) -> np.ndarray:
    """Vectors T(sensor.position - w) @ sensor.orientation at each ``w``.

    The dipole tensor is symmetric and even, so projecting a particle moment
    m(w) onto the sensor reads ``m(w) . sensitivity(w)``.
    """
    return dipole_field_many(sensor.position, sensor.orientation, points)


def measurement_kernel(act, sensor: SensorSpec, w, langevin_factor=True) -> float:
    """Sensor reading for a unit particle density at ``w`` magnetized by ``act``."""
    w = np.asarray(w, dtype=float)
    b = act.field_at(w[None])[0]
    t = dipole_tensor(sensor.position - w)
    value = float(sensor.orientation @ (t @ b))
    return value * LANGEVIN_SLOPE if langevin_factor else value


def assemble_block(activation, sensors: Sequence[SensorSpec], grid: PixelGrid, langevin_factor=True,
                   points=None, sensitivities=None, activation_index=0) -> np.ndarray:
    """Rows of K for one activation, one row per sensor; shape (s, N)."""
    pts = grid.midpoints() if points is None else points
    try:
        b = activation.field_at(pts)
    except DegenerateGeometryError as exc:
        cell = exc.index[0] if exc.index else None
        raise DegenerateGeometryError(
            f"activation {activation_index} is singular at cell {cell}: {exc}",
            index=(activation_index, None, cell),
        ) from exc
    if sensitivities is None:
        sensitivities = _sensitivities(sensors, pts)
    weight = grid.cell_measure * (LANGEVIN_SLOPE if langevin_factor else 1.0)
    return weight * np.einsum("nk,snk->sn", b, sensitivities)


def _sensitivities(sensors, pts) -> np.ndarray:
    out = np.empty((len(sensors), len(pts), 3))
    for j, s in enumerate(sensors):
        try:
            out[j] = sensor_sensitivity(s, pts)
        except DegenerateGeometryError as exc:
            cell = exc.index[0] if exc.index else None
            raise DegenerateGeometryError(
                f"sensor {j} is singular at cell {cell}: {exc}", index=(None, j, cell)
            ) from exc
    return out


def assemble_row(act, sensor: SensorSpec, grid: PixelGrid, langevin_factor=True) -> np.ndarray:
    return assemble_block(act, [sensor], grid, langevin_factor)[0]


def assemble_operator(activations, sensors, grid: PixelGrid, langevin_factor=True,
                      activation_ids=None, sensor_ids=None, meta=None) -> ForwardOperator:
    """Stack per-activation blocks into the full M x N operator, M = r * s."""
    if len(activations) < 1 or len(sensors) < 1:
        raise ValueError("need at least one activation and one sensor")
    pts = grid.midpoints()
    sens = _sensitivities(sensors, pts)
    s = len(sensors)
    mat = np.empty((len(activations) * s, grid.n_cells))
    for i, act in enumerate(activations):
        mat[i * s : (i + 1) * s] = assemble_block(
            act, sensors, grid, langevin_factor, points=pts, sensitivities=sens, activation_index=i
        )
    if not np.all(np.isfinite(mat)):
        r, c = np.argwhere(~np.isfinite(mat))[0]
        raise DegenerateGeometryError(
            f"non-finite entry at activation {r // s}, sensor {r % s}, cell {c}", index=(r // s, r % s, c)
        )
    return ForwardOperator(
        mat,
        activation_ids or default_ids("coil", len(activations)),
        sensor_ids or default_ids("sensor", s),
        grid,
        langevin_factor,
        dict(meta or {}),
    )


def simulate(activations, sensors, grid: PixelGrid, c, langevin_factor=True) -> np.ndarray:
    """K c computed block by block without holding the full matrix."""
    values = c.flat if isinstance(c, DensityField) else np.asarray(c, dtype=float).ravel()
    if values.size != grid.n_cells:
        raise ValueError("density does not match the grid")
    pts = grid.midpoints()
    sens = _sensitivities(sensors, pts)
    out = [
        assemble_block(a, sensors, grid, langevin_factor, points=pts, sensitivities=sens, activation_index=i) @ values
        for i, a in enumerate(activations)
    ]
    return np.concatenate(out)


@dataclass
class ActivationPattern:
    """Nonnegative weights over base activations, one dict per pattern."""

    weights: list
    names: tuple = ()

    def __post_init__(self):
        self.weights = [{str(k): float(v) for k, v in w.items()} for w in self.weights]
        if not self.weights:
            raise ValueError("a pattern set needs at least one pattern")
        for j, w in enumerate(self.weights):
            if any(v < 0 or not np.isfinite(v) for v in w.values()):
                raise ValueError(f"pattern {j} has negative or non-finite weights")
            if not any(v > 0 for v in w.values()):
                raise ValueError(f"pattern {j} has no nonzero weight")
        if not self.names:
            self.names = default_ids("pattern", len(self.weights))
        if len(self.names) != len(self.weights):
            raise ValueError("one name per pattern")

    @classmethod
    def single(cls, activation_ids) -> "ActivationPattern":
        """Consecutive activation: each coil on its own."""
        return cls([{a: 1.0} for a in activation_ids], tuple(activation_ids))


def apply_pattern(op: ForwardOperator, pattern: ActivationPattern) -> ForwardOperator:
    known = set(op.activation_ids)
    s = op.n_sensors
    blocks = []
    for w in pattern.weights:
        unknown = set(w) - known
        if unknown:
            raise KeyError(f"unknown activation id(s) in pattern: {sorted(unknown)}")
        acc = np.zeros((s, op.matrix.shape[1]))
        for aid, weight in w.items():
            if weight != 0.0:
                acc += weight * op.block(aid)
        blocks.append(acc)
    return ForwardOperator(
        np.vstack(blocks), pattern.names, op.sensor_ids, op.grid, op.langevin_applied,
        {**op.meta, "pattern": [dict(w) for w in pattern.weights]},
    )


def apply(op: ForwardOperator, c) -> np.ndarray:
    values = c.flat if isinstance(c, DensityField) else np.asarray(c, dtype=float).ravel()
    if values.size != op.matrix.shape[1]:
        raise ValueError(f"density has {values.size} entries, operator expects {op.matrix.shape[1]}")
    return op.matrix @ values


def kernel_bound(activations, sensors, grid: PixelGrid, langevin_factor=True) -> float:
    """Upper bound on |K_ij| from the closest approach of sources to the grid box.

    Uses |T(d) n| <= 2/|d|^3 for a unit n, so a dipole activation contributes
    at most 2 |eta| scale / d^3 and each sensor 2 / d^3. Segmented coils are
    bounded by summing per-segment worst cases.
    """
    lo = np.array(list(grid.lower) + ([grid.plane_z] if grid.ndim == 2 else []))
    hi = np.array(list(grid.upper) + ([grid.plane_z] if grid.ndim == 2 else []))

    def dist(p):
        return float(np.linalg.norm(np.maximum(0.0, np.maximum(lo - p, p - hi))))

    def act_bound(a):
        if isinstance(a, DipoleActivation):
            return 2.0 * np.linalg.norm(a.moment) * a.scale / dist(a.position) ** 3
        if isinstance(a, SegmentedCoil):
            # |B_segment| <= scale * L / d_min^2
            total = 0.0
            for p, q in zip(a.vertices[:-1], a.vertices[1:]):
                d = _segment_box_distance(p, q, lo, hi)
                total += a.scale * np.linalg.norm(q - p) / d**2
            return total
        raise TypeError(f"unsupported activation {type(a).__name__}")

    bmax = max(act_bound(a) for a in activations)
    smax = max(2.0 / dist(s.position) ** 3 for s in sensors)
    lam = LANGEVIN_SLOPE if langevin_factor else 1.0
    return lam * grid.cell_measure * bmax * smax


def _segment_box_distance(p, q, lo, hi) -> float:
    # distance to a box is convex along the segment
    def f(t):
        x = p + t * (q - p)
        return float(np.linalg.norm(np.maximum(0.0, np.maximum(lo - x, x - hi))))

    res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
    return min(res.fun, f(0.0), f(1.0))


def save_operator(path, op: ForwardOperator):
    return write_container(path, op.matrix, op.records())


def load_operator(path) -> ForwardOperator:
    matrix, records = read_container(path)
    rowmap, grid, extra = records
    return ForwardOperator(
        matrix,
        rowmap["activation_ids"],
        rowmap["sensor_ids"],
        PixelGrid.from_descriptor(grid["grid"]),
        extra["langevin_applied"],
        extra.get("meta", {}),
    )


def singular_value_report(op: ForwardOperator, k: int = 20) -> dict:
    """Diagnostic decay of the singular spectrum (not a pass/fail check)."""
    sv = np.linalg.svd(op.matrix, compute_uv=False)
    sv_rel = sv / sv[0] if sv[0] > 0 else sv
    return {
        "largest": float(sv[0]),
        "head": [float(x) for x in sv_rel[:k]],
        "numerical_rank_1e-8": int(np.sum(sv_rel > 1e-8)),
        "numerical_rank_1e-12": int(np.sum(sv_rel > 1e-12)),
    }
