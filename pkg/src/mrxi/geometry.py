"""Coils, sensors, the imaging domain and activation fields.

All positions are points in R^3. Two-dimensional experiments live in the
``z = 0`` plane: positions, moments and sensor orientations are given with a
zero third component, so the out-of-plane field components vanish by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERACY_TOL = 1e-14


class DegenerateGeometryError(ValueError):
    """Raised when a field is evaluated on (or numerically at) a source."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _vec3(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(-1)
    if a.size == 2:
        a = np.array([a[0], a[1], 0.0])
    if a.size != 3:
        raise ValueError(f"expected a 2- or 3-vector, got shape {np.shape(p)}")
    return a


def _points3(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[1] == 2:
        p = np.column_stack([p, np.zeros(len(p))])
    if p.shape[1] != 3:
        raise ValueError(f"points must have 2 or 3 columns, got {p.shape}")
    return p


@dataclass(frozen=True)
class Domain:
    """Axis-aligned region of interest Omega plus a standoff shell Omega_0.

    ``dim`` is 2 for the planar experiments (only the first two coordinates
    are checked) and 3 for volumes.
    """

    lower: tuple = (0.0, 0.0)
    upper: tuple = (1.0, 1.0)
    standoff: float = 0.15

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) not in (2, 3):
            raise ValueError("lower/upper must both have length 2 or 3")
        if not self.standoff > 0:
            raise ValueError("standoff must be positive")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper must exceed lower on every axis")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, point) -> bool:
        p = _vec3(point)[: self.dim]
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def in_shell(self, point) -> bool:
        """True if ``point`` lies in the closed shell around (and outside) Omega."""
        p = _vec3(point)[: self.dim]
        lo = np.asarray(self.lower) - self.standoff
        hi = np.asarray(self.upper) + self.standoff
        return bool(np.all(p >= lo) and np.all(p <= hi)) and not self.contains(point)

    def check_outside(self, points, what="point"):
        for i, p in enumerate(_points3(points)):
            if self.contains(p):
                raise ValueError(f"{what} {i} at {p.tolist()} lies inside the domain")


@dataclass(frozen=True)
class SensorSpec:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        n = _vec3(self.orientation)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError(f"sensor orientation must be a unit vector, |n| = {np.linalg.norm(n)!r}")
        object.__setattr__(self, "orientation", n)


@dataclass(frozen=True)
class DipoleActivation:
    """Idealized small coil: a point moment ``moment`` located at ``position``."""

    position: np.ndarray
    moment: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        m = _vec3(self.moment)
        if not np.linalg.norm(m) > 0:
            raise ValueError("dipole moment must be nonzero")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "moment", m)

    def field_at(self, points) -> np.ndarray:
        return dipole_field_many(self.position, self.moment, _points3(points), self.scale)


@dataclass(frozen=True)
class SegmentedCoil:
    """Conductor path given as a polyline through ``vertices`` (unit current)."""

    vertices: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = _points3(self.vertices)
        if len(v) < 2:
            raise ValueError("a coil needs at least one segment (two vertices)")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "vertices", v)

    @property
    def n_segments(self) -> int:
        return len(self.vertices) - 1

    @property
    def moment(self) -> np.ndarray:
        """Integral of the tangent along the path (zero for closed loops)."""
        return self.vertices[-1] - self.vertices[0]

    def field_at(self, points) -> np.ndarray:
        return segments_field_many(self.vertices[:-1], self.vertices[1:], _points3(points), self.scale)

    @classmethod
    def circle(cls, center, normal, radius, n_segments=64, scale=1.0):
        """Closed polygonal loop approximating a circle, oriented by ``normal``."""
        c = _vec3(center)
        n = _vec3(normal)
        n = n / np.linalg.norm(n)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        t = np.linspace(0.0, 2 * np.pi, n_segments + 1)
        t[-1] = 0.0
        verts = c + radius * (np.cos(t)[:, None] * u + np.sin(t)[:, None] * v)
        return cls(verts, scale)


@dataclass(frozen=True)
class PixelGrid:
    """Uniform cell decomposition of the domain box.

    ``shape`` is in array order: ``(ny, nx)`` for planar grids, ``(nz, ny, nx)``
    for volumes. Cells are numbered in C order of ``shape``. Planar grids sit at
    height ``plane_z``.
    """

    shape: tuple
    lower: tuple = (0.0, 0.0)
    upper: tuple = (1.0, 1.0)
    plane_z: float = 0.0

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) not in (2, 3) or min(shape) < 1:
            raise ValueError(f"grid shape must be 2D or 3D with positive sizes, got {self.shape}")
        if len(self.lower) != len(shape) or len(self.upper) != len(shape):
            raise ValueError("grid bounds must match the grid dimension")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lower", tuple(float(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(float(x) for x in self.upper))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple:
        """Cell edge lengths in (x, y[, z]) order."""
        counts = self.shape[::-1]
        return tuple((u - l) / n for l, u, n in zip(self.lower, self.upper, counts))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        """Midpoint coordinates along spatial axis 0=x, 1=y, 2=z."""
        n = self.shape[::-1][axis]
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(n) + 0.5) * h

    def midpoints(self) -> np.ndarray:
        xs = [self.axis_centers(a) for a in range(self.ndim)]
        # meshgrid in array order (..., y, x)
        mesh = np.meshgrid(*xs[::-1], indexing="ij")
        coords = [m.ravel() for m in mesh[::-1]]
        if self.ndim == 2:
            coords.append(np.full(self.n_cells, self.plane_z))
        return np.column_stack(coords)

    def descriptor(self) -> dict:
        return {
            "shape": list(self.shape),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "plane_z": self.plane_z,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "PixelGrid":
        return cls(tuple(d["shape"]), tuple(d["lower"]), tuple(d["upper"]), d.get("plane_z", 0.0))

    @classmethod
    def square(cls, n: int, plane_z: float = 0.0) -> "PixelGrid":
        return cls((n, n), plane_z=plane_z)


def segment_field(a, b, w, scale=1.0) -> np.ndarray:
    """Closed-form field of the straight conductor from ``a`` to ``b`` at ``w``.

    Raises DegenerateGeometryError when ``w`` sits on the closed segment.
    """
    out = segments_field_many(_vec3(a)[None], _vec3(b)[None], _vec3(w)[None], scale)
    return out[0]


def segments_field_many(a, b, points, scale=1.0) -> np.ndarray:
    """Summed field of segments ``a[j] -> b[j]`` at each of ``points``; shape (P, 3)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    points = np.asarray(points, dtype=float)
    ra = a[None, :, :] - points[:, None, :]
    rb = b[None, :, :] - points[:, None, :]
    na = np.linalg.norm(ra, axis=2)
    nb = np.linalg.norm(rb, axis=2)
    prod = na * nb
    denom = prod + np.einsum("psk,psk->ps", ra, rb)
    bad = (prod < DEGENERACY_TOL) | (np.abs(denom) < DEGENERACY_TOL)
    if bad.any():
        p, s = np.argwhere(bad)[0]
        raise DegenerateGeometryError(
            f"field point {points[p].tolist()} lies on segment {int(s)}", index=(int(p), int(s))
        )
    coef = (na + nb) / (prod * denom)
    return scale * np.einsum("ps,psk->pk", coef, np.cross(ra, rb))


def coil_field(coil: SegmentedCoil, w) -> np.ndarray:
    return coil.field_at(_vec3(w)[None])[0]


def dipole_field_many(position, moment, points, scale=1.0) -> np.ndarray:
    d = np.asarray(points, dtype=float) - _vec3(position)
    r = np.linalg.norm(d, axis=1)
    if np.any(r < DEGENERACY_TOL):
        i = int(np.argmax(r < DEGENERACY_TOL))
        raise DegenerateGeometryError(f"field point {d[i].tolist()} coincides with the dipole", index=(i,))
    m = _vec3(moment)
    dm = d @ m
    return scale * (3.0 * d * (dm / r**5)[:, None] - m[None, :] / (r**3)[:, None])


def dipole_activation_field(act: DipoleActivation, w) -> np.ndarray:
    return act.field_at(_vec3(w)[None])[0]


def dipole_tensor(d) -> np.ndarray:
    """The 3x3 matrix 3 d d^T / |d|^5 - I / |d|^3."""
    d = _vec3(d)
    r = np.linalg.norm(d)
    if r < DEGENERACY_TOL:
        raise DegenerateGeometryError("dipole tensor evaluated at zero separation")
    return 3.0 * np.outer(d, d) / r**5 - np.eye(3) / r**3


def activation_field(act, points) -> np.ndarray:
    """Field of any activation (coil or dipole) at ``points``; shape (P, 3)."""
    return act.field_at(_points3(points))


__all__ = [
    "DEGENERACY_TOL",
    "DegenerateGeometryError",
    "Domain",
    "SensorSpec",
    "DipoleActivation",
    "SegmentedCoil",
    "PixelGrid",
    "segment_field",
    "segments_field_many",
    "coil_field",
    "dipole_field_many",
    "dipole_activation_field",
    "dipole_tensor",
    "activation_field",
]
