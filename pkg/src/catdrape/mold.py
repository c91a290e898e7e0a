"""Mold surfaces: height, clearance and ideal target lattices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class OutOfDomain(ValueError):
    pass


class MoldSurface:
    """Interface shared by the mold kinds."""

    def height(self, x: float, y: float) -> float:
        raise NotImplementedError

    def contains(self, x: float, y: float) -> bool:
        raise NotImplementedError

    def heights(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`height` for an (n, 2) array."""
        return np.array([self.height(float(x), float(y)) for x, y in np.asarray(xy)[:, :2]])

    def vertical_clearance(self, p) -> float:
        """p.z minus the surface height below p; negative means penetration."""
        return float(p[2]) - self.height(float(p[0]), float(p[1]))

    def clearances(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts[:, 2] - self.heights(pts[:, :2])

    def slope_along(self, x: float, y: float, direction) -> float:
        """Directional derivative of the height along a horizontal unit vector."""
        d = np.asarray(direction, dtype=float)[:2]
        h = 1e-6
        return (self.height(x + h * d[0], y + h * d[1]) - self.height(x - h * d[0], y - h * d[1])) / (2 * h)


@dataclass(frozen=True)
class ShearedPlane(MoldSurface):
    """Flat mold at height ``z0`` over a parallelogram domain.

    The domain is spanned by ``size[0] * (1, 0)`` and ``size[1] * (sin(shear), cos(shear))``
    and centered on ``center``.
    """

    z0: float = 0.0
    shear: float = 0.0
    size: tuple[float, float] = (1.0, 1.0)
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not abs(self.shear) < math.pi / 2:
            raise ValueError("shear angle must lie in (-90, 90) degrees")
        if min(self.size) <= 0:
            raise ValueError("mold size must be positive")

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([1.0, 0.0]), np.array([math.sin(self.shear), math.cos(self.shear)])

    def _oblique(self, x: float, y: float) -> tuple[float, float]:
        # (x, y) - center = a * e1 + b * e2
        dx, dy = x - self.center[0], y - self.center[1]
        b = dy / math.cos(self.shear)
        a = dx - b * math.sin(self.shear)
        return a, b

    def contains(self, x: float, y: float) -> bool:
        a, b = self._oblique(x, y)
        tol = 1e-12
        return abs(a) <= 0.5 * self.size[0] + tol and abs(b) <= 0.5 * self.size[1] + tol

    def height(self, x: float, y: float) -> float:
        if not self.contains(x, y):
            raise OutOfDomain(f"({x:.6g}, {y:.6g}) outside the sheared plane")
        return self.z0

    def heights(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        dx = xy[:, 0] - self.center[0]
        dy = xy[:, 1] - self.center[1]
        b = dy / math.cos(self.shear)
        a = dx - b * math.sin(self.shear)
        tol = 1e-12
        inside = (np.abs(a) <= 0.5 * self.size[0] + tol) & (np.abs(b) <= 0.5 * self.size[1] + tol)
        if not np.all(inside):
            k = int(np.argmin(inside))
            raise OutOfDomain(f"({xy[k, 0]:.6g}, {xy[k, 1]:.6g}) outside the sheared plane")
        return np.full(len(xy), self.z0)

    def slope_along(self, x: float, y: float, direction) -> float:
        return 0.0


@dataclass(frozen=True)
class Heightfield(MoldSurface):
    """Bilinear interpolation on a rectilinear grid; ``z[i, j]`` sits at ``(xs[i], ys[j])``."""

    xs: np.ndarray
    ys: np.ndarray
    z: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        xs, ys, z = (np.asarray(v, dtype=float) for v in (self.xs, self.ys, self.z))
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "z", z)
        if len(xs) < 2 or len(ys) < 2:
            raise ValueError("heightfield needs at least 2x2 nodes")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("heightfield axes must be strictly increasing")
        if z.shape != (len(xs), len(ys)):
            raise ValueError(f"z has shape {z.shape}, expected {(len(xs), len(ys))}")

    def contains(self, x: float, y: float) -> bool:
        return self.xs[0] <= x <= self.xs[-1] and self.ys[0] <= y <= self.ys[-1]

    def heights(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        x, y = xy[:, 0], xy[:, 1]
        bad = (x < self.xs[0]) | (x > self.xs[-1]) | (y < self.ys[0]) | (y > self.ys[-1])
        if np.any(bad):
            k = int(np.argmax(bad))
            raise OutOfDomain(f"({x[k]:.6g}, {y[k]:.6g}) outside the heightfield")
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        j = np.clip(np.searchsorted(self.ys, y, side="right") - 1, 0, len(self.ys) - 2)
        tx = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i])
        ty = (y - self.ys[j]) / (self.ys[j + 1] - self.ys[j])
        z = self.z
        return (
            z[i, j] * (1 - tx) * (1 - ty)
            + z[i + 1, j] * tx * (1 - ty)
            + z[i, j + 1] * (1 - tx) * ty
            + z[i + 1, j + 1] * tx * ty
        )

    def height(self, x: float, y: float) -> float:
        return float(self.heights(np.array([[x, y]]))[0])


def load_heightfield_csv(path: str | Path) -> Heightfield:
    """Read a ``x,y,z`` CSV holding a full rectilinear grid (any row order)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x", "y", "z"]:
            raise ValueError(f"{path}: header must be x,y,z")
        rows = [(float(r["x"]), float(r["y"]), float(r["z"])) for r in reader]
    data = np.array(rows)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    if len(data) != len(xs) * len(ys):
        raise ValueError(f"{path}: {len(data)} rows do not form a {len(xs)}x{len(ys)} grid")
    z = np.full((len(xs), len(ys)), np.nan)
    z[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
    if np.isnan(z).any():
        raise ValueError(f"{path}: grid has missing nodes")
    return Heightfield(xs, ys, z)


def lattice(center, rows: int, cols: int, step: float, shear: float = 0.0) -> np.ndarray:
    """Plan positions of a rows x cols parallelogram lattice, row-major.

    Gripper (i, j) sits at ``center + (j - jc) * step * e1 + (i - ic) * step * e2``
    with ``e1 = (1, 0)`` and ``e2 = (sin(shear), cos(shear))``.
    """
    e1 = np.array([1.0, 0.0])
    e2 = np.array([math.sin(shear), math.cos(shear)])
    ic, jc = 0.5 * (rows - 1), 0.5 * (cols - 1)
    out = np.empty((rows * cols, 2))
    for i in range(rows):
        for j in range(cols):
            out[i * cols + j] = np.asarray(center, dtype=float) + (j - jc) * step * e1 + (i - ic) * step * e2
    return out


def target_points(mold: MoldSurface, rows: int, cols: int, cell_length: float, shear: float | None = None) -> np.ndarray:
    """Ideal draped gripper positions on the mold, (rows*cols, 3) row-major.

    For the sheared plane the lattice has side ``cell_length`` and the mold's own
    shear angle.  For a heightfield the plan lattice (``shear`` defaults to 0)
    is lifted onto the surface; spacing is then exact in plan only.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    if cell_length <= 0:
        raise ValueError("cell_length must be positive")
    if isinstance(mold, ShearedPlane):
        center, angle = mold.center, mold.shear if shear is None else shear
    else:
        hf = mold
        center = (0.5 * (hf.xs[0] + hf.xs[-1]), 0.5 * (hf.ys[0] + hf.ys[-1]))
        angle = 0.0 if shear is None else shear
    xy = lattice(center, rows, cols, cell_length, angle)
    z = mold.heights(xy)
    return np.column_stack([xy, z])
