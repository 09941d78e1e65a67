"""Uniform 2-D node grids, set regions and exact Euclidean distance fields.

A :class:`SetRegion` is a boolean mask over the nodes of a :class:`Grid2`
together with two distance fields measured node-to-node:

* ``dist_in``  -- distance from a node to the nearest node *outside* the set,
* ``dist_out`` -- distance from a node to the nearest node *inside* the set.

Both are exact Euclidean distances (no chamfer approximation, no sub-cell
boundary reconstruction). When the opposite set is empty the distance is the
sentinel ``10 * grid.diameter``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

__all__ = [
    "Grid2",
    "SetRegion",
    "GridMismatchError",
    "build_region",
    "region_from_mask",
    "erode",
    "union",
    "distance_to_mask",
    "save_region",
    "load_region",
]

SENTINEL_FACTOR = 10.0


class GridMismatchError(ValueError):
    """Two regions (or a region and a field) live on different grids."""


@dataclass(frozen=True)
class Grid2:
    """Uniform rectangular node grid.

    Node ``(i, j)`` sits at ``origin + (i * dx, j * dy)``; arrays defined on
    the grid have shape ``(nx, ny)`` and are indexed ``[i, j]``.
    """

    origin: tuple[float, float]
    spacing: tuple[float, float]
    shape: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if self.shape[0] < 3 or self.shape[1] < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.shape}")

    @property
    def dx(self) -> float:
        return self.spacing[0]

    @property
    def dy(self) -> float:
        return self.spacing[1]

    @property
    def cell_diagonal(self) -> float:
        return float(np.hypot(self.dx, self.dy))

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)`` of the node bounding box."""
        x0, y0 = self.origin
        return (x0, x0 + (self.shape[0] - 1) * self.dx, y0, y0 + (self.shape[1] - 1) * self.dy)

    @property
    def diameter(self) -> float:
        xmin, xmax, ymin, ymax = self.extent
        return float(np.hypot(xmax - xmin, ymax - ymin))

    @property
    def sentinel(self) -> float:
        return SENTINEL_FACTOR * self.diameter

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.shape[0]) * self.dx
        ys = self.origin[1] + np.arange(self.shape[1]) * self.dy
        return xs, ys

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = self.axes()
        return np.meshgrid(xs, ys, indexing="ij")

    def node(self, i, j):
        """Coordinates of node ``(i, j)`` (vectorised)."""
        return (self.origin[0] + np.asarray(i) * self.dx, self.origin[1] + np.asarray(j) * self.dy)

    def nearest(self, x, y, clip: bool = True):
        """Index of the nearest node; clipped into range unless ``clip`` is False."""
        i = np.rint((np.asarray(x, dtype=float) - self.origin[0]) / self.dx).astype(np.int64)
        j = np.rint((np.asarray(y, dtype=float) - self.origin[1]) / self.dy).astype(np.int64)
        if clip:
            i = np.clip(i, 0, self.shape[0] - 1)
            j = np.clip(j, 0, self.shape[1] - 1)
        return i, j

    def contains(self, x, y):
        xmin, xmax, ymin, ymax = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def edge_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": list(self.spacing), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid2":
        return cls(tuple(d["origin"]), tuple(d["spacing"]), tuple(d["shape"]))


@dataclass(frozen=True, eq=False)
class SetRegion:
    grid: Grid2
    mask: np.ndarray
    dist_in: np.ndarray
    dist_out: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())

    def same_mask(self, other: "SetRegion") -> bool:
        return self.grid == other.grid and bool(np.array_equal(self.mask, other.mask))

    def contains(self, x, y):
        """Membership of arbitrary points by nearest-node lookup (False outside the box)."""
        inside = self.grid.contains(x, y)
        i, j = self.grid.nearest(x, y)
        return inside & self.mask[i, j]


def distance_to_mask(grid: Grid2, feature: np.ndarray) -> np.ndarray:
    """Exact node-to-node Euclidean distance to the nearest ``True`` node.

    Uses the exact separable transform from ``scipy.ndimage`` with the grid
    spacing as sampling (not a chamfer approximation). Nodes with no feature
    anywhere get ``grid.sentinel``.
    """
    feature = np.asarray(feature, dtype=bool)
    if feature.shape != grid.shape:
        raise GridMismatchError(f"mask shape {feature.shape} != grid shape {grid.shape}")
    if not feature.any():
        return np.full(grid.shape, grid.sentinel)
    return ndimage.distance_transform_edt(~feature, sampling=grid.spacing)


def region_from_mask(grid: Grid2, mask: np.ndarray, warnings: tuple[str, ...] = ()) -> SetRegion:
    mask = np.array(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise GridMismatchError(f"mask shape {mask.shape} != grid shape {grid.shape}")
    dist_out = distance_to_mask(grid, mask)
    dist_in = distance_to_mask(grid, ~mask)
    dist_out[mask] = 0.0
    dist_in[~mask] = 0.0
    for a in (mask, dist_in, dist_out):
        a.setflags(write=False)
    return SetRegion(grid, mask, dist_in, dist_out, tuple(warnings))


def build_region(grid: Grid2, indicator: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> SetRegion:
    """Sample ``indicator(x, y)`` at every node and compute both distance fields.

    ``indicator`` receives the full coordinate meshes and must return a
    boolean array of the same shape (or something broadcastable to it).
    """
    X, Y = grid.mesh()
    mask = np.broadcast_to(np.asarray(indicator(X, Y), dtype=bool), grid.shape)
    return region_from_mask(grid, mask)


def erode(region: SetRegion, eps: float) -> SetRegion:
    """Keep the nodes whose distance to the complement is at least ``eps``."""
    if eps < 0:
        raise ValueError(f"erosion radius must be >= 0, got {eps}")
    mask = region.mask & (region.dist_in >= eps)
    warn: tuple[str, ...] = ()
    if not mask.any():
        warn = (f"erosion by {eps!r} removed every node (radius exceeds the set's inradius)",)
    return region_from_mask(region.grid, mask, warn)


def union(a: SetRegion, b: SetRegion) -> SetRegion:
    if a.grid != b.grid:
        raise GridMismatchError("cannot unite regions defined on different grids")
    return region_from_mask(a.grid, a.mask | b.mask)


def save_region(region: SetRegion, path, extra: dict | None = None, values: np.ndarray | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (one row per node) and ``<path>.json`` (grid metadata).

    ``values`` adds a ``value`` column; ``extra`` is merged into the sidecar.
    """
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    nx, ny = region.grid.shape
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["i", "j", "mask", "dist_in", "dist_out"]
        if values is not None:
            header.append("value")
        w.writerow(header)
        for i in range(nx):
            for j in range(ny):
                row = [i, j, int(region.mask[i, j]), repr(float(region.dist_in[i, j])), repr(float(region.dist_out[i, j]))]
                if values is not None:
                    row.append(repr(float(values[i, j])))
                w.writerow(row)
    meta = {"grid": region.grid.to_dict(), "warnings": list(region.warnings)}
    if extra:
        meta.update(extra)
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return csv_path, json_path


def load_region(path) -> tuple[SetRegion, dict, np.ndarray | None]:
    """Inverse of :func:`save_region`; returns ``(region, sidecar, values-or-None)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    grid = Grid2.from_dict(meta["grid"])
    mask = np.zeros(grid.shape, dtype=bool)
    dist_in = np.zeros(grid.shape)
    dist_out = np.zeros(grid.shape)
    values = None
    with open(path.with_suffix(".csv"), newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        has_values = "value" in (r.fieldnames or [])
        if has_values:
            values = np.zeros(grid.shape)
        for row in r:
            i, j = int(row["i"]), int(row["j"])
            mask[i, j] = row["mask"] == "1"
            dist_in[i, j] = float(row["dist_in"])
            dist_out[i, j] = float(row["dist_out"])
            if has_values:
                values[i, j] = float(row["value"])
    for a in (mask, dist_in, dist_out):
        a.setflags(write=False)
    return SetRegion(grid, mask, dist_in, dist_out, tuple(meta.get("warnings", ()))), meta, values
