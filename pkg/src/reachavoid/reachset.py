"""Super-level sets ``{x : V(t, x) > p}`` of a solved value field.

Contours are traced with marching squares at level ``p`` and linear
interpolation along cell edges. A corner whose value equals ``p`` exactly
counts as outside (the set is defined by a strict inequality). Saddle cells
are resolved with the average of the four corner values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid2

__all__ = ["ReachSet", "NestednessReport", "extract", "extract_from_slice", "marching_squares",
           "nestedness_check", "save_reachset"]


@dataclass(eq=False)
class ReachSet:
    mask: np.ndarray
    t: float
    p: float
    contours: list
    grid: Grid2
    t_requested: float | None = None
    slice_index: int | None = None

    @property
    def snapped(self) -> bool:
        return self.t_requested is not None and self.t_requested != self.t

    def to_geojson(self) -> dict:
        feats = []
        for c in self.contours:
            feats.append({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [[float(x), float(y)] for x, y in c["coordinates"]]},
                "properties": {"level": self.p, "t": self.t, "closed": c["closed"]},
            })
        return {"type": "FeatureCollection", "features": feats,
                "properties": {"p": self.p, "t": self.t, "t_requested": self.t_requested,
                               "slice_index": self.slice_index, "grid": self.grid.to_dict()}}


def _edge_point(grid: Grid2, v: np.ndarray, key, level: float):
    """Crossing point on the grid edge ``key = (axis, i, j)`` by linear interpolation."""
    axis, i, j = key
    a = v[i, j]
    b = v[i + 1, j] if axis == 0 else v[i, j + 1]
    s = (level - a) / (b - a)
    x0, y0 = grid.node(i, j)
    if axis == 0:
        return (float(x0 + s * grid.dx), float(y0))
    return (float(x0), float(y0 + s * grid.dy))


def marching_squares(v: np.ndarray, grid: Grid2, level: float) -> list:
    """Level lines of ``v`` at ``level`` as a list of ``{"coordinates", "closed"}`` polylines."""
    v = np.asarray(v, dtype=float)
    ins = v > level
    c0, c1, c2, c3 = ins[:-1, :-1], ins[1:, :-1], ins[1:, 1:], ins[:-1, 1:]
    mixed = ~((c0 == c1) & (c1 == c2) & (c2 == c3))
    segments = []
    for i, j in np.argwhere(mixed):
        i, j = int(i), int(j)
        bottom, right, top, left = (0, i, j), (1, i + 1, j), (0, i, j + 1), (1, i, j)
        corners = (ins[i, j], ins[i + 1, j], ins[i + 1, j + 1], ins[i, j + 1])
        # edge e joins corners (e, e+1)
        edges = (bottom, right, top, left)
        crossing = [edges[e] for e in range(4) if corners[e] != corners[(e + 1) % 4]]
        if len(crossing) == 2:
            segments.append(tuple(crossing))
            continue
        centre = (v[i, j] + v[i + 1, j] + v[i + 1, j + 1] + v[i, j + 1]) / 4.0 > level
        if centre == corners[0]:
            # corners 0 and 2 joined through the centre: cut off corners 1 and 3
            segments += [(bottom, right), (top, left)]
        else:
            segments += [(left, bottom), (right, top)]
    return _stitch(segments, v, grid, level)


def _stitch(segments, v, grid, level) -> list:
    adj: dict = {}
    for n, (a, b) in enumerate(segments):
        adj.setdefault(a, []).append(n)
        adj.setdefault(b, []).append(n)
    used = np.zeros(len(segments), dtype=bool)
    lines = []

    def walk(start_key, seg):
        keys = [start_key]
        cur = start_key
        while seg is not None:
            used[seg] = True
            a, b = segments[seg]
            nxt = b if a == cur else a
            keys.append(nxt)
            cur = nxt
            seg = next((s for s in adj[cur] if not used[s]), None)
        return keys

    # open chains start at edge keys of degree one (the grid boundary)
    for key in sorted(adj):
        if len(adj[key]) == 1 and not used[adj[key][0]]:
            keys = walk(key, adj[key][0])
            lines.append({"coordinates": [_edge_point(grid, v, k, level) for k in keys], "closed": False})
    for n in range(len(segments)):
        if not used[n]:
            start = segments[n][0]
            keys = walk(start, n)
            lines.append({"coordinates": [_edge_point(grid, v, k, level) for k in keys],
                          "closed": keys[0] == keys[-1]})
    return lines


def _check_p(p: float):
    if not (0.0 <= p < 1.0):
        raise ValueError(f"threshold p must satisfy 0 <= p < 1, got {p}")


def extract_from_slice(values: np.ndarray, grid: Grid2, p: float, t: float = 0.0) -> ReachSet:
    _check_p(p)
    values = np.asarray(values, dtype=float)
    return ReachSet(values > p, float(t), float(p), marching_squares(values, grid, p), grid)


def extract(value, t: float, p: float) -> ReachSet:
    """Reach set at the time slice nearest ``t`` (the snap is recorded)."""
    _check_p(p)
    T = value.T
    if not (-1e-12 * max(T, 1.0) <= t <= T * (1 + 1e-12) + 1e-12):
        raise ValueError(f"t={t} outside [0, {T}]")
    k = value.slice_index(t)
    t_snap = k * value.dt
    rs = extract_from_slice(value.slices[k], value.grid, p, t_snap)
    rs.t_requested = float(t)
    rs.slice_index = k
    return rs


@dataclass
class NestednessReport:
    p: float
    times: list
    slice_indices: list
    sizes: list
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "p": self.p, "times": self.times, "slice_indices": self.slice_indices,
                "mask_sizes": self.sizes, "violations": self.violations}


def nestedness_check(value, p: float, times) -> NestednessReport:
    """Check ``mask(t_i) >= mask(t_j)`` for every pair ``t_i < t_j``."""
    times = [float(t) for t in times]
    if not times:
        raise ValueError("times must be non-empty")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    sets = [extract(value, t, p) for t in times]
    violations = []
    for a in range(len(sets)):
        for b in range(a + 1, len(sets)):
            extra = sets[b].mask & ~sets[a].mask
            if extra.any():
                nodes = np.argwhere(extra)
                violations.append({"t_early": sets[a].t, "t_late": sets[b].t, "n_nodes": int(nodes.shape[0]),
                                   "nodes": nodes[:20].tolist()})
    return NestednessReport(float(p), times, [s.slice_index for s in sets], [int(s.mask.sum()) for s in sets],
                            violations)


def save_reachset(rs: ReachSet, stem) -> list[Path]:
    """Write ``<stem>.geojson`` (contours) and ``<stem>_mask.csv``."""
    stem = Path(stem)
    gj = stem.parent / f"{stem.name}.geojson"
    gj.write_text(json.dumps(rs.to_geojson(), indent=1), encoding="utf-8")
    mpath = stem.parent / f"{stem.name}_mask.csv"
    nx, ny = rs.mask.shape
    lines = ["i,j,mask"] + [f"{i},{j},{int(rs.mask[i, j])}" for i in range(nx) for j in range(ny)]
    mpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [gj, mpath]
