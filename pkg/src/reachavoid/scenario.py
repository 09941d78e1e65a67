"""Controlled diffusions, reach/avoid sets and scenario files.

Drift and diffusion are plain numpy-vectorised callables::

    drift(x, y, u)      -> (fx, fy)
    diffusion(x, y, u)  -> array of shape broadcast(x, y, u).shape + (2, 2)

so the same closures serve the grid solver (broadcast over controls x nodes)
and the path simulator (broadcast over paths).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .grid import Grid2, SetRegion, build_region

__all__ = [
    "Scenario",
    "ZermeloParams",
    "IsotropicControl",
    "ValidationReport",
    "ScenarioError",
    "zermelo_scenario",
    "corridor_scenario",
    "validate",
    "shape_indicator",
    "scenario_from_config",
    "load_scenario",
    "config_hash",
]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class IsotropicControl:
    """Marks drift of the form ``current(x, y) + speed * (cos u, sin u)``.

    For such models ``sup_u f(x,u).p = current.p + speed * |p|``.
    """

    current: Callable
    speed: float


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: Grid2
    drift: Callable
    diffusion: Callable
    controls: np.ndarray
    horizon_T: float
    target_A: SetRegion
    avoid_B: SetRegion
    isotropic: IsotropicControl | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=float).ravel()
        if controls.size == 0:
            raise ScenarioError("control set is empty")
        controls.setflags(write=False)
        object.__setattr__(self, "controls", controls)
        if not self.horizon_T >= 0:
            raise ScenarioError(f"horizon must be >= 0, got {self.horizon_T}")
        if self.target_A.grid != self.grid or self.avoid_B.grid != self.grid:
            raise ScenarioError("target and avoid sets must live on the scenario grid")


def _require_disjoint(target_A: SetRegion, avoid_B: SetRegion) -> None:
    if np.any(target_A.mask & avoid_B.mask):
        raise ScenarioError("target and avoid sets overlap")


@dataclass(frozen=True)
class ZermeloParams:
    a: float = 0.0
    V_S: float = 0.6
    sigma_x: float = 0.5
    sigma_y: float = 0.2
    n_alpha: int = 32

    def __post_init__(self):
        if self.V_S < 0:
            raise ScenarioError(f"V_S must be >= 0, got {self.V_S}")
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ScenarioError("sigma_x and sigma_y must be > 0")
        if int(self.n_alpha) != self.n_alpha or self.n_alpha < 8:
            raise ScenarioError(f"n_alpha must be an integer >= 8, got {self.n_alpha}")


def _diag_diffusion(sx: float, sy: float) -> Callable:
    def diffusion(x, y, u):
        shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(u)).shape
        out = np.zeros(shape + (2, 2))
        out[..., 0, 0] = sx
        out[..., 1, 1] = sy
        return out

    return diffusion


def heading_grid(n_alpha: int) -> np.ndarray:
    """``n_alpha`` angles uniformly spanning ``[-pi, pi)``."""
    return -math.pi + 2.0 * math.pi * np.arange(n_alpha) / n_alpha


def zermelo_scenario(params: ZermeloParams, grid: Grid2, target_A: SetRegion, avoid_B: SetRegion,
                     horizon_T: float, metadata: dict | None = None) -> Scenario:
    """Swimmer in a river: current ``1 - a y^2`` along x plus heading ``alpha`` at speed ``V_S``."""
    _require_disjoint(target_A, avoid_B)
    a, vs = float(params.a), float(params.V_S)

    def current(x, y):
        y = np.asarray(y, dtype=float)
        return 1.0 - a * y * y, np.zeros_like(y)

    def drift(x, y, u):
        u = np.asarray(u, dtype=float)
        cx, _ = current(x, y)
        fx = cx + vs * np.cos(u)
        fy = vs * np.sin(u) + np.zeros_like(cx)
        return np.broadcast_arrays(fx, fy)

    meta = {"model": "zermelo", "params": {"a": a, "V_S": vs, "sigma_x": params.sigma_x,
                                           "sigma_y": params.sigma_y, "n_alpha": int(params.n_alpha)},
            "delta_check": min(params.sigma_x, params.sigma_y) ** 2,
            "kernel": {"c0": 1.0, "a": a, "V_S": vs, "sigma_x": float(params.sigma_x),
                       "sigma_y": float(params.sigma_y)}}
    meta.update(metadata or {})
    return Scenario(
        grid=grid,
        drift=drift,
        diffusion=_diag_diffusion(params.sigma_x, params.sigma_y),
        controls=heading_grid(int(params.n_alpha)),
        horizon_T=float(horizon_T),
        target_A=target_A,
        avoid_B=avoid_B,
        isotropic=IsotropicControl(current=current, speed=vs),
        metadata=meta,
    )


def corridor_scenario(grid: Grid2, target_A: SetRegion, avoid_B: SetRegion, horizon_T: float,
                      sigma_x: float, sigma_y: float, metadata: dict | None = None) -> Scenario:
    """Uncontrolled driftless diffusion (single dummy control ``0``)."""
    _require_disjoint(target_A, avoid_B)

    def drift(x, y, u):
        z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y), np.asarray(u)).shape)
        return z, z.copy()

    meta = {"model": "corridor", "params": {"sigma_x": sigma_x, "sigma_y": sigma_y},
            "delta_check": min(sigma_x, sigma_y) ** 2,
            "kernel": {"c0": 0.0, "a": 0.0, "V_S": 0.0, "sigma_x": float(sigma_x), "sigma_y": float(sigma_y)}}
    meta.update(metadata or {})
    return Scenario(grid, drift, _diag_diffusion(sigma_x, sigma_y), np.array([0.0]),
                    float(horizon_T), target_A, avoid_B, None, meta)


@dataclass
class ValidationReport:
    min_eig: float
    lipschitz_estimate: float
    disjoint: bool
    diagonal_diffusion: bool
    n_samples: int
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "min_eig_sigma_sigmaT": self.min_eig,
            "lipschitz_estimate": self.lipschitz_estimate,
            "disjoint": self.disjoint,
            "diagonal_diffusion": self.diagonal_diffusion,
            "n_samples": self.n_samples,
            "failures": list(self.failures),
        }


def validate(scenario: Scenario, n_samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Spot-check the standing assumptions on random (state, control) samples.

    Non-degeneracy is the smallest eigenvalue of ``sigma sigma^T``; Lipschitz
    continuity of the drift is estimated by the largest finite-difference
    ratio between pairs of nearby samples sharing a control.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = scenario.grid.extent
    x = rng.uniform(xmin, xmax, n_samples)
    y = rng.uniform(ymin, ymax, n_samples)
    u = scenario.controls[rng.integers(0, scenario.controls.size, n_samples)]

    sig = np.asarray(scenario.diffusion(x, y, u), dtype=float).reshape(n_samples, 2, 2)
    a = sig @ np.swapaxes(sig, -1, -2)
    min_eig = float(np.linalg.eigvalsh(a).min())
    diagonal = bool(np.all(a[:, 0, 1] == 0.0) and np.all(a[:, 1, 0] == 0.0))

    h = 1e-3 * min(scenario.grid.spacing)
    dx = rng.normal(size=(n_samples, 2))
    dx *= h / np.linalg.norm(dx, axis=1, keepdims=True)
    f0 = np.stack(scenario.drift(x, y, u), axis=-1)
    f1 = np.stack(scenario.drift(x + dx[:, 0], y + dx[:, 1], u), axis=-1)
    lip = float(np.max(np.linalg.norm(f1 - f0, axis=1) / h))

    disjoint = not bool(np.any(scenario.target_A.mask & scenario.avoid_B.mask))

    failures = []
    if not min_eig > 0:
        failures.append(f"non-degeneracy: min eigenvalue of sigma sigma^T is {min_eig!r}")
    if not disjoint:
        failures.append("target and avoid sets overlap")
    if not diagonal:
        failures.append("diffusion has cross terms; only diagonal sigma sigma^T is supported")
    if not np.isfinite(lip):
        failures.append("drift is not finite on sampled states")
    if scenario.target_A.empty:
        failures.append("target set is empty")
    return ValidationReport(min_eig, lip, disjoint, diagonal, n_samples, failures)


# ---------------------------------------------------------------- shape specs

def shape_indicator(spec: dict) -> Callable:
    """Turn a shape-spec dictionary into a vectorised indicator ``(x, y) -> bool``.

    Supported ``type`` values: ``disk`` (center, radius), ``rect`` (min, max),
    ``halfplane`` (normal, offset: points with ``normal . x >= offset``),
    ``union`` (parts), ``empty``.
    """
    kind = spec.get("type")
    if kind == "disk":
        cx, cy = map(float, spec["center"])
        r = float(spec["radius"])
        return lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r * r
    if kind == "rect":
        (x0, y0), (x1, y1) = spec["min"], spec["max"]
        return lambda x, y: (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    if kind == "halfplane":
        nx, ny = map(float, spec["normal"])
        c = float(spec["offset"])
        return lambda x, y: nx * x + ny * y >= c
    if kind == "union":
        parts = [shape_indicator(p) for p in spec["parts"]]

        def ind(x, y):
            out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
            for p in parts:
                out |= p(x, y)
            return out

        return ind
    if kind == "empty":
        return lambda x, y: np.zeros(np.broadcast(x, y).shape, dtype=bool)
    raise ScenarioError(f"unknown shape type {kind!r}")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def scenario_from_config(config: dict) -> Scenario:
    try:
        grid = Grid2.from_dict(config["grid"])
        target = build_region(grid, shape_indicator(config["target"]))
        avoid = build_region(grid, shape_indicator(config["avoid"]))
        T = float(config["horizon_T"])
        model = config.get("model")
        params = dict(config.get("params", {}))
    except KeyError as exc:
        raise ScenarioError(f"scenario config missing key {exc}") from None
    meta = {"config_hash": config_hash(config), "units": config.get("units", {})}
    if model == "zermelo":
        return zermelo_scenario(ZermeloParams(**params), grid, target, avoid, T, meta)
    if model == "corridor":
        return corridor_scenario(grid, target, avoid, T, float(params["sigma_x"]),
                                 float(params.get("sigma_y", params["sigma_x"])), meta)
    raise ScenarioError(f"unknown model {model!r}")


def load_scenario(path) -> tuple[Scenario, dict]:
    path = Path(path)
    config = json.loads(path.read_text(encoding="utf-8"))
    return scenario_from_config(config), config
