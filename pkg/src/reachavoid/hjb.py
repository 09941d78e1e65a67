"""Explicit monotone solver for the exit-time HJB equation.

The value ``V(t, x)`` is marched backward from ``V(T, .) = payoff`` with

    V^k = V^{k+1} + dt * max_u [ f(x,u) . D_u V^{k+1} + 1/2 sum_i a_ii(x,u) D2_i V^{k+1} ]

where ``D_u`` is the first-order upwind difference picked by the sign of each
drift component, ``D2_i`` the three-point second difference and
``a = sigma sigma^T`` (diagonal only). With ``dt`` below :func:`cfl_dt` every
control's update is a convex combination of stencil values, so the scheme is
monotone and obeys the discrete maximum principle.

Stop-region nodes are held at the payoff for all times; grid-edge nodes outside
the stop region are held at 0 (truncating the plane counts as hitting the
avoid set).
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid2
from .payoff import Mode, PayoffField, build_payoff
from .scenario import Scenario

__all__ = [
    "Coefficients",
    "ValueField",
    "PolicyField",
    "DynkinEval",
    "LadderReport",
    "CFLError",
    "operator_coefficients",
    "cfl_dt",
    "dynkin",
    "discrete_hamiltonian",
    "hamiltonian_field",
    "closed_form_gap",
    "step_backward",
    "solve",
    "eps_ladder",
    "time_monotonicity_violation",
    "save_value_field",
    "load_value_field",
    "CorruptArtifactError",
]

log = logging.getLogger(__name__)

CLAMP_WARN = 1e-12


class CFLError(ValueError):
    pass


class CorruptArtifactError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Per-control drift and diffusion on the grid, arrays of shape ``(nc, nx, ny)``."""

    fx: np.ndarray
    fy: np.ndarray
    axx: np.ndarray
    ayy: np.ndarray
    controls: np.ndarray
    grid: Grid2

    @property
    def rate(self) -> np.ndarray:
        """Sum of the off-centre stencil weights per unit time, shape ``(nc, nx, ny)``."""
        dx, dy = self.grid.spacing
        return (np.abs(self.fx) / dx + np.abs(self.fy) / dy
                + self.axx / (dx * dx) + self.ayy / (dy * dy))


def operator_coefficients(scenario: Scenario) -> Coefficients:
    grid = scenario.grid
    X, Y = grid.mesh()
    U = scenario.controls[:, None, None]
    fx, fy = scenario.drift(X[None], Y[None], U)
    sig = np.asarray(scenario.diffusion(X[None], Y[None], U), dtype=float)
    sig = np.broadcast_to(sig, (scenario.controls.size,) + grid.shape + (2, 2))
    a = sig @ np.swapaxes(sig, -1, -2)
    if np.any(a[..., 0, 1] != 0.0) or np.any(a[..., 1, 0] != 0.0):
        raise ValueError("diffusion with cross terms (non-diagonal sigma sigma^T) is not supported")
    shape = (scenario.controls.size,) + grid.shape
    return Coefficients(
        fx=np.broadcast_to(np.asarray(fx, dtype=float), shape).copy(),
        fy=np.broadcast_to(np.asarray(fy, dtype=float), shape).copy(),
        axx=np.ascontiguousarray(a[..., 0, 0]),
        ayy=np.ascontiguousarray(a[..., 1, 1]),
        controls=scenario.controls,
        grid=grid,
    )


def cfl_dt(scenario: Scenario, grid: Grid2 | None = None, safety: float = 1.0,
           coeffs: Coefficients | None = None) -> float:
    """Largest stable time step times ``safety``.

    ``1 / max(sum_i |f_i|/dx_i + sum_i a_ii/dx_i^2)`` over every node and control.
    """
    grid = grid or scenario.grid
    if not (0 < safety <= 1):
        raise ValueError(f"safety factor must lie in (0, 1], got {safety}")
    if not (grid.dx > 0 and grid.dy > 0):
        raise ValueError("zero grid spacing")
    if coeffs is None or coeffs.grid != grid:
        if grid != scenario.grid:
            raise ValueError("cfl_dt evaluates on the scenario grid")
        coeffs = operator_coefficients(scenario)
    rate = float(coeffs.rate.max())
    if rate == 0.0:
        return math.inf
    return safety / rate


# ---------------------------------------------------------------- operators

def _differences(v: np.ndarray, grid: Grid2):
    dx, dy = grid.spacing
    c = v[1:-1, 1:-1]
    dxp = (v[2:, 1:-1] - c) / dx
    dxm = (c - v[:-2, 1:-1]) / dx
    dyp = (v[1:-1, 2:] - c) / dy
    dym = (c - v[1:-1, :-2]) / dy
    dxx = (v[2:, 1:-1] - 2.0 * c + v[:-2, 1:-1]) / (dx * dx)
    dyy = (v[1:-1, 2:] - 2.0 * c + v[1:-1, :-2]) / (dy * dy)
    return dxp, dxm, dyp, dym, dxx, dyy


def _inner(a: np.ndarray) -> np.ndarray:
    return a[..., 1:-1, 1:-1]


def hamiltonian_field(v: np.ndarray, coeffs: Coefficients, scheme: str = "upwind"):
    """Per-control generator values on interior nodes, shape ``(nc, nx-2, ny-2)``.

    ``scheme='upwind'`` is the monotone discretisation used for time stepping;
    ``'central'`` uses centred first differences (consistency checks only).
    """
    dxp, dxm, dyp, dym, dxx, dyy = _differences(v, coeffs.grid)
    fx, fy = _inner(coeffs.fx), _inner(coeffs.fy)
    if scheme == "upwind":
        adv = (np.maximum(fx, 0.0) * dxp + np.minimum(fx, 0.0) * dxm
               + np.maximum(fy, 0.0) * dyp + np.minimum(fy, 0.0) * dym)
    elif scheme == "central":
        adv = fx * (0.5 * (dxp + dxm)) + fy * (0.5 * (dyp + dym))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return adv + 0.5 * _inner(coeffs.axx) * dxx + 0.5 * _inner(coeffs.ayy) * dyy


@dataclass(frozen=True)
class DynkinEval:
    node: tuple[int, int]
    time_index: int
    control: float
    value: float


def dynkin(phi: np.ndarray, dt: float, k: int, node: tuple[int, int], control: float,
           scenario: Scenario, scheme: str = "upwind") -> DynkinEval:
    """Discrete generator ``d_t phi + f . grad phi + 1/2 tr(a hess phi)`` at one node.

    ``phi`` is a stack of slices ``(K+1, nx, ny)`` spaced ``dt`` apart; the time
    derivative is the forward difference ``(phi[k+1] - phi[k]) / dt`` (zero
    when ``k`` is the last slice). Linear in ``phi``.
    """
    phi = np.asarray(phi, dtype=float)
    i, j = node
    nx, ny = scenario.grid.shape
    if not (0 < i < nx - 1 and 0 < j < ny - 1):
        raise ValueError(f"node {node} is not interior")
    dtphi = 0.0
    if k + 1 < phi.shape[0]:
        dtphi = (phi[k + 1, i, j] - phi[k, i, j]) / dt
    coeffs = _single_control_coeffs(scenario, control, node)
    patch = phi[k, i - 1:i + 2, j - 1:j + 2]
    h = hamiltonian_field(patch, coeffs, scheme)[0, 0, 0]
    return DynkinEval((i, j), k, float(control), float(dtphi + h))


def _single_control_coeffs(scenario: Scenario, control: float, node: tuple[int, int]) -> Coefficients:
    """Coefficients on the 3x3 patch around ``node`` for one control."""
    i, j = node
    grid = scenario.grid
    xs, ys = grid.node(np.arange(i - 1, i + 2), np.arange(j - 1, j + 2))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    u = np.full((1, 3, 3), float(control))
    fx, fy = scenario.drift(X[None], Y[None], u)
    sig = np.broadcast_to(np.asarray(scenario.diffusion(X[None], Y[None], u), dtype=float), (1, 3, 3, 2, 2))
    a = sig @ np.swapaxes(sig, -1, -2)
    patch_grid = Grid2(grid.node(i - 1, j - 1), grid.spacing, (3, 3))
    return Coefficients(np.broadcast_to(fx, (1, 3, 3)).astype(float), np.broadcast_to(fy, (1, 3, 3)).astype(float),
                        a[..., 0, 0].copy(), a[..., 1, 1].copy(), np.array([float(control)]), patch_grid)


def _closed_form(v: np.ndarray, scenario: Scenario, coeffs: Coefficients):
    """``current . Dc + V_S |Dc| + diffusion`` with the centred gradient ``Dc``.

    Returns ``(value, heading, grad_norm)`` on interior nodes.
    """
    iso = scenario.isotropic
    dxp, dxm, dyp, dym, dxx, dyy = _differences(v, coeffs.grid)
    gx, gy = 0.5 * (dxp + dxm), 0.5 * (dyp + dym)
    X, Y = coeffs.grid.mesh()
    cx, cy = iso.current(X[1:-1, 1:-1], Y[1:-1, 1:-1])
    norm = np.hypot(gx, gy)
    # diffusion of the isotropic form is control independent; take control 0's
    diff = 0.5 * _inner(coeffs.axx[0]) * dxx + 0.5 * _inner(coeffs.ayy[0]) * dyy
    value = cx * gx + cy * gy + iso.speed * norm + diff
    return value, np.arctan2(gy, gx), norm


def discrete_hamiltonian(slice_: np.ndarray, node: tuple[int, int], scenario: Scenario,
                         coeffs: Coefficients | None = None):
    """Best generator value and control at one interior node.

    Maximises the upwind generator over ``scenario.controls`` (lowest index
    wins ties). For isotropic-control scenarios the closed form
    ``current . Dc + V_S |Dc| + diffusion`` is evaluated as well and the larger
    value is returned, with the analytic heading ``atan2(Dc_y, Dc_x)`` as the
    control when the closed form wins.
    """
    v = np.asarray(slice_, dtype=float)
    i, j = node
    nx, ny = scenario.grid.shape
    if not (0 < i < nx - 1 and 0 < j < ny - 1):
        raise ValueError(f"node {node} lies on the domain edge; edges are handled by step_backward")
    coeffs = coeffs or operator_coefficients(scenario)
    sub = v[i - 1:i + 2, j - 1:j + 2]
    local = Coefficients(coeffs.fx[:, i - 1:i + 2, j - 1:j + 2], coeffs.fy[:, i - 1:i + 2, j - 1:j + 2],
                         coeffs.axx[:, i - 1:i + 2, j - 1:j + 2], coeffs.ayy[:, i - 1:i + 2, j - 1:j + 2],
                         coeffs.controls, Grid2(scenario.grid.node(i - 1, j - 1), scenario.grid.spacing, (3, 3)))
    h = hamiltonian_field(sub, local)[:, 0, 0]
    k = int(np.argmax(h))
    best, control = float(h[k]), float(coeffs.controls[k])
    if scenario.isotropic is not None:
        cf, heading, _ = _closed_form(sub, scenario, local)
        if cf[0, 0] > best:
            best, control = float(cf[0, 0]), float(heading[0, 0])
    return best, control


def closed_form_gap(slice_: np.ndarray, scenario: Scenario, coeffs: Coefficients | None = None):
    """Closed-form Hamiltonian against the control-grid maximum, same centred gradient.

    Returns ``(gap, bound)`` on interior nodes where ``bound`` is
    ``2 (pi / n_controls)^2 V_S |Dc|``.
    """
    if scenario.isotropic is None:
        raise ValueError("scenario is not flagged isotropic-control")
    coeffs = coeffs or operator_coefficients(scenario)
    v = np.asarray(slice_, dtype=float)
    discrete = hamiltonian_field(v, coeffs, scheme="central").max(axis=0)
    closed, _, norm = _closed_form(v, scenario, coeffs)
    n = scenario.controls.size
    bound = 2.0 * (math.pi / n) ** 2 * scenario.isotropic.speed * norm
    return np.abs(closed - discrete), bound


# ---------------------------------------------------------------- time stepping

def _pinned(payoff: PayoffField) -> tuple[np.ndarray, np.ndarray]:
    """Mask of nodes with prescribed values and those values."""
    grid = payoff.grid
    stop = payoff.stop_region.mask
    edge = grid.edge_mask() & ~stop
    fixed = stop | edge
    vals = np.where(stop, payoff.values, 0.0)
    return fixed, vals


def step_backward(slice_next: np.ndarray, t: float, scenario: Scenario, payoff: PayoffField, dt: float,
                  coeffs: Coefficients | None = None):
    """One explicit step from ``t + dt`` to ``t``; returns ``(slice, policy_index_slice)``.

    The policy slice holds indices into ``scenario.controls`` (argmax of the
    upwind Hamiltonian, lowest index on ties; 0 on pinned edge nodes).
    """
    coeffs = coeffs or operator_coefficients(scenario)
    rate = float(coeffs.rate.max())
    if dt < 0 or dt * rate > 1.0 + 1e-12:
        raise CFLError(f"time step {dt!r} violates the stability bound {1.0 / rate if rate else math.inf!r}")
    v = np.asarray(slice_next, dtype=float)
    h = hamiltonian_field(v, coeffs)
    idx = np.zeros(scenario.grid.shape, dtype=np.int32)
    idx[1:-1, 1:-1] = np.argmax(h, axis=0)
    out = v.copy()
    out[1:-1, 1:-1] = v[1:-1, 1:-1] + dt * np.max(h, axis=0)
    excess = max(float(out.max()) - 1.0, -float(out.min()))
    if excess > CLAMP_WARN:
        log.warning("clamp to [0, 1] triggered by %.3g at t=%g (scheme health)", excess, t)
    np.clip(out, 0.0, 1.0, out=out)
    fixed, vals = _pinned(payoff)
    out[fixed] = vals[fixed]
    return out, idx


@dataclass(eq=False)
class PolicyField:
    """Argmax control per time slice and node (stored as indices into ``controls``)."""

    index: np.ndarray  # (K+1, nx, ny)
    controls: np.ndarray
    dt: float
    tie_rule: str = "lowest-index"

    @property
    def values(self) -> np.ndarray:
        return self.controls[self.index]

    def lookup(self, t, x, y, grid: Grid2):
        """Control at the nearest time slice and nearest node (vectorised)."""
        K = self.index.shape[0] - 1
        if self.dt > 0:
            k = np.clip(np.rint(np.asarray(t, dtype=float) / self.dt).astype(np.int64), 0, K)
        else:
            k = np.zeros(np.shape(t), dtype=np.int64)
        i, j = grid.nearest(x, y)
        return self.controls[self.index[k, i, j]]


@dataclass(eq=False)
class ValueField:
    slices: np.ndarray  # (K+1, nx, ny)
    dt: float
    payoff: PayoffField
    cfl_used: float
    metadata: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.slices.shape[0] - 1

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def grid(self) -> Grid2:
        return self.payoff.grid

    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    def slice_index(self, t: float) -> int:
        if self.K == 0:
            return 0
        return int(np.clip(round(t / self.dt), 0, self.K))

    def at(self, t: float) -> np.ndarray:
        return self.slices[self.slice_index(t)]

    def interpolate(self, t: float, x: float, y: float) -> float:
        """Bilinear value at ``(x, y)`` on the nearest time slice."""
        v = self.at(t)
        g = self.grid
        fx = np.clip((x - g.origin[0]) / g.dx, 0, g.shape[0] - 1)
        fy = np.clip((y - g.origin[1]) / g.dy, 0, g.shape[1] - 1)
        i0 = min(int(fx), g.shape[0] - 2)
        j0 = min(int(fy), g.shape[1] - 2)
        sx, sy = fx - i0, fy - j0
        return float((1 - sx) * (1 - sy) * v[i0, j0] + sx * (1 - sy) * v[i0 + 1, j0]
                     + (1 - sx) * sy * v[i0, j0 + 1] + sx * sy * v[i0 + 1, j0 + 1])


def solve(scenario: Scenario, payoff: PayoffField, safety: float = 1.0) -> tuple[ValueField, PolicyField]:
    """March from ``V(T) = payoff`` back to ``t = 0``.

    ``K = ceil(T / cfl_dt)`` steps of equal length ``dt = T / K``.
    """
    if payoff.grid != scenario.grid:
        raise ValueError("scenario and payoff live on different grids")
    start = time.perf_counter()
    coeffs = operator_coefficients(scenario)
    dt_max = cfl_dt(scenario, safety=safety, coeffs=coeffs)
    T = scenario.horizon_T
    K = 0 if T == 0 else int(math.ceil(T / dt_max - 1e-12))
    dt = T / K if K else 0.0
    rate = float(coeffs.rate.max())
    nx, ny = scenario.grid.shape
    slices = np.empty((K + 1, nx, ny))
    index = np.zeros((K + 1, nx, ny), dtype=np.int32)
    slices[K] = payoff.values
    h = hamiltonian_field(slices[K], coeffs)
    index[K, 1:-1, 1:-1] = np.argmax(h, axis=0)
    for k in range(K - 1, -1, -1):
        slices[k], index[k] = step_backward(slices[k + 1], k * dt, scenario, payoff, dt, coeffs)
    vf = ValueField(slices, dt, payoff, cfl_used=dt * rate,
                    metadata={"wall_clock_s": time.perf_counter() - start, "K": K, "safety": safety})
    pf = PolicyField(index, scenario.controls.copy(), dt)
    return vf, pf


def time_monotonicity_violation(vf: ValueField) -> tuple[float, tuple[int, int, int] | None]:
    """Largest ``slice[k+1] - slice[k]`` (positive means a violation) and where."""
    if vf.K == 0:
        return 0.0, None
    diff = vf.slices[1:] - vf.slices[:-1]
    flat = int(np.argmax(diff))
    k, i, j = np.unravel_index(flat, diff.shape)
    return float(diff[k, i, j]), (int(k), int(i), int(j))


@dataclass
class LadderReport:
    eps: list[float]
    fields: list[ValueField]
    increments_t0: list[float]
    increments_all: list[float]
    worst_violation: float
    worst_node: tuple | None
    tol: float

    @property
    def ok(self) -> bool:
        return self.worst_violation <= self.tol

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "eps": self.eps,
            "max_increment_t0": self.increments_t0,
            "max_increment_all_slices": self.increments_all,
            "worst_violation": self.worst_violation,
            "worst_node": self.worst_node,
            "tolerance": self.tol,
        }


def eps_ladder(scenario: Scenario, target_A, avoid_B, eps_list, mode=Mode.WITHIN, safety: float = 1.0,
               tol: float = 1e-6) -> LadderReport:
    """Solve once per eps (strictly decreasing) and compare consecutive fields.

    Theory says the fields are pointwise nondecreasing as eps decreases; the
    report carries the worst decrease found (with its ``(eps index, k, i, j)``)
    and the largest increments between rungs, at ``t = 0`` and over all slices.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("empty eps list")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    fields = []
    for e in eps_list:
        vf, _ = solve(scenario, build_payoff(target_A, avoid_B, e, mode), safety)
        fields.append(vf)
    inc0, inc_all = [], []
    worst, where = -math.inf, None
    for n, (coarse, fine) in enumerate(zip(fields, fields[1:])):
        d = fine.slices - coarse.slices
        inc0.append(float(d[0].max()))
        inc_all.append(float(d.max()))
        flat = int(np.argmin(d))
        k, i, j = np.unravel_index(flat, d.shape)
        if -d[k, i, j] > worst:
            worst, where = float(-d[k, i, j]), (n + 1, int(k), int(i), int(j))
    if len(fields) == 1:
        worst = 0.0
    return LadderReport(eps_list, fields, inc0, inc_all, max(worst, 0.0), where if worst > tol else None, tol)


# ---------------------------------------------------------------- persistence

def _slice_csv(path: Path, arr: np.ndarray, name: str, controls: np.ndarray | None = None):
    nx, ny = arr.shape
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    lines = [f"i,j,{name}" + (",control" if controls is not None else "")]
    flat = arr.ravel()
    if controls is None:
        lines += [f"{i},{j},{v!r}" for i, j, v in zip(ii.ravel(), jj.ravel(), flat.tolist())]
    else:
        cv = controls[flat].tolist()
        lines += [f"{i},{j},{v},{c!r}" for i, j, v, c in zip(ii.ravel(), jj.ravel(), flat.tolist(), cv)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_slice_csv(path: Path, shape, dtype=float) -> np.ndarray:
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise CorruptArtifactError(f"cannot read {path}: {exc}") from None
    if raw.shape[0] != shape[0] * shape[1]:
        raise CorruptArtifactError(f"{path} has {raw.shape[0]} rows, expected {shape[0] * shape[1]}")
    out = np.zeros(shape, dtype=dtype)
    out[raw[:, 0].astype(int), raw[:, 1].astype(int)] = raw[:, 2].astype(dtype)
    return out


def _write_binary(path: Path, manifest: dict, data: np.ndarray):
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes(order="C"))


def _read_binary(path: Path):
    try:
        raw = path.read_bytes()
        (n,) = struct.unpack_from("<Q", raw, 0)
        manifest = json.loads(raw[8:8 + n].decode("utf-8"))
        data = np.frombuffer(raw, dtype="<f8", offset=8 + n)
        shape = tuple(manifest["array_shape"])
        return manifest, data.reshape(shape).copy()
    except (OSError, ValueError, KeyError, struct.error) as exc:
        raise CorruptArtifactError(f"cannot read {path}: {exc}") from None


def save_value_field(out_dir, vf: ValueField, pf: PolicyField, extra: dict | None = None,
                     fmt: str = "csv") -> list[Path]:
    """Persist a solved field; returns the files written.

    ``fmt='csv'``: ``value/slice_KKKKK.csv`` and ``policy/slice_KKKKK.csv`` per
    slice. ``fmt='binary'``: ``value.bin`` and ``policy.bin`` (see README for the
    byte layout). Both also write ``manifest.json`` and the payoff export.
    """
    from .grid import save_region

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dt": vf.dt,
        "K": vf.K,
        "T": vf.T,
        "eps": vf.payoff.eps,
        "mode": vf.payoff.mode.value,
        "cfl_used": vf.cfl_used,
        "grid": vf.grid.to_dict(),
        "controls": [float(c) for c in pf.controls],
        "tie_rule": pf.tie_rule,
        "format": fmt,
    }
    manifest.update(extra or {})
    written = []
    if fmt == "csv":
        (out / "value").mkdir(exist_ok=True)
        (out / "policy").mkdir(exist_ok=True)
        for k in range(vf.K + 1):
            p = out / "value" / f"slice_{k:05d}.csv"
            _slice_csv(p, vf.slices[k], "value")
            q = out / "policy" / f"slice_{k:05d}.csv"
            _slice_csv(q, pf.index[k], "control_index", pf.controls)
            written += [p, q]
    elif fmt == "binary":
        shape = list(vf.slices.shape)
        p = out / "value.bin"
        _write_binary(p, dict(manifest, array="value", array_shape=shape), vf.slices)
        q = out / "policy.bin"
        _write_binary(q, dict(manifest, array="policy_control", array_shape=shape), pf.values)
        written += [p, q]
    else:
        raise ValueError(f"unknown format {fmt!r}")
    written += list(save_region(vf.payoff.eroded_target, out / "payoff",
                                extra={"eps": vf.payoff.eps, "mode": vf.payoff.mode.value},
                                values=vf.payoff.values))
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    written.append(mpath)
    return written


def load_value_field(out_dir, scenario: Scenario) -> tuple[ValueField, PolicyField, dict]:
    """Load a field written by :func:`save_value_field`; the payoff is rebuilt from
    ``scenario`` and checked against the stored export."""
    from .grid import load_region

    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        K, dt = int(manifest["K"]), float(manifest["dt"])
        controls = np.asarray(manifest["controls"], dtype=float)
        grid = Grid2.from_dict(manifest["grid"])
        eps, mode, fmt = float(manifest["eps"]), manifest["mode"], manifest.get("format", "csv")
    except (OSError, ValueError, KeyError) as exc:
        raise CorruptArtifactError(f"bad manifest in {out}: {exc}") from None
    if grid != scenario.grid:
        raise CorruptArtifactError("stored grid does not match the scenario grid")
    payoff = build_payoff(scenario.target_A, scenario.avoid_B, eps, mode)
    try:
        _, _, stored_values = load_region(out / "payoff")
    except (OSError, ValueError, KeyError) as exc:
        raise CorruptArtifactError(f"bad payoff export: {exc}") from None
    if stored_values is None or not np.array_equal(stored_values, payoff.values):
        raise CorruptArtifactError("stored payoff does not match the scenario")
    shape = (K + 1,) + grid.shape
    if fmt == "csv":
        slices = np.empty(shape)
        index = np.empty(shape, dtype=np.int32)
        for k in range(K + 1):
            slices[k] = _read_slice_csv(out / "value" / f"slice_{k:05d}.csv", grid.shape)
            index[k] = _read_slice_csv(out / "policy" / f"slice_{k:05d}.csv", grid.shape, np.int32)
    elif fmt == "binary":
        _, slices = _read_binary(out / "value.bin")
        _, pvals = _read_binary(out / "policy.bin")
        if slices.shape != shape or pvals.shape != shape:
            raise CorruptArtifactError("binary arrays have the wrong shape")
        lookup = {float(c): n for n, c in enumerate(controls)}
        try:
            index = np.vectorize(lambda c: lookup[float(c)], otypes=[np.int32])(pvals)
        except KeyError:
            raise CorruptArtifactError("policy holds a control outside the control set") from None
    else:
        raise CorruptArtifactError(f"unknown format {fmt!r}")
    if index.min() < 0 or index.max() >= controls.size:
        raise CorruptArtifactError("policy index out of range")
    vf = ValueField(slices, dt, payoff, float(manifest["cfl_used"]), {"K": K})
    return vf, PolicyField(index, controls, dt), manifest
