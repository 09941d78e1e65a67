"""Euler-Maruyama path simulation, hitting detection and pathwise functionals.

Randomness comes from a counter-based generator (Philox4x32-10): the pair of
standard normals used by path ``p`` at step ``k`` is a pure function of
``(seed, p, k)``. Estimates therefore do not depend on how paths are split
into batches or over how many threads they run.

Set membership is tested at the discrete steps only, by nearest node. A state
outside the grid box, or on an edge node that is not in the stop region,
counts as being in the avoid set (the same truncation the grid solver uses).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .hjb import PolicyField
from .payoff import Mode, PayoffField
from .scenario import Scenario

__all__ = [
    "philox4x32",
    "standard_normals",
    "PathOutcome",
    "McEstimate",
    "AuditReport",
    "pathwise_functionals",
    "simulate_path",
    "simulate_batch",
    "estimate",
    "functional_equivalence_audit",
    "dump_path_csv",
    "select_probes",
]

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
MASK32 = 0xFFFFFFFF
CHUNK = 8192


# ---------------------------------------------------------------- RNG

@numba.njit(cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    m32 = np.uint64(MASK32)
    for r in range(10):
        p0 = np.uint64(PHILOX_M0) * c0
        p1 = np.uint64(PHILOX_M1) * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & m32
        hi1, lo1 = p1 >> np.uint64(32), p1 & m32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        if r < 9:
            k0 = (k0 + np.uint64(PHILOX_W0)) & m32
            k1 = (k1 + np.uint64(PHILOX_W1)) & m32
    return c0, c1, c2, c3


@numba.njit(cache=True)
def _philox_many(ctr, key):
    n = ctr.shape[0]
    out = np.empty((n, 4), dtype=np.uint32)
    for i in range(n):
        a, b, c, d = _philox_block(np.uint64(ctr[i, 0]), np.uint64(ctr[i, 1]), np.uint64(ctr[i, 2]),
                                   np.uint64(ctr[i, 3]), np.uint64(key[i, 0]), np.uint64(key[i, 1]))
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = a, b, c, d
    return out


def philox4x32(counter, key) -> np.ndarray:
    """Philox4x32-10 block function on rows of ``counter`` (n, 4) and ``key`` (n, 2)."""
    ctr = np.atleast_2d(np.asarray(counter, dtype=np.uint32))
    k = np.broadcast_to(np.atleast_2d(np.asarray(key, dtype=np.uint32)), (ctr.shape[0], 2))
    return _philox_many(np.ascontiguousarray(ctr), np.ascontiguousarray(k))


@numba.njit(cache=True)
def _normals(seed, path_ids, step):
    m32 = np.uint64(MASK32)
    k0, k1 = seed & m32, seed >> np.uint64(32)
    s0, s1 = step & m32, step >> np.uint64(32)
    n = path_ids.shape[0]
    out = np.empty((n, 2))
    two53 = 9007199254740992.0
    for i in range(n):
        pid = path_ids[i]
        a, b, c, d = _philox_block(s0, s1, pid & m32, pid >> np.uint64(32), k0, k1)
        # 53-bit uniforms strictly inside (0, 1)
        u1 = (float((a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6))) + 0.5) / two53
        u2 = (float((c >> np.uint64(5)) * np.uint64(67108864) + (d >> np.uint64(6))) + 0.5) / two53
        r = math.sqrt(-2.0 * math.log(u1))
        out[i, 0] = r * math.cos(2.0 * math.pi * u2)
        out[i, 1] = r * math.sin(2.0 * math.pi * u2)
    return out


def standard_normals(seed: int, path_ids, step: int) -> np.ndarray:
    """Two independent N(0, 1) draws per path for one time step, shape ``(n, 2)``.

    Key = 64-bit seed, counter = (step lo, step hi, path lo, path hi); the four
    output words give two 53-bit uniforms fed through Box-Muller.
    """
    ids = np.ascontiguousarray(path_ids, dtype=np.uint64)
    return _normals(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), ids, np.uint64(step))


# ---------------------------------------------------------------- functionals

def pathwise_functionals(in_A, in_B, K: int) -> dict:
    """Evaluate the five indicator functionals on one recorded path.

    ``in_A``/``in_B`` are membership flags at steps ``0, 1, ...``; the record
    may end early at the first avoid-set step. Steps after that are never
    needed: every functional carries a factor that vanishes once B is hit.

    * ``F1``: target indicator at the first entry into A or B (or at ``K``).
    * ``F2``: ``max_s min(1_A(X_s), min_{r<=s} 1_{B^c}(X_r))``.
    * ``F3``: ``max_tau 1_A(X_tau) * 1_{B^c}(X_{tau ^ tau_B})`` over the
      candidate stopping times (first entry into A or B, ``tau_A ^ K``, ``K``).
    * ``F1_tilde``: target indicator at ``tau_B ^ K``.
    * ``F2_tilde``: ``1_A(X_K) * min_{r<=K} 1_{B^c}(X_r)``.
    """
    a = np.asarray(in_A, dtype=bool)
    b = np.asarray(in_B, dtype=bool)
    last = min(a.size - 1, K)
    a, b = a[:last + 1], b[:last + 1]
    if last < K and not b[last]:
        raise ValueError("record ends before the horizon without entering B")
    never = K + 1

    def first(mask):
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else never

    tau_A, tau_B, tau_O = first(a), first(b), first(a | b)
    tau_bar = min(tau_O, K)

    def in_a(k):
        return bool(a[k]) if k <= last else False

    def not_b(k):
        return not bool(b[k])

    F1 = int(in_a(tau_bar))
    clean = np.logical_and.accumulate(~b)
    F2 = int(np.any(a & clean))
    F3 = 0
    for tau in (tau_bar, min(tau_A, K), K):
        F3 = max(F3, int(not_b(min(tau, tau_B)) and in_a(tau)))
    s = min(tau_B, K)
    F1_tilde = int(in_a(s))
    F2_tilde = int(in_a(K) and not b[:K + 1].any())
    return {"F1": F1, "F2": F2, "F3": F3, "F1_tilde": F1_tilde, "F2_tilde": F2_tilde,
            "hit_A_step": None if tau_A == never else tau_A,
            "hit_B_step": None if tau_B == never else tau_B}


# ---------------------------------------------------------------- compiled path kernel

@numba.njit(cache=True, nogil=True)
def _kernel(ids, seed, x0, y0, t0, dt_mc, K, stop_ab, record,
            ox, oy, dx, dy, A, B, pol, controls, dt_pol,
            c0, a, vs, sx, sy, hit_A, hit_B, end_step, end_x, end_y, in_A, in_B):
    """Paths for drift ``(c0 - a y^2 + vs cos u, vs sin u)`` and constant diagonal sigma.

    Same arithmetic, membership rule and random stream as the numpy engine.
    """
    m32 = np.uint64(MASK32)
    k0, k1 = seed & m32, seed >> np.uint64(32)
    nx, ny = A.shape
    xmax = ox + (nx - 1) * dx
    ymax = oy + (ny - 1) * dy
    kp = pol.shape[0] - 1
    sq = math.sqrt(dt_mc)
    two53 = 9007199254740992.0
    for p in range(ids.shape[0]):
        pid = ids[p]
        x, y = x0, y0
        hit_A[p] = -1
        hit_B[p] = -1
        end_step[p] = K
        for k in range(K + 1):
            inside = x >= ox and x <= xmax and y >= oy and y <= ymax
            i = min(max(int(np.rint((x - ox) / dx)), 0), nx - 1) if inside else 0
            j = min(max(int(np.rint((y - oy) / dy)), 0), ny - 1) if inside else 0
            in_a = inside and A[i, j]
            in_b = (not inside) or B[i, j]
            if in_a and hit_A[p] < 0:
                hit_A[p] = k
            if record:
                in_A[p, k] = in_a
                in_B[p, k] = in_b
            if in_b:
                hit_B[p] = k
            if in_b or (stop_ab and in_a) or k == K:
                end_step[p] = k
                break
            if dt_pol > 0:
                kk = min(max(int(np.rint((t0 + k * dt_mc) / dt_pol)), 0), kp)
            else:
                kk = 0
            u = controls[pol[kk, i, j]]
            fx = (c0 - a * y * y) + vs * math.cos(u)
            fy = vs * math.sin(u)
            step = np.uint64(k)
            w0, w1, w2, w3 = _philox_block(step & m32, step >> np.uint64(32), pid & m32,
                                           pid >> np.uint64(32), k0, k1)
            u1 = (float((w0 >> np.uint64(5)) * np.uint64(67108864) + (w1 >> np.uint64(6))) + 0.5) / two53
            u2 = (float((w2 >> np.uint64(5)) * np.uint64(67108864) + (w3 >> np.uint64(6))) + 0.5) / two53
            r = math.sqrt(-2.0 * math.log(u1))
            xi0 = r * math.cos(2.0 * math.pi * u2)
            xi1 = r * math.sin(2.0 * math.pi * u2)
            x = x + fx * dt_mc + sq * (sx * xi0 + 0.0 * xi1)
            y = y + fy * dt_mc + sq * (0.0 * xi0 + sy * xi1)
            if not (np.isfinite(x) and np.isfinite(y)):
                x = np.inf  # outside the box: counted as an avoid-set entry next step
        end_x[p] = x
        end_y[p] = y


def _kernel_policy(policy, scenario: Scenario):
    """``(index array, controls, dt)`` for the compiled engine, or None if unsupported."""
    if isinstance(policy, PolicyField):
        return np.ascontiguousarray(policy.index), np.asarray(policy.controls, dtype=float), float(policy.dt)
    if callable(policy):
        return None
    return np.zeros((1,) + scenario.grid.shape, dtype=np.int32), np.array([float(policy)]), 0.0


# ---------------------------------------------------------------- simulation

def _policy_fn(policy, scenario: Scenario) -> Callable:
    if isinstance(policy, PolicyField):
        return lambda t, x, y: policy.lookup(np.full(x.shape, t), x, y, scenario.grid)
    if callable(policy):
        return lambda t, x, y: np.broadcast_to(np.asarray(policy(t, x, y), dtype=float), x.shape)
    u = float(policy)
    return lambda t, x, y: np.full(x.shape, u)


class _Membership:
    def __init__(self, scenario: Scenario, payoff: PayoffField):
        grid = scenario.grid
        self.grid = grid
        self.A = payoff.eroded_target.mask
        stop = payoff.eroded_target.mask | payoff.avoid.mask
        self.B = payoff.avoid.mask | (grid.edge_mask() & ~stop)
        self.values = payoff.values

    def __call__(self, x, y):
        inside = self.grid.contains(x, y)
        i, j = self.grid.nearest(x, y)
        in_a = inside & self.A[i, j]
        in_b = ~inside | self.B[i, j] | ~np.isfinite(x) | ~np.isfinite(y)
        return in_a, in_b, i, j


@dataclass
class _Batch:
    hit_A: np.ndarray
    hit_B: np.ndarray
    end_step: np.ndarray
    end_x: np.ndarray
    end_y: np.ndarray
    payoff_at_end: np.ndarray
    nan_paths: list
    in_A: np.ndarray | None = None
    in_B: np.ndarray | None = None
    trajectory: dict | None = None


def simulate_batch(scenario: Scenario, payoff: PayoffField, policy, start, dt_mc: float, seed: int,
                   path_ids, stop_on: str = "B", record: bool = False, trace: bool = False,
                   engine: str = "auto") -> _Batch:
    """Simulate many paths from one start; paths end at ``K_mc`` or on entering the stop set.

    ``stop_on='B'`` runs each path to ``tau_B ^ K`` (needed by the pathwise
    functionals), ``'AB'`` stops at the first entry into ``A_eps`` or B.
    ``engine='auto'`` uses the compiled kernel when the scenario declares a
    supported drift family (``metadata['kernel']``) and the policy is a
    PolicyField or a constant; ``'numpy'`` forces the generic engine.
    """
    t0, (x0, y0) = float(start[0]), start[1]
    if not dt_mc > 0:
        raise ValueError("dt_mc must be > 0")
    if not bool(scenario.grid.contains(x0, y0)):
        raise ValueError(f"start {(x0, y0)} is outside the grid box")
    K = int(round((scenario.horizon_T - t0) / dt_mc))
    if K < 0:
        raise ValueError("start time beyond the horizon")
    ids = np.asarray(path_ids, dtype=np.uint64)
    n = ids.size
    member = _Membership(scenario, payoff)
    kpol = _kernel_policy(policy, scenario)
    kparams = scenario.metadata.get("kernel")
    if engine not in ("auto", "numpy", "numba"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "numba" and (kpol is None or kparams is None or trace):
        raise ValueError("compiled engine needs a supported drift family, a grid or constant policy and no trace")
    if engine != "numpy" and kpol is not None and kparams is not None and not trace:
        return _run_kernel(scenario, member, kpol, kparams, float(x0), float(y0), t0, dt_mc, K, seed, ids,
                           stop_on == "AB", record)
    control = _policy_fn(policy, scenario)
    sq = math.sqrt(dt_mc)

    hit_A = np.full(n, -1, dtype=np.int64)
    hit_B = np.full(n, -1, dtype=np.int64)
    end_step = np.full(n, K, dtype=np.int64)
    end_x = np.full(n, float(x0))
    end_y = np.full(n, float(y0))
    in_A_rec = np.zeros((n, K + 1), dtype=bool) if record else None
    in_B_rec = np.zeros((n, K + 1), dtype=bool) if record else None
    traj = {"step": [], "x": [], "y": [], "control": [], "in_A": [], "in_B": []} if trace else None
    nan_paths = []

    act = np.arange(n)
    x = np.full(n, float(x0))
    y = np.full(n, float(y0))
    for k in range(K + 1):
        a, b, _, _ = member(x, y)
        newA = a & (hit_A[act] < 0)
        hit_A[act[newA]] = k
        hit_B[act[b]] = k
        if record:
            in_A_rec[act, k] = a
            in_B_rec[act, k] = b
        stop = b | a if stop_on == "AB" else b
        if k == K:
            stop = np.ones_like(stop)
        u = None
        if trace or not stop.all():
            u = control(t0 + k * dt_mc, x, y)
        if trace:
            for key, val in zip(("step", "x", "y", "control", "in_A", "in_B"), (k, x[0], y[0], u[0], a[0], b[0])):
                traj[key].append(val)
        if stop.any():
            done = act[stop]
            end_step[done] = k
            end_x[done] = x[stop]
            end_y[done] = y[stop]
            keep = ~stop
            act, x, y, u = act[keep], x[keep], y[keep], (u[keep] if u is not None else None)
            if act.size == 0:
                break
        fx, fy = scenario.drift(x, y, u)
        sig = np.asarray(scenario.diffusion(x, y, u), dtype=float)
        sig = np.broadcast_to(sig, x.shape + (2, 2))
        xi = standard_normals(seed, ids[act], k)
        x = x + fx * dt_mc + sq * (sig[:, 0, 0] * xi[:, 0] + sig[:, 0, 1] * xi[:, 1])
        y = y + fy * dt_mc + sq * (sig[:, 1, 0] * xi[:, 0] + sig[:, 1, 1] * xi[:, 1])
        bad = ~(np.isfinite(x) & np.isfinite(y))
        if bad.any():
            nan_paths.extend(int(ids[p]) for p in act[bad])

    ei, ej = scenario.grid.nearest(end_x, end_y)
    inside = scenario.grid.contains(end_x, end_y)
    pay = np.where(inside, member.values[ei, ej], 0.0)
    pay = np.where(hit_B == end_step, 0.0, np.where(hit_A == end_step, 1.0, pay))
    return _Batch(hit_A, hit_B, end_step, end_x, end_y, pay, nan_paths, in_A_rec, in_B_rec, traj)


def _run_kernel(scenario, member, kpol, kp, x0, y0, t0, dt_mc, K, seed, ids, stop_ab, record) -> _Batch:
    n = ids.size
    hit_A = np.empty(n, dtype=np.int64)
    hit_B = np.empty(n, dtype=np.int64)
    end_step = np.empty(n, dtype=np.int64)
    end_x = np.empty(n)
    end_y = np.empty(n)
    shape = (n, K + 1) if record else (1, 1)
    in_A = np.zeros(shape, dtype=np.bool_)
    in_B = np.zeros(shape, dtype=np.bool_)
    g = scenario.grid
    pol, controls, dt_pol = kpol
    _kernel(ids, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), x0, y0, t0, dt_mc, K, stop_ab, record,
            g.origin[0], g.origin[1], g.dx, g.dy, np.ascontiguousarray(member.A), np.ascontiguousarray(member.B),
            pol, controls, dt_pol, float(kp["c0"]), float(kp["a"]), float(kp["V_S"]),
            float(kp["sigma_x"]), float(kp["sigma_y"]), hit_A, hit_B, end_step, end_x, end_y, in_A, in_B)
    ei, ej = g.nearest(end_x, end_y)
    inside = g.contains(end_x, end_y)
    pay = np.where(inside, member.values[ei, ej], 0.0)
    pay = np.where(hit_B == end_step, 0.0, np.where(hit_A == end_step, 1.0, pay))
    return _Batch(hit_A, hit_B, end_step, end_x, end_y, pay, [], in_A if record else None,
                  in_B if record else None, None)


@dataclass
class PathOutcome:
    hit_A_step: int | None
    hit_B_step: int | None
    stopped_state: tuple[float, float]
    F1: int
    F2: int
    F3: int
    F1_tilde: int
    F2_tilde: int
    K_mc: int
    path_id: int = 0
    diagnostics: list = field(default_factory=list)
    trajectory: dict | None = None


def simulate_path(scenario: Scenario, payoff: PayoffField, policy, start, dt_mc: float, rng_seed: int,
                  path_id: int = 0, keep_trajectory: bool = False) -> PathOutcome:
    """One Euler-Maruyama path from ``start = (t, (x, y))`` with all functionals.

    The path is followed until it enters B or reaches ``K_mc``; the stopped
    state is the state at the first entry into ``A_eps`` or B (or at ``K_mc``).
    """
    batch = simulate_batch(scenario, payoff, policy, start, dt_mc, rng_seed, [path_id],
                           stop_on="B", record=True, trace=keep_trajectory)
    K = batch.in_A.shape[1] - 1
    last = int(batch.end_step[0])
    f = pathwise_functionals(batch.in_A[0, :last + 1], batch.in_B[0, :last + 1], K)
    traj = batch.trajectory
    tau_bar = min(x for x in (f["hit_A_step"], f["hit_B_step"], K) if x is not None)
    if traj is not None:
        stopped = (float(traj["x"][tau_bar]), float(traj["y"][tau_bar]))
    else:
        again = simulate_batch(scenario, payoff, policy, start, dt_mc, rng_seed, [path_id], stop_on="AB")
        stopped = (float(again.end_x[0]), float(again.end_y[0]))
    diag = [f"NaN state on path {p}; path aborted as an avoid-set entry" for p in batch.nan_paths]
    return PathOutcome(f["hit_A_step"], f["hit_B_step"], stopped, f["F1"], f["F2"], f["F3"],
                       f["F1_tilde"], f["F2_tilde"], K, int(path_id), diag, traj)


def dump_path_csv(outcome: PathOutcome, path) -> None:
    """Per-step CSV (step, x, y, control, in_A, in_B) of a traced path."""
    if outcome.trajectory is None:
        raise ValueError("path was simulated without keep_trajectory=True")
    tr = outcome.trajectory
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y", "control", "in_A", "in_B"])
        for row in zip(tr["step"], tr["x"], tr["y"], tr["control"], tr["in_A"], tr["in_B"]):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3])),
                        int(row[4]), int(row[5])])


# ---------------------------------------------------------------- estimation

@dataclass
class McEstimate:
    mean: float
    half_width_95: float
    n_paths: int
    seed: int
    dt_mc: float
    mode: str = Mode.WITHIN.value
    payoff_mean: float = float("nan")
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "half_width_95": self.half_width_95, "n_paths": self.n_paths,
                "seed": self.seed, "dt_mc": self.dt_mc, "mode": self.mode,
                "payoff_mean": self.payoff_mean, "diagnostics": list(self.diagnostics)}


def _workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("RA_THREADS", "1") or 1)
    return max(1, int(threads))


def _chunks(n_paths: int, offset: int):
    return [np.arange(offset + s, offset + min(s + CHUNK, n_paths), dtype=np.uint64)
            for s in range(0, n_paths, CHUNK)]


def _map_chunks(fn, chunks, threads):
    w = _workers(threads)
    if w == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, chunks))  # results come back in submission order


def estimate(scenario: Scenario, payoff: PayoffField, policy, start, mode=Mode.WITHIN, n_paths: int = 10_000,
             dt_mc: float | None = None, seed: int = 0, path_offset: int = 0,
             threads: int | None = None) -> McEstimate:
    """Mean of ``F1`` (within-horizon) or ``F1_tilde`` (terminal-time) over ``n_paths`` paths.

    Also reports ``payoff_mean``, the average of the mollified payoff at the
    stopped state, which is the quantity the grid solver approximates.
    Path ids are ``path_offset .. path_offset + n_paths - 1``.
    """
    mode = Mode.parse(mode)
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    if dt_mc is None:
        raise ValueError("dt_mc is required")

    def run(ids):
        bt = simulate_batch(scenario, payoff, policy, start, dt_mc, seed, ids,
                            stop_on="AB" if mode is Mode.WITHIN else "B")
        K = int(round((scenario.horizon_T - float(start[0])) / dt_mc))
        if mode is Mode.WITHIN:
            hit = (bt.hit_A >= 0) & ((bt.hit_B < 0) | (bt.hit_B > bt.hit_A))
            pay = bt.payoff_at_end
        else:
            hit = (bt.hit_B < 0) & (bt.end_step == K) & _in_target(scenario, payoff, bt.end_x, bt.end_y)
            i, j = scenario.grid.nearest(bt.end_x, bt.end_y)
            pay = np.where(bt.hit_B < 0, payoff.values[i, j], 0.0)
        return hit, pay, bt.nan_paths

    parts = _map_chunks(run, _chunks(n_paths, path_offset), threads)
    hits = np.concatenate([p[0] for p in parts])
    pays = np.concatenate([p[1] for p in parts])
    mean = int(hits.sum()) / n_paths
    hw = 1.96 * math.sqrt(mean * (1.0 - mean) / n_paths)
    diag = [f"NaN state on path {q}" for p in parts for q in p[2]]
    return McEstimate(mean, hw, n_paths, int(seed), float(dt_mc), mode.value, float(np.sum(pays) / n_paths), diag)


def _in_target(scenario, payoff, x, y):
    inside = scenario.grid.contains(x, y)
    i, j = scenario.grid.nearest(x, y)
    return inside & payoff.eroded_target.mask[i, j]


@dataclass
class AuditReport:
    n_paths: int
    n_starts: int
    violations: list
    counts: dict

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "n_paths": self.n_paths, "n_starts": self.n_starts,
                "n_violations": len(self.violations), "counts": self.counts,
                "violations": self.violations}


def functional_equivalence_audit(scenario: Scenario, payoff: PayoffField, policy, starts, n_paths: int,
                                 dt_mc: float, seed: int = 0, threads: int | None = None) -> AuditReport:
    """Check ``F1 = F2 = F3`` and ``F1_tilde = F2_tilde`` on every path.

    ``n_paths`` paths are simulated from each start (path ids continue across
    starts). Violations carry the full membership record of the path.
    """
    starts = list(starts)
    if not starts:
        raise ValueError("starts must be non-empty")
    violations = []
    counts = {"F1": 0, "F1_tilde": 0, "paths": 0}
    for s_idx, start in enumerate(starts):
        def run(ids, start=start, s_idx=s_idx):
            bt = simulate_batch(scenario, payoff, policy, start, dt_mc, seed, ids, stop_on="B", record=True)
            K = bt.in_A.shape[1] - 1
            bad, n1, n1t = [], 0, 0
            for p in range(ids.size):
                last = int(bt.end_step[p])
                f = pathwise_functionals(bt.in_A[p, :last + 1], bt.in_B[p, :last + 1], K)
                if not (f["F1"] == f["F2"] == f["F3"]) or f["F1_tilde"] != f["F2_tilde"]:
                    bad.append({"start_index": s_idx, "path_id": int(ids[p]), "functionals": f,
                                "in_A": bt.in_A[p, :last + 1].astype(int).tolist(),
                                "in_B": bt.in_B[p, :last + 1].astype(int).tolist()})
                n1 += f["F1"]
                n1t += f["F1_tilde"]
            return bad, n1, n1t, int(ids.size)

        for bad, n1, n1t, m in _map_chunks(run, _chunks(n_paths, s_idx * n_paths), threads):
            violations.extend(bad)
            counts["F1"] += n1
            counts["F1_tilde"] += n1t
            counts["paths"] += m
    return AuditReport(n_paths * len(starts), len(starts), violations, counts)


def select_probes(values: np.ndarray, target, n: int = 5, lo: float = 0.2, hi: float = 0.8,
                  edge_margin: int = 5) -> list:
    """Deterministic probe nodes with ``lo <= V <= hi`` spread around the target.

    Nodes within ``edge_margin`` cells of the grid edge are skipped: there
    the solver's pinned edge and the simulator's nearest-node exit rule differ
    by half a cell.

    The plane is cut into ``n`` equal angular sectors about the target's node
    centroid; each sector contributes the candidate closest to the target
    (ties by node index). Sectors without candidates are filled with the
    remaining closest candidates overall.
    """
    values = np.asarray(values)
    ok = (values >= lo) & (values <= hi)
    if edge_margin > 0:
        inner = np.zeros_like(ok)
        inner[edge_margin:-edge_margin, edge_margin:-edge_margin] = True
        ok &= inner
    cand = np.argwhere(ok)
    if cand.shape[0] < n:
        raise ValueError(f"only {cand.shape[0]} nodes have {lo} <= V <= {hi}")
    grid = target.grid
    X, Y = grid.mesh()
    cx, cy = X[target.mask].mean(), Y[target.mask].mean()
    xs, ys = X[cand[:, 0], cand[:, 1]], Y[cand[:, 0], cand[:, 1]]
    sector = np.minimum((np.mod(np.arctan2(ys - cy, xs - cx) + math.pi, 2 * math.pi) / (2 * math.pi) * n)
                        .astype(int), n - 1)
    dist = target.dist_out[cand[:, 0], cand[:, 1]]
    order = np.lexsort((np.arange(cand.shape[0]), dist))
    chosen, seen = [], set()
    for o in order:
        if sector[o] not in seen:
            seen.add(sector[o])
            chosen.append(o)
    for o in order:
        if len(chosen) >= n:
            break
        if o not in chosen:
            chosen.append(o)
    chosen = sorted(chosen[:n], key=lambda o: (sector[o], dist[o]))
    return [(int(cand[o, 0]), int(cand[o, 1])) for o in chosen]
