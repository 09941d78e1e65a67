from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachavoid.hjb import solve
from reachavoid.mc import (
    dump_path_csv,
    estimate,
    functional_equivalence_audit,
    pathwise_functionals,
    philox4x32,
    select_probes,
    simulate_batch,
    simulate_path,
    standard_normals,
)
from reachavoid.payoff import build_payoff

from conftest import small_zermelo, solved

M32 = 0xFFFFFFFF


def philox_reference(ctr, key):
    """Plain-integer Philox4x32-10, written from the standard round function."""
    c = list(ctr)
    k0, k1 = key
    for r in range(10):
        p0 = 0xD2511F53 * c[0]
        p1 = 0xCD9E8D57 * c[2]
        c = [((p1 >> 32) ^ c[1] ^ k0) & M32, p1 & M32, ((p0 >> 32) ^ c[3] ^ k1) & M32, p0 & M32]
        k0 = (k0 + 0x9E3779B9) & M32
        k1 = (k1 + 0xBB67AE85) & M32
    return c


# known-answer vectors distributed with the reference implementation
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((M32, M32, M32, M32), (M32, M32), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,want", KAT)
def test_philox_known_answers(ctr, key, want):
    assert philox4x32(ctr, key)[0].tolist() == list(want)
    assert philox_reference(ctr, key) == list(want)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, M32), min_size=4, max_size=4), st.lists(st.integers(0, M32), min_size=2, max_size=2))
def test_philox_matches_reference(ctr, key):
    assert philox4x32(ctr, key)[0].tolist() == philox_reference(ctr, key)


def test_normals_do_not_depend_on_batch_composition():
    ids = np.arange(50, dtype=np.uint64)
    full = standard_normals(7, ids, 3)
    part = standard_normals(7, ids[[4, 17, 49]], 3)
    assert np.array_equal(full[[4, 17, 49]], part)
    assert not np.array_equal(standard_normals(7, ids, 4), full)
    assert not np.array_equal(standard_normals(8, ids, 3), full)


def test_normals_look_standard():
    z = standard_normals(1, np.arange(200_000, dtype=np.uint64), 0)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.01


# ------------------------------------------------------------ pathwise functionals

def test_functionals_hand_cases():
    # enters A at step 2
    f = pathwise_functionals([0, 0, 1, 0, 0], [0, 0, 0, 0, 0], 4)
    assert (f["F1"], f["F2"], f["F3"]) == (1, 1, 1)
    assert f["hit_A_step"] == 2 and f["hit_B_step"] is None
    # left A again and is outside it at K
    assert (f["F1_tilde"], f["F2_tilde"]) == (0, 0)
    # hits B before A
    f = pathwise_functionals([0, 0, 0], [0, 1, 0], 2)
    assert (f["F1"], f["F2"], f["F3"], f["F1_tilde"], f["F2_tilde"]) == (0, 0, 0, 0, 0)
    # in A at K, never B
    f = pathwise_functionals([0, 0, 1], [0, 0, 0], 2)
    assert (f["F1"], f["F2"], f["F3"], f["F1_tilde"], f["F2_tilde"]) == (1, 1, 1, 1, 1)
    # record cut at the B step is accepted
    f = pathwise_functionals([0, 0], [0, 1], 10)
    assert f["hit_B_step"] == 1 and f["F1"] == 0
    with pytest.raises(ValueError):
        pathwise_functionals([0, 0], [0, 0], 10)


@st.composite
def records(draw):
    K = draw(st.integers(0, 25))
    a = draw(st.lists(st.booleans(), min_size=K + 1, max_size=K + 1))
    b = draw(st.lists(st.booleans(), min_size=K + 1, max_size=K + 1))
    a = [x and not y for x, y in zip(a, b)]  # A and B are disjoint
    return K, a, b


@settings(max_examples=300, deadline=None)
@given(records())
def test_functionals_agree(rec):
    K, a, b = rec
    f = pathwise_functionals(a, b, K)
    assert f["F1"] == f["F2"] == f["F3"]
    assert f["F1_tilde"] == f["F2_tilde"]
    # brute-force reading of the definitions
    first_b = next((k for k, v in enumerate(b) if v), None)
    first_o = next((k for k in range(K + 1) if a[k] or b[k]), K)
    assert f["F1"] == int(a[first_o])
    assert f["F2_tilde"] == int(a[K] and first_b is None)


@settings(max_examples=200, deadline=None)
@given(records(), st.integers(0, 25))
def test_within_functional_grows_with_horizon(rec, extra):
    K, a, b = rec
    k2 = min(K, extra)
    assert pathwise_functionals(a[:k2 + 1], b[:k2 + 1], k2)["F1"] <= pathwise_functionals(a, b, K)["F1"]


# ------------------------------------------------------------ simulation

@pytest.fixture(scope="module")
def drifting():
    """Pure drift (1, 0) towards the island from the west; noise negligible."""
    sc = small_zermelo(a=0.0, V_S=0.0, sigma=(1e-12, 1e-12), T=4.0)
    p = build_payoff(sc.target_A, sc.avoid_B, 2 * sc.grid.cell_diagonal)
    return sc, p


def test_deterministic_hit_step(drifting):
    sc, p = drifting
    dt = 0.01
    x0 = -2.5037  # off-lattice so no step lands on a half-cell boundary
    expected = None
    for k in range(400):
        i, j = sc.grid.nearest(x0 + k * dt, 0.0)
        if p.eroded_target.mask[i, j]:
            expected = k
            break
    out = simulate_path(sc, p, 0.0, (0.0, (x0, 0.0)), dt, rng_seed=3, keep_trajectory=True)
    assert out.hit_A_step == expected
    assert out.F1 == out.F2 == out.F3 == 1
    assert out.stopped_state[0] == pytest.approx(x0 + expected * dt, abs=1e-9)


def test_start_in_target_and_in_avoid(drifting):
    sc, p = drifting
    out = simulate_path(sc, p, 0.0, (0.0, (0.0, 0.0)), 0.01, rng_seed=0)
    assert out.hit_A_step == 0 and out.F1 == 1
    out = simulate_path(sc, p, 0.0, (0.0, (2.5, 0.0)), 0.01, rng_seed=0)
    assert out.hit_B_step == 0 and out.F1 == 0 and out.F1_tilde == 0


def test_start_outside_box_rejected(drifting):
    sc, p = drifting
    with pytest.raises(ValueError):
        simulate_path(sc, p, 0.0, (0.0, (9.0, 0.0)), 0.01, rng_seed=0)
    with pytest.raises(ValueError):
        simulate_path(sc, p, 0.0, (0.0, (0.0, 0.0)), 0.0, rng_seed=0)


def test_trajectory_dump(tmp_path, drifting):
    sc, p = drifting
    out = simulate_path(sc, p, 0.0, (0.0, (-2.0, 0.5)), 0.05, rng_seed=1, keep_trajectory=True)
    dump_path_csv(out, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "step,x,y,control,in_A,in_B"
    assert len(lines) >= 2
    bare = simulate_path(sc, p, 0.0, (0.0, (-2.0, 0.5)), 0.05, rng_seed=1)
    with pytest.raises(ValueError):
        dump_path_csv(bare, tmp_path / "q.csv")
    assert bare.stopped_state == out.stopped_state


@pytest.fixture(scope="module")
def noisy():
    sc = small_zermelo(T=1.0)
    p = build_payoff(sc.target_A, sc.avoid_B, 2 * sc.grid.cell_diagonal)
    vf, pf = solve(sc, p)
    return sc, p, vf, pf


@pytest.mark.parametrize("stop_on", ["B", "AB"])
def test_compiled_and_generic_engines_agree(noisy, stop_on):
    sc, p, vf, pf = noisy
    ids = np.arange(300, dtype=np.uint64)
    a = simulate_batch(sc, p, pf, (0.0, (-1.8, 0.3)), vf.dt / 2, 11, ids, stop_on=stop_on, record=True,
                       engine="numba")
    b = simulate_batch(sc, p, pf, (0.0, (-1.8, 0.3)), vf.dt / 2, 11, ids, stop_on=stop_on, record=True,
                       engine="numpy")
    for name in ("hit_A", "hit_B", "end_step", "in_A", "in_B", "payoff_at_end"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert np.allclose(a.end_x, b.end_x, atol=1e-12) and np.allclose(a.end_y, b.end_y, atol=1e-12)


def test_estimate_from_inside_target(noisy):
    sc, p, vf, pf = noisy
    est = estimate(sc, p, pf, (0.0, (0.0, 0.0)), n_paths=200, dt_mc=vf.dt)
    assert est.mean == 1.0 and est.half_width_95 == 0.0 and est.payoff_mean == 1.0


def test_estimate_validation(noisy):
    sc, p, vf, pf = noisy
    with pytest.raises(ValueError):
        estimate(sc, p, pf, (0.0, (0.0, 0.0)), n_paths=99, dt_mc=vf.dt)
    with pytest.raises(ValueError):
        estimate(sc, p, pf, (0.0, (0.0, 0.0)), n_paths=200)


def test_estimate_reproducible_and_thread_independent(noisy):
    sc, p, vf, pf = noisy
    kw = dict(n_paths=20_000, dt_mc=vf.dt / 2, seed=5)
    e1 = estimate(sc, p, pf, (0.0, (-1.6, 0.0)), threads=1, **kw)
    e2 = estimate(sc, p, pf, (0.0, (-1.6, 0.0)), threads=3, **kw)
    assert e1.to_dict() == e2.to_dict()
    assert e1.half_width_95 == pytest.approx(1.96 * math.sqrt(e1.mean * (1 - e1.mean) / 20_000))
    assert 0.0 < e1.mean < 1.0


def test_estimate_path_offsets_partition(noisy):
    sc, p, vf, pf = noisy
    start = (0.0, (-1.6, 0.0))
    whole = estimate(sc, p, pf, start, n_paths=400, dt_mc=vf.dt, seed=2)
    lo = estimate(sc, p, pf, start, n_paths=200, dt_mc=vf.dt, seed=2)
    hi = estimate(sc, p, pf, start, n_paths=200, dt_mc=vf.dt, seed=2, path_offset=200)
    assert whole.mean == pytest.approx((lo.mean + hi.mean) / 2, abs=1e-15)


def test_terminal_mode_never_exceeds_within(noisy):
    sc, p, vf, pf = noisy
    start = (0.0, (-1.6, 0.0))
    w = estimate(sc, p, pf, start, "within", n_paths=2000, dt_mc=vf.dt, seed=4)
    t = estimate(sc, p, pf, start, "terminal", n_paths=2000, dt_mc=vf.dt, seed=4)
    assert t.mean <= w.mean


def test_audit_small(noisy):
    sc, p, vf, pf = noisy
    rep = functional_equivalence_audit(sc, p, pf, [(0.0, (-1.6, 0.0)), (0.5, (1.2, -1.0))], 300, vf.dt, seed=9)
    assert rep.ok and rep.n_paths == 600 and rep.counts["paths"] == 600
    with pytest.raises(ValueError):
        functional_equivalence_audit(sc, p, pf, [], 10, vf.dt)


def test_corridor_midpoint_is_even_odds():
    sc, cfg, p, vf, pf = solved("corridor")
    est = estimate(sc, p, 0.0, (0.0, (1.0, 0.0)), n_paths=4000, dt_mc=vf.dt, seed=1)
    # gambler's ruin between walls at 0 and 2: one half
    assert abs(est.mean - 0.5) <= max(0.02, 3 * est.half_width_95)


def test_select_probes(noisy):
    sc, p, vf, pf = noisy
    probes = select_probes(vf.slices[0], sc.target_A, n=4, edge_margin=2)
    assert len(probes) == 4 and len(set(map(tuple, probes))) == 4
    for i, j in probes:
        assert 0.2 <= vf.slices[0][i, j] <= 0.8
        assert 2 <= i < sc.grid.shape[0] - 2 and 2 <= j < sc.grid.shape[1] - 2
    assert probes == select_probes(vf.slices[0], sc.target_A, n=4, edge_margin=2)
    with pytest.raises(ValueError):
        select_probes(np.zeros(sc.grid.shape), sc.target_A)
