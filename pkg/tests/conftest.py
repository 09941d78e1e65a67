from __future__ import annotations

import functools
from pathlib import Path

import numpy as np
import pytest

from reachavoid.grid import Grid2, build_region
from reachavoid.hjb import solve
from reachavoid.payoff import build_payoff
from reachavoid.scenario import ZermeloParams, load_scenario, shape_indicator, zermelo_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "examples" / "scenarios"

# filled by test_acceptance, printed once at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.json"


@functools.lru_cache(maxsize=None)
def solved(name: str, eps_cells: float | None = None):
    """Solve a shipped scenario once per session: (scenario, config, payoff, value, policy)."""
    sc, cfg = load_scenario(scenario_path(name))
    cells = eps_cells if eps_cells is not None else cfg.get("eps_cells", 3)
    payoff = build_payoff(sc.target_A, sc.avoid_B, cells * sc.grid.cell_diagonal)
    vf, pf = solve(sc, payoff)
    return sc, cfg, payoff, vf, pf


def small_zermelo(n: int = 31, a: float = 0.04, V_S: float = 0.6, n_alpha: int = 16, T: float = 1.0,
                  sigma=(0.5, 0.2)):
    """A coarse Zermelo instance for fast unit tests."""
    grid = Grid2((-3.0, -3.0), (6.0 / (n - 1), 6.0 / (n - 1)), (n, n))
    A = build_region(grid, shape_indicator({"type": "disk", "center": [0.0, 0.0], "radius": 1.0}))
    B = build_region(grid, shape_indicator({"type": "halfplane", "normal": [1.0, 0.0], "offset": 2.2}))
    return zermelo_scenario(ZermeloParams(a=a, V_S=V_S, sigma_x=sigma[0], sigma_y=sigma[1], n_alpha=n_alpha),
                            grid, A, B, T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
