"""Lipschitz payoff on an eroded target.

The indicator of the target ``A`` is replaced by a ramp that equals 1 on
``A_eps`` (target nodes at distance >= eps from the complement) and falls
to 0 at the target's boundary:

    payoff(x) = clip(dist(x, A^c) / eps, 0, 1)

For sets whose boundary curvature radius is at least eps (disks,
half-planes) this is the same function as ``max(0, 1 - dist(x, A_eps)/eps)``.
On a node grid the two differ by quantisation, and only the form above is
exactly nonincreasing in eps, which the eps-ladder comparison needs. It is
never smaller than the eroded-distance form (``dist_in`` is 1-Lipschitz over
nodes), has its plateau exactly on ``A_eps`` and vanishes off the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import SetRegion, erode, union

__all__ = [
    "Mode",
    "PayoffField",
    "PayoffError",
    "build_payoff",
    "payoff_monotonicity_pair",
    "min_resolvable_eps",
]


class Mode(str, Enum):
    WITHIN = "within-horizon"
    TERMINAL = "terminal-time"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"within": cls.WITHIN, "within-horizon": cls.WITHIN,
                   "terminal": cls.TERMINAL, "terminal-time": cls.TERMINAL}
        try:
            return aliases[str(value)]
        except KeyError:
            raise ValueError(f"unknown mode {value!r}") from None


class PayoffError(ValueError):
    """Raised with one of the messages ``epsilon unresolvable``,
    ``target eroded away`` or ``separation violated``."""


@dataclass(frozen=True, eq=False)
class PayoffField:
    values: np.ndarray
    eps: float
    eroded_target: SetRegion
    stop_region: SetRegion
    mode: Mode
    avoid: SetRegion

    @property
    def grid(self):
        return self.eroded_target.grid


def min_resolvable_eps(grid) -> float:
    return 2.0 * grid.cell_diagonal


def build_payoff(target_A: SetRegion, avoid_B: SetRegion, eps: float, mode=Mode.WITHIN) -> PayoffField:
    mode = Mode.parse(mode)
    grid = target_A.grid
    if avoid_B.grid != grid:
        raise PayoffError("target and avoid sets live on different grids")
    # relative slack so that eps = 2 * diagonal computed by the caller is accepted
    if not eps >= min_resolvable_eps(grid) * (1.0 - 1e-12):
        raise PayoffError(
            f"epsilon unresolvable: eps={eps!r} < two cell diagonals ({min_resolvable_eps(grid)!r})")
    eroded = erode(target_A, eps)
    if eroded.empty:
        raise PayoffError(f"target eroded away: no target node is at distance >= {eps!r} from its complement")
    if avoid_B.mask.any() and target_A.dist_out[avoid_B.mask].min() <= eps:
        raise PayoffError("separation violated: target and avoid sets are not more than eps apart")
    values = np.clip(target_A.dist_in / eps, 0.0, 1.0)
    values[~target_A.mask] = 0.0
    if np.any(values[avoid_B.mask] > 0.0):
        raise PayoffError("separation violated: payoff is positive on the avoid set")
    values.setflags(write=False)
    stop = union(eroded, avoid_B) if mode is Mode.WITHIN else avoid_B
    return PayoffField(values, float(eps), eroded, stop, mode, avoid_B)


def payoff_monotonicity_pair(target_A: SetRegion, avoid_B: SetRegion, eps1: float, eps2: float,
                             mode=Mode.WITHIN) -> tuple[PayoffField, PayoffField]:
    """Payoffs for ``eps1 >= eps2``; checks the nesting the eps-ladder relies on."""
    if not eps1 >= eps2 > 0:
        raise ValueError(f"need eps1 >= eps2 > 0, got {eps1}, {eps2}")
    p1 = build_payoff(target_A, avoid_B, eps1, mode)
    p2 = build_payoff(target_A, avoid_B, eps2, mode)
    if np.any(p1.eroded_target.mask & ~p2.eroded_target.mask):
        raise AssertionError("eroded targets are not nested")
    if np.any(p2.values < p1.values):
        raise AssertionError("payoff is not nonincreasing in eps")
    return p1, p2
