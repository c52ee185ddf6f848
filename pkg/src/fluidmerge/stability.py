"""Closed-form stability conditions for the merge and merge-diverge networks.

The priority sets here classify a parameter point without simulation: a
necessary condition (whose complement is destabilizing), a sufficient
stabilizing set for the bare merge, and a smaller sufficient set once the
diverge's receiving flows and the proportional discharge are accounted for.
Inequalities are evaluated exactly as written, strict where strict, with no
tolerance fuzzing; ratio bounds use the convention x/0 = +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .model import PriorityVector

UNSTABLE = "unstable"
UNKNOWN = "unknown"
MERGE_STABLE = "merge stable"
MERGE_DIVERGE_STABLE = "merge-diverge stable"

# Verdicts ordered from worst to best; used by monotonicity checks.
VERDICT_ORDER = (UNSTABLE, UNKNOWN, MERGE_STABLE, MERGE_DIVERGE_STABLE)
VERDICT_RANK = {v: i for i, v in enumerate(VERDICT_ORDER)}


def check_existence_merge(a_bar_1, a_bar_2, F_1, F_2, R_3) -> bool:
    """Stabilizing priorities exist iff each mean inflow clears its capacity
    and their sum clears the shared receiving flow (all strict)."""
    return a_bar_1 < F_1 and a_bar_2 < F_2 and a_bar_1 + a_bar_2 < R_3


def check_uniform(a_bar_1, a_bar_2, F_1, F_2) -> bool:
    """Below joint utilization one, every priority vector is stabilizing."""
    return a_bar_1 / F_1 + a_bar_2 / F_2 < 1.0


def in_phi1(phi: PriorityVector, a_bar_1, a_bar_2, R_3) -> bool:
    """Each class's share of the shared receiving flow exceeds its mean inflow."""
    return phi.phi_1 > a_bar_1 / R_3 and phi.phi_2 > a_bar_2 / R_3


def merge_sufficient(phi: PriorityVector, a_bar_1, a_bar_2, F_1, F_2, R_3) -> bool:
    """Sufficient for merge stability: each mean inflow stays below the
    smaller of its capacity and its priority share."""
    return a_bar_1 < min(F_1, phi.phi_1 * R_3) and a_bar_2 < min(F_2, phi.phi_2 * R_3)


def in_phi0(phi: PriorityVector, a_bar_1, a_bar_2, F_1, F_2, R_3) -> bool:
    """Necessary-condition set; priorities outside it are destabilizing.

    Conventions: 1/0 = +inf in the min term; should the min term come out
    infinite (impossible for a valid priority vector, since at most one
    component is zero), a zero slack factor makes the product 0 and a
    negative one makes it -inf.
    """
    load = a_bar_1 / F_1 + a_bar_2 / F_2
    slack = 1.0 - phi.phi_1 * R_3 / F_1 - phi.phi_2 * R_3 / F_2
    m1 = a_bar_1 / (phi.phi_1 * R_3) if phi.phi_1 > 0.0 else math.inf
    m2 = a_bar_2 / (phi.phi_2 * R_3) if phi.phi_2 > 0.0 else math.inf
    m = min(m1, m2)
    if math.isinf(m):
        term = 0.0 if slack == 0.0 else math.copysign(math.inf, slack)
    else:
        term = slack * m
    return load + term <= 1.0


def check_existence_network(a_bar_1, a_bar_2, F_1, F_2, F_3, R_4, R_5) -> bool:
    """Stabilizing priorities for the merge-diverge network exist iff each
    mean inflow clears every capacity on its route (all strict)."""
    return (
        a_bar_1 < min(F_1, R_4)
        and a_bar_2 < min(F_2, R_5)
        and a_bar_1 + a_bar_2 < F_3
    )


def in_phi2(phi: PriorityVector, a_bar_1, a_bar_2, F_1, F_2, F_3, R_4, R_5) -> bool:
    """Stabilizing set for the merge-diverge network: each mean inflow clears
    its capacity, its share of the shared link, its own receiving flow, and
    the spillback bound from the other class's receiving flow."""
    p1, p2 = phi.phi_1, phi.phi_2
    b1 = min(F_1, p1 * F_3, R_4, (p1 / p2) * R_5 if p2 > 0.0 else math.inf)
    b2 = min(F_2, p2 * F_3, R_5, (p2 / p1) * R_4 if p1 > 0.0 else math.inf)
    return a_bar_1 < b1 and a_bar_2 < b2


@dataclass(frozen=True)
class Classification:
    verdict: str
    in_phi0: bool
    in_phi1: bool
    in_phi2: bool | None  # None when no diverge parameters are in play
    existence: bool
    uniform: bool


def classify(
    phi: PriorityVector,
    a_bar_1: float,
    a_bar_2: float,
    F_1: float,
    F_2: float,
    R_3: float | None = None,
    F_3: float | None = None,
    R_4: float | None = None,
    R_5: float | None = None,
) -> Classification:
    """Four-way region classification of one parameter point.

    Network mode is selected by passing F_3 (with R_4 and R_5); there the
    membership tests substitute F_3 for the shared receiving flow unless an
    explicit R_3 override is given (the long-run discharge of the shared
    link is capped by F_3).  Merge-only mode requires R_3.
    """
    network = F_3 is not None
    if network:
        if R_4 is None or R_5 is None:
            raise ValueError("network classification requires R_4 and R_5")
        r = F_3 if R_3 is None else R_3
    else:
        if R_3 is None:
            raise ValueError("merge classification requires R_3")
        r = R_3

    p0 = in_phi0(phi, a_bar_1, a_bar_2, F_1, F_2, r)
    p1 = in_phi1(phi, a_bar_1, a_bar_2, r)
    existence = check_existence_merge(a_bar_1, a_bar_2, F_1, F_2, r)
    uniform = check_uniform(a_bar_1, a_bar_2, F_1, F_2)
    p2 = (
        in_phi2(phi, a_bar_1, a_bar_2, F_1, F_2, F_3, R_4, R_5) if network else None
    )
    stable_merge = merge_sufficient(phi, a_bar_1, a_bar_2, F_1, F_2, r) or (
        existence and uniform
    )
    if p2:
        verdict = MERGE_DIVERGE_STABLE
    elif stable_merge:
        verdict = MERGE_STABLE
    elif p0:
        verdict = UNKNOWN
    else:
        verdict = UNSTABLE
    return Classification(verdict, p0, p1, p2, existence, uniform)


@dataclass(frozen=True)
class SweepGrid:
    """A rectangle of (F_3, phi_1) cells over a fixed parameter template."""

    f3_values: tuple[float, ...]
    phi1_values: tuple[float, ...]
    a_bar_1: float
    a_bar_2: float
    F_1: float
    F_2: float
    R_4: float
    R_5: float
    R_3: float | None = None  # None: substitute each cell's F_3

    def __post_init__(self):
        for name in ("f3_values", "phi1_values"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if any(p < 0.0 or p > 1.0 for p in self.phi1_values):
            raise ValueError("phi1_values must lie in [0, 1]")


@dataclass(frozen=True)
class SweepResult:
    grid: SweepGrid
    cells: tuple[tuple[Classification, ...], ...]  # [f3 index][phi1 index]

    def verdict(self, i_f3: int, i_phi: int) -> str:
        return self.cells[i_f3][i_phi].verdict

    def rows(self) -> Iterable[tuple]:
        for i, f3 in enumerate(self.grid.f3_values):
            for j, p1 in enumerate(self.grid.phi1_values):
                c = self.cells[i][j]
                yield (f3, p1, int(c.in_phi0), int(c.in_phi1), int(c.in_phi2), c.verdict)

    def to_csv(self) -> str:
        lines = ["F3,phi1,in_phi0,in_phi1,in_phi2,verdict"]
        for f3, p1, b0, b1, b2, verdict in self.rows():
            lines.append("%.9g,%.9g,%d,%d,%d,%s" % (f3, p1, b0, b1, b2, verdict))
        return "\n".join(lines) + "\n"


def sweep(grid: SweepGrid) -> SweepResult:
    """Classify every (F_3, phi_1) cell of the grid."""
    cells = []
    for f3 in grid.f3_values:
        row = []
        for p1 in grid.phi1_values:
            phi = PriorityVector.from_phi1(p1)
            row.append(
                classify(
                    phi,
                    grid.a_bar_1,
                    grid.a_bar_2,
                    grid.F_1,
                    grid.F_2,
                    R_3=grid.R_3,
                    F_3=f3,
                    R_4=grid.R_4,
                    R_5=grid.R_5,
                )
            )
        cells.append(tuple(row))
    return SweepResult(grid, tuple(cells))
