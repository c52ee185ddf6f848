"""Domain types and flow functions for a two-class fluid merge/diverge network.

Two upstream links (1, 2) carry on/off Markov-modulated inflows and merge
into a shared link 3.  In the merge-diverge topology link 3 has finite
storage and discharges into receiving links 4 and 5 under a proportional
rule, so congestion in one class can spill back onto the other.

Units: queues in vehicles, flows in veh/hr, rates in 1/hr, times in hours.
All functions here are pure; the stepping logic lives in `simulator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Queue values within EPS_Q of a boundary (0 or the link-3 storage) are
# treated as sitting on it; the flow maps switch on exact equality which
# floating point cannot hit otherwise.
EPS_Q = 1e-9

MERGE_ONLY = "merge-only"
MERGE_DIVERGE = "merge-diverge"
TOPOLOGIES = (MERGE_ONLY, MERGE_DIVERGE)

# Joint inflow modes; first digit is class 1 ("10" = class-1 inflow on).
MODES = ("00", "10", "01", "11")
MODE_INDEX = {m: i for i, m in enumerate(MODES)}


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0.0:
            raise ValueError(f"{name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class InflowChain:
    """On/off inflow switching 0 <-> a_plus with rates lam (off->on), mu (on->off)."""

    a_plus: float
    lam: float
    mu: float

    def __post_init__(self):
        _require_positive(a_plus=self.a_plus, lam=self.lam, mu=self.mu)

    @property
    def on_fraction(self) -> float:
        return self.lam / (self.lam + self.mu)


def mean_inflow(chain: InflowChain) -> float:
    """Long-run average inflow of an on/off chain: lam/(lam+mu) * a_plus."""
    return chain.on_fraction * chain.a_plus


@dataclass(frozen=True)
class ProductChain:
    """Joint four-mode chain of two independent on/off inflows."""

    chain_1: InflowChain
    chain_2: InflowChain

    states = MODES

    def inflows(self, mode: str) -> tuple[float, float]:
        a1 = self.chain_1.a_plus if mode[0] == "1" else 0.0
        a2 = self.chain_2.a_plus if mode[1] == "1" else 0.0
        return a1, a2

    def rate(self, i: str, j: str) -> float:
        """Transition rate between modes; 0 unless they differ in one digit."""
        if i not in MODE_INDEX or j not in MODE_INDEX:
            raise ValueError(f"unknown mode in ({i!r}, {j!r})")
        if i[0] != j[0] and i[1] == j[1]:
            return self.chain_1.lam if j[0] == "1" else self.chain_1.mu
        if i[1] != j[1] and i[0] == j[0]:
            return self.chain_2.lam if j[1] == "1" else self.chain_2.mu
        return 0.0

    def exits(self, mode: str) -> tuple[tuple[float, str], ...]:
        """(rate, next_mode) pairs out of `mode`, in a fixed order."""
        flip1 = ("1" if mode[0] == "0" else "0") + mode[1]
        flip2 = mode[0] + ("1" if mode[1] == "0" else "0")
        return ((self.rate(mode, flip1), flip1), (self.rate(mode, flip2), flip2))

    def stationary(self) -> dict[str, float]:
        p1 = self.chain_1.on_fraction
        p2 = self.chain_2.on_fraction
        return {
            "00": (1 - p1) * (1 - p2),
            "10": p1 * (1 - p2),
            "01": (1 - p1) * p2,
            "11": p1 * p2,
        }

    def mean_inflows(self) -> tuple[float, float]:
        return mean_inflow(self.chain_1), mean_inflow(self.chain_2)


@dataclass(frozen=True)
class PriorityVector:
    """Split of the shared link's receiving capacity; phi_1 + phi_2 = 1."""

    phi_1: float
    phi_2: float

    def __post_init__(self):
        if self.phi_1 < 0.0 or self.phi_2 < 0.0:
            raise ValueError(f"priorities must be >= 0, got {self}")
        if abs(self.phi_1 + self.phi_2 - 1.0) > 1e-12:
            raise ValueError(f"phi_1 + phi_2 must equal 1, got {self}")

    @classmethod
    def from_phi1(cls, phi_1: float) -> "PriorityVector":
        return cls(phi_1, 1.0 - phi_1)


@dataclass(frozen=True)
class MergeParams:
    """Upstream capacities, max receiving flow of link 3, and the priority."""

    F_1: float
    F_2: float
    R_3: float
    phi: PriorityVector

    def __post_init__(self):
        _require_positive(F_1=self.F_1, F_2=self.F_2, R_3=self.R_3)


@dataclass(frozen=True)
class DivergeParams:
    """Shared-link capacity and storage, and downstream receiving flows.

    The capacity ordering R_4 < F_3, R_5 < F_3, F_3 < R_4 + R_5 is the
    regime the closed-form diverge results assume.  It is checked by
    `require_standing`, which simulation configs call; the bare dataclass
    only requires positivity so that formula-level evaluations outside
    that regime stay possible.
    """

    F_3: float
    theta: float
    R_4: float
    R_5: float

    def __post_init__(self):
        _require_positive(F_3=self.F_3, theta=self.theta, R_4=self.R_4, R_5=self.R_5)

    def standing_violation(self) -> str | None:
        if not self.R_4 < self.F_3:
            return f"standing capacity assumption violated: R_4={self.R_4} >= F_3={self.F_3}"
        if not self.R_5 < self.F_3:
            return f"standing capacity assumption violated: R_5={self.R_5} >= F_3={self.F_3}"
        if not self.F_3 < self.R_4 + self.R_5:
            return (
                "standing capacity assumption violated: "
                f"F_3={self.F_3} >= R_4+R_5={self.R_4 + self.R_5}"
            )
        return None

    def require_standing(self) -> None:
        message = self.standing_violation()
        if message is not None:
            raise ValueError(message)


@dataclass(frozen=True)
class NetworkState:
    """Hybrid state: inflow mode plus the queue vector."""

    mode: str
    q_1: float
    q_2: float
    q3_1: float = 0.0
    q3_2: float = 0.0

    def __post_init__(self):
        if self.mode not in MODE_INDEX:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("q_1", "q_2", "q3_1", "q3_2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)!r}")

    @property
    def q3(self) -> float:
        return self.q3_1 + self.q3_2

    def queues(self) -> tuple[float, float, float, float]:
        return self.q_1, self.q_2, self.q3_1, self.q3_2


@dataclass(frozen=True)
class FlowVector:
    f_13: float
    f_23: float
    f_34: float = 0.0
    f_35: float = 0.0


def sending_flow(q: float, a: float, F: float, eps: float = EPS_Q) -> float:
    """Flow a link offers downstream: its inflow when empty, its capacity when queued."""
    return a if q <= eps else F


def receiving_flow_3(
    q3: float, diverge: DivergeParams, r_max: float | None = None, eps: float = EPS_Q
) -> float:
    """Flow link 3 accepts: r_max below the storage limit, F_3 at it.

    `r_max` is the transient maximum receiving flow (the merge module's R_3);
    it defaults to F_3.
    """
    if r_max is None:
        r_max = diverge.F_3
    if q3 > diverge.theta + eps:
        raise ValueError(f"q3={q3} exceeds storage theta={diverge.theta}")
    if q3 >= diverge.theta - eps:
        return diverge.F_3
    return r_max


def merge_flows(
    inflows: tuple[float, float],
    q_1: float,
    q_2: float,
    r3: float,
    params: MergeParams,
    topology: str = MERGE_ONLY,
    eps: float = EPS_Q,
) -> tuple[float, float]:
    """Flows out of links 1 and 2 into the shared link.

    Merge-only form: when the competing queue is nonempty a class is capped
    at its share phi_k * R_3, otherwise it may use all of R_3 (r3 is ignored;
    R_3 is read from `params`).  Merge-diverge form: each class is capped at
    the receiving flow left over after the other's sending flow is charged
    at its priority weight, clipped at zero.
    """
    a1, a2 = inflows
    s1 = sending_flow(q_1, a1, params.F_1, eps)
    s2 = sending_flow(q_2, a2, params.F_2, eps)
    phi_1, phi_2 = params.phi.phi_1, params.phi.phi_2
    if topology == MERGE_ONLY:
        r = params.R_3
        cap1 = phi_1 * r if q_2 > eps else r
        cap2 = phi_2 * r if q_1 > eps else r
    elif topology == MERGE_DIVERGE:
        cap1 = max(r3 - phi_2 * s2, 0.0)
        cap2 = max(r3 - phi_1 * s1, 0.0)
    else:
        raise ValueError(f"unknown topology {topology!r}")
    return min(s1, cap1), min(s2, cap2)


def discharge_split(
    q3_1: float, q3_2: float, f_13: float, f_23: float, eps: float = EPS_Q
) -> tuple[float, float]:
    """Per-class share of the shared link's outflow (proportional rule).

    Queued mass decides when present; otherwise the incoming flow split;
    otherwise an even split.
    """
    total_q = q3_1 + q3_2
    if total_q > eps:
        share = q3_1 / total_q
        return share, 1.0 - share
    total_f = f_13 + f_23
    if total_f > 0.0:
        share = f_13 / total_f
        return share, 1.0 - share
    return 0.5, 0.5


def diverge_flows(
    psi_1: float,
    s3: float,
    diverge: DivergeParams,
    verbatim_f35: bool = False,
) -> tuple[float, float]:
    """Flows from the shared link into receiving links 4 and 5.

    Each class is limited by its share of the sending flow, its own
    receiving flow, and a spillback bound proportional to the other class's
    receiving flow (ratio bounds use x/0 = +inf, i.e. inactive).

    `verbatim_f35` switches the first argument of the class-2 flow to
    psi_1 * s3; the default uses (1 - psi_1) * s3, which preserves flow
    conservation and mirrors the class-1 expression.
    """
    psi_2 = 1.0 - psi_1
    if psi_1 < -1e-12 or psi_2 < -1e-12:
        raise ValueError(f"psi_1 must be in [0, 1], got {psi_1}")
    bound_34 = (psi_1 / psi_2) * diverge.R_5 if psi_2 > 0.0 else math.inf
    bound_35 = (psi_2 / psi_1) * diverge.R_4 if psi_1 > 0.0 else math.inf
    first_35 = psi_1 * s3 if verbatim_f35 else psi_2 * s3
    f_34 = min(psi_1 * s3, diverge.R_4, bound_34)
    f_35 = min(first_35, diverge.R_5, bound_35)
    return f_34, f_35


def network_flows_from_sending(
    s1: float,
    s2: float,
    q3_1: float,
    q3_2: float,
    merge: MergeParams,
    diverge: DivergeParams,
    eps: float = EPS_Q,
) -> FlowVector:
    """Inter-link flows given the upstream sending flows already resolved.

    At a full shared link the inflow is capped at the realized outflow
    f_34 + f_35: the merge flows are scaled down proportionally onto it, so
    the storage bound is never exceeded.  Scaling the flows (rather than
    re-solving the merge at the reduced receiving value) gives the sliding
    flow field at the boundary: the net rate into a full link is exactly
    zero while upstream pressure persists, which keeps the integrator free
    of chattering there.
    """
    q3_1 = max(q3_1, 0.0)
    q3_2 = max(q3_2, 0.0)
    q3 = q3_1 + q3_2
    phi_1, phi_2 = merge.phi.phi_1, merge.phi.phi_2
    r3 = merge.R_3
    f_13 = min(s1, max(r3 - phi_2 * s2, 0.0))
    f_23 = min(s2, max(r3 - phi_1 * s1, 0.0))
    s3 = diverge.F_3 if q3 > eps else f_13 + f_23
    psi_1, _ = discharge_split(q3_1, q3_2, f_13, f_23, eps)
    f_34, f_35 = diverge_flows(psi_1, s3, diverge)
    # Values beyond theta (integrator stage overshoot) count as full.
    if q3 >= diverge.theta - eps:
        realized = f_34 + f_35
        total_in = f_13 + f_23
        if total_in > realized and total_in > 0.0:
            scale = realized / total_in
            f_13 *= scale
            f_23 *= scale
    return FlowVector(f_13, f_23, f_34, f_35)


def network_flows(
    inflows: tuple[float, float],
    q_1: float,
    q_2: float,
    q3_1: float,
    q3_2: float,
    merge: MergeParams,
    diverge: DivergeParams,
    eps: float = EPS_Q,
) -> FlowVector:
    """All four inter-link flows of the merge-diverge network at one state."""
    a1, a2 = inflows
    s1 = sending_flow(q_1, a1, merge.F_1, eps)
    s2 = sending_flow(q_2, a2, merge.F_2, eps)
    return network_flows_from_sending(s1, s2, q3_1, q3_2, merge, diverge, eps)


def drift(
    state: NetworkState,
    inflows: tuple[float, float],
    merge: MergeParams,
    diverge: DivergeParams | None = None,
    eps: float = EPS_Q,
) -> tuple[float, ...]:
    """Queue time-derivatives at a state; 2-vector for a bare merge, 4-vector
    for the merge-diverge network."""
    a1, a2 = inflows
    if diverge is None:
        f_13, f_23 = merge_flows(inflows, state.q_1, state.q_2, merge.R_3, merge, MERGE_ONLY, eps)
        return (a1 - f_13, a2 - f_23)
    fv = network_flows(inflows, state.q_1, state.q_2, state.q3_1, state.q3_2, merge, diverge, eps)
    return (a1 - fv.f_13, a2 - fv.f_23, fv.f_13 - fv.f_34, fv.f_23 - fv.f_35)
