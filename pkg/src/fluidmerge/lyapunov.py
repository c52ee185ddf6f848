"""Piecewise-quadratic stability certificates and numeric drift checks.

The certificates weight the two queue classes by a scalar picked from the
service margins, plus a mode-dependent linear term whose coefficients
telescope the inflow chain's jump rates so the generator sees mean inflows.
With the quadratic scaled by one half, the generator evaluates, on interior
states, to (mean inflow - service) paired against the weighted queue, plus
a mode-dependent constant; the drift check verifies L V <= -c|q| + d
numerically over sampled states.

Note the printed unscaled quadratic (scale 1.0, available as a toggle)
doubles the drift term and breaks that identity; the remainder test
documents the difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    EPS_Q,
    MERGE_DIVERGE,
    MERGE_ONLY,
    MODES,
    DivergeParams,
    MergeParams,
    NetworkState,
    ProductChain,
    drift,
    merge_flows,
    network_flows,
)
from .stability import check_uniform, in_phi2
from . import simulator


@dataclass(frozen=True)
class LyapunovV1:
    """Certificate for the bare merge: V = s*(q1 + alpha*q2)^2 + beta_i*(q1 + alpha*q2)."""

    alpha: float
    beta: tuple[float, float, float, float]  # by mode order MODES
    scale: float
    a_bar_1: float
    a_bar_2: float


@dataclass(frozen=True)
class LyapunovV2:
    """Merge-diverge certificate in the shifted coordinates
    x_k = (q_k - hat_q_k)_+ + q3_k."""

    alpha: float
    beta: tuple[float, float, float, float]
    hat_q_1: float
    hat_q_2: float
    scale: float
    a_bar_1: float
    a_bar_2: float


def _betas(alpha: float, a_bar_1: float, a_bar_2: float, chains: ProductChain):
    lam_1 = chains.chain_1.lam
    lam_2 = chains.chain_2.lam
    b00 = 1.0
    b10 = a_bar_1 / lam_1 + 1.0
    b01 = alpha * a_bar_2 / lam_2 + 1.0
    b11 = a_bar_1 / lam_1 + alpha * a_bar_2 / lam_2 + 1.0
    return (b00, b10, b01, b11)


def build_v1(
    a_bar_1: float,
    a_bar_2: float,
    F_1: float,
    F_2: float,
    chains: ProductChain,
    scale: float = 0.5,
    force: bool = False,
) -> LyapunovV1:
    """Construct the merge certificate; requires joint utilization below one
    (which guarantees a positive weight), unless `force` is set for
    diagnostic use on parameters outside that regime."""
    if not force and not check_uniform(a_bar_1, a_bar_2, F_1, F_2):
        raise ValueError(
            "certificate undefined: a_bar_1/F_1 + a_bar_2/F_2 = "
            f"{a_bar_1 / F_1 + a_bar_2 / F_2:.4f} >= 1"
        )
    alpha = 0.5 * (a_bar_1 / (F_2 - a_bar_2) + (F_1 - a_bar_1) / a_bar_2)
    beta = _betas(alpha, a_bar_1, a_bar_2, chains)
    if not force and (alpha <= 0.0 or any(b <= 0.0 for b in beta)):
        raise ValueError("certificate parameters must be positive")
    return LyapunovV1(alpha, beta, scale, a_bar_1, a_bar_2)


def alpha_tilde(
    phi, a_bar_1, a_bar_2, F_1, F_2, F_3, R_4, R_5
) -> float:
    """Weight for the merge-diverge certificate, from the per-class margins
    against the smallest binding capacity on each route."""
    p1, p2 = phi.phi_1, phi.phi_2
    m1 = min(F_1, p1 * F_3, R_4, (p1 / p2) * R_5 if p2 > 0.0 else math.inf)
    m2 = min(F_2, p2 * F_3, R_5, (p2 / p1) * R_4 if p1 > 0.0 else math.inf)
    if m2 <= a_bar_2 or m1 <= a_bar_1:
        raise ValueError("weight undefined outside the stabilizing set")
    return 0.5 * (a_bar_1 / (m2 - a_bar_2) + (m1 - a_bar_1) / a_bar_2)


def theta_profile(k: int, merge: MergeParams, diverge: DivergeParams, chains: ProductChain):
    """Closed-form lower envelope of class k's queued mass in the shared link.

    Starting from none of class k in a full shared link, its content obeys
    d theta/ds = min(F_k, phi_k*F_3) - (theta/Theta)*F_3, theta(0) = 0, i.e.
    theta(s) = (Theta*m/F_3) * (1 - exp(-F_3 s / Theta)).
    """
    m = _profile_rate(k, merge, diverge, chains)
    theta = diverge.theta
    F3 = diverge.F_3
    limit = theta * m / F3

    def profile(s: float) -> float:
        return limit * (1.0 - math.exp(-F3 * s / theta))

    return profile


def _profile_rate(k, merge, diverge, chains):
    a_bar_1, a_bar_2 = chains.mean_inflows()
    if not in_phi2(
        merge.phi, a_bar_1, a_bar_2, merge.F_1, merge.F_2, diverge.F_3, diverge.R_4, diverge.R_5
    ):
        raise ValueError("composition bounds hold only on the stabilizing set")
    if k == 1:
        F_k, phi_k, a_plus = merge.F_1, merge.phi.phi_1, chains.chain_1.a_plus
    elif k == 2:
        F_k, phi_k, a_plus = merge.F_2, merge.phi.phi_2, chains.chain_2.a_plus
    else:
        raise ValueError("class index must be 1 or 2")
    m = min(F_k, phi_k * diverge.F_3)
    if a_plus <= m:
        raise ValueError("profile requires the peak inflow above the service cap")
    return m


def psi_lower_bound(
    k: int, q_tilde: float, merge: MergeParams, diverge: DivergeParams, chains: ProductChain
) -> float:
    """Guaranteed share of class k in the shared link when its queue holds at
    least q_tilde vehicles."""
    if q_tilde < 0.0:
        raise ValueError("q_tilde must be >= 0")
    m = _profile_rate(k, merge, diverge, chains)
    a_plus = chains.chain_1.a_plus if k == 1 else chains.chain_2.a_plus
    horizon = q_tilde / (a_plus - m)
    profile = theta_profile(k, merge, diverge, chains)
    return profile(horizon) / diverge.theta


def hat_thresholds(
    merge: MergeParams, diverge: DivergeParams, chains: ProductChain
) -> tuple[float, float]:
    """Queue levels beyond which each class's share of the shared link is
    large enough that the other receiving flow no longer throttles it.

    The share floor saturates at min(F_k, phi_k*F_3)/F_3; if the target
    1 - R_other/F_3 exceeds that, no finite threshold exists.
    """
    out = []
    for k, r_other in ((1, diverge.R_5), (2, diverge.R_4)):
        target = 1.0 - r_other / diverge.F_3
        if target <= 0.0:
            out.append(0.0)
            continue
        m = _profile_rate(k, merge, diverge, chains)
        limit = m / diverge.F_3
        if limit <= target:
            raise ValueError(
                f"share bound not attainable for class {k}: "
                f"floor saturates at {limit:.4f} below the target {target:.4f}"
            )
        s_star = -(diverge.theta / diverge.F_3) * math.log(1.0 - target / limit)
        a_plus = chains.chain_1.a_plus if k == 1 else chains.chain_2.a_plus
        out.append(s_star * (a_plus - m))
    return out[0], out[1]


def build_v2(
    merge: MergeParams,
    diverge: DivergeParams,
    chains: ProductChain,
    scale: float = 0.5,
) -> LyapunovV2:
    a_bar_1, a_bar_2 = chains.mean_inflows()
    if not in_phi2(
        merge.phi, a_bar_1, a_bar_2, merge.F_1, merge.F_2, diverge.F_3, diverge.R_4, diverge.R_5
    ):
        raise ValueError("certificate undefined outside the stabilizing set")
    alpha = alpha_tilde(
        merge.phi, a_bar_1, a_bar_2, merge.F_1, merge.F_2, diverge.F_3, diverge.R_4, diverge.R_5
    )
    beta = _betas(alpha, a_bar_1, a_bar_2, chains)
    hat_1, hat_2 = hat_thresholds(merge, diverge, chains)
    return LyapunovV2(alpha, beta, hat_1, hat_2, scale, a_bar_1, a_bar_2)


def _coordinates(cert, q):
    """The weighted scalar coordinate y for either certificate."""
    if isinstance(cert, LyapunovV2):
        x1 = max(q[0] - cert.hat_q_1, 0.0) + q[2]
        x2 = max(q[1] - cert.hat_q_2, 0.0) + q[3]
    else:
        x1, x2 = q[0], q[1]
    return x1 + cert.alpha * x2


def eval_v(cert, mode: str, q) -> float:
    """Certificate value at a state; q is (q1, q2) or (q1, q2, q31, q32)."""
    y = _coordinates(cert, tuple(q) + (0.0, 0.0))
    beta = cert.beta[MODES.index(mode)]
    return cert.scale * y * y + beta * y


def numeric_generator(
    cert,
    mode: str,
    q,
    merge: MergeParams,
    chains: ProductChain,
    diverge: DivergeParams | None = None,
    eps: float = EPS_Q,
) -> float:
    """Extended-generator value L V(mode, q): gradient against the flow plus
    rate-weighted certificate jumps across modes.

    States within eps of a flow-regime boundary (a queue barely positive, or
    the V2 kink) are rejected; exact boundary values evaluate the boundary
    regime (the positive-part kink takes its right derivative).
    """
    q = tuple(q)
    q = q + (0.0,) * (4 - len(q))
    for v in q:
        if 0.0 < v < eps:
            raise ValueError(f"state {q} is within eps of a queue boundary")
    v2 = isinstance(cert, LyapunovV2)
    if v2:
        if diverge is None:
            raise ValueError("the merge-diverge certificate needs diverge parameters")
        for qk, hat in ((q[0], cert.hat_q_1), (q[1], cert.hat_q_2)):
            if 0.0 < abs(qk - hat) < eps:
                raise ValueError(f"state {q} is within eps of the certificate kink")
        gap = diverge.theta - (q[2] + q[3])
        if 0.0 < gap < eps:
            raise ValueError(f"state {q} is within eps of the storage bound")

    inflows = chains.inflows(mode)
    state = NetworkState(mode, q[0], q[1], q[2], q[3])
    dq = drift(state, inflows, merge, diverge if v2 else None)

    y = _coordinates(cert, q)
    i = MODES.index(mode)
    gain = 2.0 * cert.scale * y + cert.beta[i]
    if v2:
        xdot1 = (dq[0] if q[0] >= cert.hat_q_1 else 0.0) + dq[2]
        xdot2 = (dq[1] if q[1] >= cert.hat_q_2 else 0.0) + dq[3]
        drift_term = gain * (xdot1 + cert.alpha * xdot2)
    else:
        drift_term = gain * (dq[0] + cert.alpha * dq[1])
    jump = 0.0
    for rate, nxt in chains.exits(mode):
        jump += rate * (cert.beta[MODES.index(nxt)] - cert.beta[i]) * y
    return drift_term + jump


def drift_constants_v1(
    cert: LyapunovV1,
    merge: MergeParams,
    chains: ProductChain,
    box: float,
    pitch_count: int = 200,
) -> tuple[float, float]:
    """Negative-drift margin c from the service margins, and offset d as the
    grid maximum of L V + c|q| over [0, box]^2 (1-norm |q|)."""
    a1, a2, al = cert.a_bar_1, cert.a_bar_2, cert.alpha
    c = min(merge.F_1 - a1 - al * a2, al * merge.F_2 - a1 - al * a2) * min(1.0, al)
    if c <= 0.0:
        raise ValueError(f"drift margin not positive: c = {c}")
    d = -math.inf
    grid = [box * i / pitch_count for i in range(pitch_count + 1)]
    for mode in MODES:
        for q1 in grid:
            for q2 in grid:
                lv = numeric_generator(cert, mode, (q1, q2), merge, chains)
                d = max(d, lv + c * (q1 + q2))
    return c, d


@dataclass(frozen=True)
class DriftReport:
    cert: str
    c: float
    d: float
    max_lhs: float
    samples: int
    passed: bool
    per_mode_remainder: dict[str, tuple[float, float]]
    region: str

    def to_dict(self) -> dict:
        return {
            "cert": self.cert,
            "c": self.c,
            "d": self.d,
            "max_lhs": self.max_lhs,
            "samples": self.samples,
            "pass": self.passed,
            "per_mode_remainder": {
                m: {"mean": s[0], "std": s[1]} for m, s in self.per_mode_remainder.items()
            },
            "region": self.region,
        }


def _remainder_v1(cert, mode, q, merge, chains, lv):
    inflows = chains.inflows(mode)
    f1, f2 = merge_flows(inflows, q[0], q[1], merge.R_3, merge, MERGE_ONLY)
    y = q[0] + cert.alpha * q[1]
    return lv - y * ((cert.a_bar_1 - f1) + cert.alpha * (cert.a_bar_2 - f2))


def _remainder_v2(cert, mode, q, merge, diverge, chains, lv):
    inflows = chains.inflows(mode)
    fv = network_flows(inflows, q[0], q[1], q[2], q[3], merge, diverge)
    y = _coordinates(cert, q)
    return lv - y * ((cert.a_bar_1 - fv.f_34) + cert.alpha * (cert.a_bar_2 - fv.f_35))


def verify_drift(
    cert,
    merge: MergeParams,
    chains: ProductChain,
    diverge: DivergeParams | None = None,
    box: float = 1e4,
    samples: int = 10000,
    seed: int = 0,
    sample_scale: float = 1.0,
    c: float | None = None,
    d: float | None = None,
    grid_pitch: int = 200,
) -> DriftReport:
    """Check L V <= -c|q| + d over sampled states.

    Merge certificate: (c, d) default to the margin formula and the grid
    maximum over [0, box]^2; states are sampled uniformly over
    [0, box*sample_scale]^2 for each mode (scale above one probes beyond the
    calibration box, where a broken certificate shows positive drift).

    Merge-diverge certificate: states are sampled from simulated
    trajectories restricted to the region where both queues exceed their
    hat thresholds (the regime the composition floors certify); c comes
    from the worst drift over the limiting composition window, and d is
    calibrated on a structured lattice of worst-window states spanning the
    sampled range.
    """
    if isinstance(cert, LyapunovV2):
        return _verify_drift_v2(
            cert, merge, chains, diverge, box, samples, seed, c, d
        )
    if c is None:
        c, d_grid = drift_constants_v1(cert, merge, chains, box, grid_pitch)
        if d is None:
            d = d_grid
    elif d is None:
        d = _grid_max_v1(cert, merge, chains, box, grid_pitch, c)
    rng = np.random.default_rng(seed)
    reach = box * sample_scale
    max_lhs = -math.inf
    rem = {m: [] for m in MODES}
    for i in range(samples):
        mode = MODES[i % 4]
        q = (rng.uniform(EPS_Q, reach), rng.uniform(EPS_Q, reach))
        lv = numeric_generator(cert, mode, q, merge, chains)
        max_lhs = max(max_lhs, lv + c * (q[0] + q[1]))
        rem[mode].append(_remainder_v1(cert, mode, q, merge, chains, lv))
    per_mode = {m: (float(np.mean(v)), float(np.std(v))) for m, v in rem.items()}
    return DriftReport(
        cert="v1",
        c=c,
        d=d,
        max_lhs=max_lhs,
        samples=samples,
        passed=max_lhs <= d + 1e-9,
        per_mode_remainder=per_mode,
        region=f"uniform box [0, {reach:g}]^2",
    )


def _grid_max_v1(cert, merge, chains, box, pitch_count, c):
    d = -math.inf
    grid = [box * i / pitch_count for i in range(pitch_count + 1)]
    for mode in MODES:
        for q1 in grid:
            for q2 in grid:
                lv = numeric_generator(cert, mode, (q1, q2), merge, chains)
                d = max(d, lv + c * (q1 + q2))
    return d


def drift_margin_v2(cert: LyapunovV2, merge: MergeParams, diverge: DivergeParams) -> float:
    """Worst-case drift margin over the limiting composition window.

    For large queues the shared-link shares are confined to
    [w1/F3, 1 - w2/F3] with w_k = min(F_k, phi_k F_3); the drift coefficient
    is affine in the class-1 discharge over that window, so its maximum sits
    at an endpoint.
    """
    a1, a2, al = cert.a_bar_1, cert.a_bar_2, cert.alpha
    F3 = diverge.F_3
    w1 = min(merge.F_1, merge.phi.phi_1 * F3)
    w2 = min(merge.F_2, merge.phi.phi_2 * F3)

    def coeff(f34):
        return (a1 - f34) + al * (a2 - (F3 - f34))

    worst = max(coeff(w1), coeff(F3 - w2))
    c = -worst * min(1.0, al)
    if c <= 0.0:
        raise ValueError(f"drift margin not positive: c = {c}")
    return c


def _verify_drift_v2(cert, merge, chains, diverge, box, samples, seed, c, d):
    if diverge is None:
        raise ValueError("the merge-diverge certificate needs diverge parameters")
    if c is None:
        c = drift_margin_v2(cert, merge, diverge)

    kink_margin = 1e-6
    hat1, hat2 = cert.hat_q_1, cert.hat_q_2
    states = _sample_region_v2(cert, merge, chains, diverge, box, samples, seed, kink_margin)
    if not states:
        raise ValueError("no sampled states reached the certified region")

    max_q = max(q[0] + q[1] for _, q in states)
    if d is None:
        d = _lattice_max_v2(cert, merge, chains, diverge, c, max_q)

    max_lhs = -math.inf
    rem = {m: [] for m in MODES}
    for mode, q in states:
        lv = numeric_generator(cert, mode, q, merge, chains, diverge)
        max_lhs = max(max_lhs, lv + c * (q[0] + q[1] + q[2] + q[3]))
        rem[mode].append(_remainder_v2(cert, mode, q, merge, diverge, chains, lv))
    per_mode = {
        m: (float(np.mean(v)), float(np.std(v))) if v else (0.0, 0.0) for m, v in rem.items()
    }
    return DriftReport(
        cert="v2",
        c=c,
        d=d,
        max_lhs=max_lhs,
        samples=len(states),
        passed=max_lhs <= d + 1e-9,
        per_mode_remainder=per_mode,
        region=f"trajectory states with q_1 >= {hat1:.3g}, q_2 >= {hat2:.3g}",
    )


def _sample_region_v2(cert, merge, chains, diverge, box, samples, seed, kink_margin):
    """States drawn along simulated paths that sit past both hat thresholds
    and respect the composition floors that define the certified region."""
    hat1, hat2 = cert.hat_q_1, cert.hat_q_2
    states = []
    levels = [max(2.0 * (hat1 + hat2), 50.0), 0.25 * box, 0.5 * box, box]
    for t_idx, level in enumerate(levels):
        init = NetworkState("11", level, level, 0.5 * diverge.theta, 0.5 * diverge.theta)
        config = simulator.SimConfig(
            topology=MERGE_DIVERGE,
            merge=merge,
            diverge=diverge,
            chains=chains,
            horizon=max(20.0, level / 500.0),
            initial_state=init,
            seed=seed,
            sample_interval=0.02,
        )
        stats = simulator.simulate(
            config, rng=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t_idx,)))
        )
        for row in stats.path:
            mode, q1, q2, q31, q32 = row[1], row[2], row[3], row[4], row[5]
            if q1 < hat1 + kink_margin or q2 < hat2 + kink_margin:
                continue
            q3 = q31 + q32
            gap = diverge.theta - q3
            if q3 <= EPS_Q or 0.0 < gap < EPS_Q:
                continue
            floor1 = psi_lower_bound(1, q1, merge, diverge, chains)
            floor2 = psi_lower_bound(2, q2, merge, diverge, chains)
            if q31 / q3 < floor1 - 1e-9 or q32 / q3 < floor2 - 1e-9:
                continue
            states.append((mode, (q1, q2, q31, q32)))
            if len(states) >= samples:
                return states
    return states


def _lattice_max_v2(cert, merge, chains, diverge, c, max_q):
    """Structured bound: worst-window compositions over a queue ladder
    covering the sampled range."""
    theta = diverge.theta
    F3 = diverge.F_3
    w1 = min(merge.F_1, merge.phi.phi_1 * F3)
    w2 = min(merge.F_2, merge.phi.phi_2 * F3)
    lo = 1.0 - diverge.R_5 / F3
    hi = diverge.R_4 / F3
    psis = [lo + (hi - lo) * i / 8 for i in range(9)] + [w1 / F3, 1.0 - w2 / F3]
    psis = sorted({min(max(p, 0.02), 0.98) for p in psis})
    ladder = [cert.hat_q_1 + 1e-3, cert.hat_q_2 + 1e-3]
    level = max(cert.hat_q_1, cert.hat_q_2) + 1.0
    while level < max_q * 1.05:
        ladder.append(level)
        level *= 1.6
    ladder.append(max_q * 1.05)
    d = 0.0
    for mode in MODES:
        for q1 in ladder:
            if q1 < cert.hat_q_1:
                continue
            for q2 in ladder:
                if q2 < cert.hat_q_2:
                    continue
                for psi in psis:
                    for q3 in (0.5 * theta, theta):
                        q = (q1, q2, psi * q3, (1.0 - psi) * q3)
                        lv = numeric_generator(cert, mode, q, merge, chains, diverge)
                        d = max(d, lv + c * (q[0] + q[1] + q[2] + q[3]))
    return d
