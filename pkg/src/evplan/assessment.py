"""Per-bus screening of the grid: voltage sensitivity and EV hosting capacity.

A bus's voltage-stability factor is the finite-difference sensitivity
|dV/dP| to added active load.  Hosting capacity is found by growing an EV
load at the bus in fixed increments until any operational limit (voltage
band, phase unbalance, branch ampacity, EV power bounds or fleet cap)
would be violated; the last feasible total, scaled by a safety margin, is
reported together with the constraint that terminated growth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BaseCaseInfeasible, NotConverged, ValidationError
from .grid import BusLoad, DistributionNetwork, PowerFlowResult, run_power_flow


@dataclass(frozen=True)
class AssessmentLimits:
    """Operational limits governing hosting-capacity growth.

    v_min_schedule optionally stages the lower voltage limit by EV load
    level: a sequence of (up_to_kw, v_min) pairs, scanned in order, the
    first pair with ev_kw <= up_to_kw applies.
    """

    v_min: float = 0.9
    v_max: float = 1.1
    gamma: float = 0.03
    i_max_a: float = math.inf
    p_ev_bounds: tuple[float, float] = (0.0, math.inf)
    q_ev_bounds: tuple[float, float] = (0.0, math.inf)
    pf_bounds: tuple[float, float] = (0.95, 1.0)
    n_ev_max: int | None = None
    step_kw: float = 5.0
    margin: float = 0.85
    v_min_schedule: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValidationError("v_min must be below v_max")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError("gamma must lie in (0, 1)")
        if not 0.0 < self.margin <= 1.0:
            raise ValidationError("margin must lie in (0, 1]")
        if self.step_kw <= 0.0:
            raise ValidationError("step_kw must be positive")

    def v_min_at(self, ev_kw: float) -> float:
        if self.v_min_schedule:
            for up_to, vmin in self.v_min_schedule:
                if ev_kw <= up_to:
                    return vmin
            return self.v_min_schedule[-1][1]
        return self.v_min


@dataclass(frozen=True)
class NodeAssessment:
    bus: int
    vsf: float
    hc_kw: float
    binding: str


def unbalance(v_phases: np.ndarray) -> float:
    """Maximum relative deviation of a phase-voltage magnitude from the mean."""
    mags = np.abs(np.asarray(v_phases, dtype=complex))
    avg = float(np.mean(mags))
    return float(np.max(np.abs(mags - avg) / avg))


def with_extra_load(
    loads: dict[int, BusLoad] | None, bus: int, p_kw: float, q_kvar: float
) -> dict[int, BusLoad]:
    merged = dict(loads or {})
    base = merged.get(bus)
    if base is None:
        merged[bus] = BusLoad(p_kw, q_kvar, "ev_charging")
        return merged
    bp = np.asarray(base.p_kw, dtype=float)
    bq = np.asarray(base.q_kvar, dtype=float)
    if bp.ndim == 0:
        merged[bus] = BusLoad(float(bp) + p_kw, float(bq) + q_kvar, base.category)
    else:
        n = bp.shape[0]
        merged[bus] = BusLoad(bp + p_kw / n, bq + q_kvar / n, base.category)
    return merged


def vsf(
    net: DistributionNetwork,
    loads: dict[int, BusLoad] | None,
    bus: int,
    dp_kw: float = 0.01,
    base: PowerFlowResult | None = None,
) -> float:
    """|dV/dP| at a bus by forward finite difference (p.u. per kW).

    Two power-flow solves: the base case (reusable via `base`) and one
    with dp_kw of extra active load at the bus.
    """
    if base is None:
        base = run_power_flow(net, loads)
    bumped = run_power_flow(net, with_extra_load(loads, bus, dp_kw, 0.0))
    return abs(bumped.v_mag(bus) - base.v_mag(bus)) / dp_kw


def _check_operating_point(
    net: DistributionNetwork,
    loads: dict[int, BusLoad],
    limits: AssessmentLimits,
    ev_kw: float,
) -> tuple[bool, str]:
    """Solve the flow and test Eq-style operating limits; returns (ok, binding)."""
    try:
        res = run_power_flow(net, loads)
    except NotConverged:
        return False, "collapse"
    v_lo = limits.v_min_at(ev_kw)
    mags = np.abs(res.v)
    if float(mags.min()) < v_lo:
        return False, "v_lower"
    if float(mags.max()) > limits.v_max:
        return False, "v_upper"
    if net.n_phase > 1:
        for row in res.v:
            if unbalance(row) > limits.gamma:
                return False, "unbalance"
    i_mag = np.abs(res.i)
    for k, (_, _, br) in enumerate(net.edge_order):
        cap = min(br.ampacity, limits.i_max_a)
        if float(i_mag[k].max()) > cap:
            return False, "current"
    return True, ""


def hosting_capacity(
    net: DistributionNetwork,
    loads: dict[int, BusLoad] | None,
    bus: int,
    limits: AssessmentLimits,
    ev_pf: float = 0.95,
    method: str = "auto",
    max_steps: int = 2_000_000,
) -> NodeAssessment:
    """EV hosting capacity of one bus under the given limits.

    The EV load grows in `limits.step_kw` increments at power factor
    `ev_pf` (clamped into limits.pf_bounds, lagging).  `method="linear"`
    probes every increment; the default "auto" gallops and bisects, which
    returns the same boundary whenever feasibility is monotone in the
    load level (the case for constant-PQ radial feeders).

    Returns last-feasible-total * margin and the constraint that blocked
    the next increment.
    """
    loads = loads or {}
    pf = min(max(ev_pf, limits.pf_bounds[0]), limits.pf_bounds[1])
    tan_phi = math.tan(math.acos(pf))

    def bound_block(k: int) -> str:
        """Non-grid constraint violated by k increments, or ''."""
        p = k * limits.step_kw
        q = p * tan_phi
        if not limits.p_ev_bounds[0] <= p <= limits.p_ev_bounds[1]:
            return "p_ev_bound"
        if not limits.q_ev_bounds[0] <= q <= limits.q_ev_bounds[1]:
            return "q_ev_bound"
        if limits.n_ev_max is not None and k > limits.n_ev_max:
            return "n_ev_limit"
        return ""

    def probe(k: int) -> tuple[bool, str]:
        blocked = bound_block(k)
        if blocked:
            return False, blocked
        p = k * limits.step_kw
        merged = with_extra_load(loads, bus, p, p * tan_phi)
        return _check_operating_point(net, merged, limits, p)

    ok, binding = _check_operating_point(net, dict(loads), limits, 0.0)
    if not ok:
        raise BaseCaseInfeasible(
            f"base case violates limits ({binding}) before any EV load at bus {bus}"
        )

    if method == "linear":
        k = 0
        binding = ""
        while k < max_steps:
            ok, why = probe(k + 1)
            if not ok:
                binding = why
                break
            k += 1
        last_feasible = k
    else:
        # gallop to the first infeasible doubling, then bisect the boundary
        lo, hi = 0, 1
        binding = ""
        while hi <= max_steps:
            ok, why = probe(hi)
            if not ok:
                binding = why
                break
            lo, hi = hi, hi * 2
        if hi > max_steps:
            raise ValidationError(f"hosting capacity exceeds probe cap at bus {bus}")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            ok, why = probe(mid)
            if ok:
                lo = mid
            else:
                hi, binding = mid, why
        last_feasible = lo

    return NodeAssessment(
        bus=bus,
        vsf=math.nan,
        hc_kw=last_feasible * limits.step_kw * limits.margin,
        binding=binding or "none",
    )


def assess_all(
    net: DistributionNetwork,
    loads: dict[int, BusLoad] | None,
    limits: AssessmentLimits,
    ev_pf: float = 0.95,
    dp_kw: float = 0.01,
    buses: list[int] | None = None,
    method: str = "auto",
) -> list[NodeAssessment]:
    """VSF and hosting capacity for every non-slack bus (or a subset)."""
    base = run_power_flow(net, loads)
    targets = buses if buses is not None else [b for b in net.buses if b != net.slack]
    out = []
    for bus in targets:
        hc = hosting_capacity(net, loads, bus, limits, ev_pf=ev_pf, method=method)
        sensitivity = vsf(net, loads, bus, dp_kw=dp_kw, base=base)
        out.append(replace(hc, vsf=sensitivity))
    return out


def rank_candidates(assessments: list[NodeAssessment], k: int) -> list[int]:
    """Top-k buses by hosting capacity; ties by lower VSF, then bus id."""
    if k > len(assessments):
        raise ValidationError(f"k={k} exceeds {len(assessments)} assessed buses")
    ordered = sorted(assessments, key=lambda a: (-a.hc_kw, a.vsf, a.bus))
    return [a.bus for a in ordered[:k]]
