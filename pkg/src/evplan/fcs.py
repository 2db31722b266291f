"""Fixed-station capacity sizing against an annual cost ledger.

A station's annual net cost is

    net = construction + operation & maintenance + network-loss cost - revenue

with construction annuitized through the capital recovery factor.  Each
candidate bus is sized inside the box [queueing lower bound, hosting
capacity] on a 1 kW lattice; grid feasibility (voltage band, branch
ampacity) is verified by embedded power-flow solves with the station at
full output coincident with peak base load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridViolation, Infeasible, NotConverged, ValidationError
from .grid import BusLoad, DistributionNetwork, run_power_flow
from .assessment import with_extra_load


def crf(h: float, eps: float) -> float:
    """Capital recovery factor for discount rate h over eps years."""
    growth = (1.0 + h) ** eps
    return h * growth / (growth - 1.0)


@dataclass(frozen=True)
class CostParams:
    h: float  # discount rate
    eps: float  # depreciation years
    c_base: float  # $ fixed construction
    c_inve: float  # $/kW capacity investment
    c_om: float  # $/kW-yr operation and maintenance
    c_pb: float  # $/kWh purchase price
    c_ps: float  # $/kWh selling price
    c_cs: float  # $/kWh service price
    c_bf: float  # $/kW-yr base-demand charge
    r_xp: float = 0.13  # electricity tax rate
    r_xs: float = 0.06  # service tax rate
    t_om_h: float = 2920.0  # utilisation h/yr
    sigma: float = 1.0  # purchased-power to capacity ratio cap

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise ValidationError("discount rate must lie in (0, 1)")
        if self.eps < 1:
            raise ValidationError("depreciation period must be at least one year")
        for name in ("c_base", "c_inve", "c_om", "c_pb", "c_ps", "c_cs", "c_bf"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    @property
    def c_tax(self) -> float:
        """$/kWh tax on the energy margin plus the service fee."""
        return self.r_xp * (self.c_ps - self.c_pb) + self.r_xs * self.c_cs


def construction_cost(s_kw: float, p: CostParams) -> float:
    """Annuitized construction cost of a station of s_kw capacity ($/yr)."""
    return crf(p.h, p.eps) * (p.c_base + p.c_inve * s_kw)


def om_cost(s_kw: float, p: CostParams) -> float:
    return p.c_om * s_kw


def net_revenue(s_kw: float, p: CostParams) -> float:
    """Annual charging revenue net of purchase, tax and base-demand charges."""
    margin = p.c_ps + p.c_cs - p.c_pb - p.c_tax
    return p.t_om_h * s_kw * margin - p.c_bf * s_kw


def loss_cost(net: DistributionNetwork, loads: dict[int, BusLoad], p: CostParams) -> float:
    """Annual cost of network losses at the given loading ($/yr)."""
    res = run_power_flow(net, loads)
    return p.t_om_h * p.c_pb * res.p_loss_kw


@dataclass(frozen=True)
class CostLedger:
    c_cons: float
    c_om: float
    c_loss: float
    r_f: float

    @property
    def net(self) -> float:
        return self.c_cons + self.c_om + self.c_loss - self.r_f


@dataclass(frozen=True)
class FcsCandidate:
    bus: int
    hc_kw: float  # sizing upper bound from the hosting-capacity assessment
    s_q_kw: float = 0.0  # queueing-derived lower bound
    served_peak_kw: float = 0.0  # peak purchased power the station must carry


@dataclass(frozen=True)
class FcsLimits:
    v_min: float = 0.9
    v_max: float = 1.1
    i_max_a: float = math.inf
    p_f_bounds: tuple[float, float] = (0.0, math.inf)
    q_f_bounds: tuple[float, float] = (0.0, math.inf)


@dataclass(frozen=True)
class FcsSiteSizing:
    bus: int
    s_kw: float
    ledger: CostLedger
    v_min_pu: float
    i_peak_a: float
    s_lower_kw: float
    s_upper_kw: float


@dataclass
class FcsSizingResult:
    sites: tuple[FcsSiteSizing, ...]
    supply_covered: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def ledger(self) -> CostLedger:
        return CostLedger(
            c_cons=sum(s.ledger.c_cons for s in self.sites),
            c_om=sum(s.ledger.c_om for s in self.sites),
            c_loss=sum(s.ledger.c_loss for s in self.sites),
            r_f=sum(s.ledger.r_f for s in self.sites),
        )

    @property
    def total_kw(self) -> float:
        return sum(s.s_kw for s in self.sites)


class _SiteEvaluator:
    """Memoised annual-net-cost and feasibility evaluation at one bus."""

    def __init__(self, net, base_loads, bus, params, limits, ev_pf):
        self.net = net
        self.base_loads = base_loads or {}
        self.bus = bus
        self.p = params
        self.limits = limits
        self.tan_phi = math.tan(math.acos(ev_pf))
        self._cache: dict[float, tuple[bool, CostLedger, float, float]] = {}

    def evaluate(self, s_kw: float):
        key = round(s_kw, 6)
        if key in self._cache:
            return self._cache[key]
        loads = with_extra_load(self.base_loads, self.bus, s_kw, s_kw * self.tan_phi)
        try:
            res = run_power_flow(self.net, loads)
        except NotConverged:
            out = (False, None, math.nan, math.nan)
            self._cache[key] = out
            return out
        vmin = float(np.abs(res.v).min())
        imax = float(np.abs(res.i).max()) if res.i.size else 0.0
        feasible = self.limits.v_min <= vmin and float(np.abs(res.v).max()) <= self.limits.v_max
        for k, (_, _, br) in enumerate(self.net.edge_order):
            if float(np.abs(res.i[k]).max()) > min(br.ampacity, self.limits.i_max_a):
                feasible = False
                break
        ledger = CostLedger(
            c_cons=construction_cost(s_kw, self.p),
            c_om=om_cost(s_kw, self.p),
            c_loss=self.p.t_om_h * self.p.c_pb * res.p_loss_kw,
            r_f=net_revenue(s_kw, self.p),
        )
        out = (feasible, ledger, vmin, imax)
        self._cache[key] = out
        return out

    def net_cost(self, s_kw: float) -> float:
        feasible, ledger, _, _ = self.evaluate(s_kw)
        return ledger.net if feasible else math.inf


def _lattice(lo: float, hi: float) -> np.ndarray:
    """1 kW grid anchored at the lower bound, upper endpoint always included."""
    ks = np.arange(0.0, math.floor(hi - lo) + 1.0)
    pts = lo + ks
    if pts[-1] < hi - 1e-9:
        pts = np.append(pts, hi)
    return pts


def size_fcs_site(
    net: DistributionNetwork,
    base_loads: dict[int, BusLoad] | None,
    cand: FcsCandidate,
    params: CostParams,
    limits: FcsLimits | None = None,
    ev_pf: float = 0.95,
) -> FcsSiteSizing:
    """Minimum-net-cost capacity for one candidate inside [S_q, HC].

    The objective is affine in capacity apart from the loss term, so a
    coarse scan plus interval-halving refinement on the 1 kW lattice finds
    the global lattice optimum; ties resolve to the smaller capacity.
    """
    limits = limits or FcsLimits()
    s_lo = max(cand.s_q_kw, cand.served_peak_kw / params.sigma)
    if s_lo > cand.hc_kw + 1e-9:
        raise Infeasible(
            f"bus {cand.bus}: lower bound {s_lo:.1f} kW exceeds hosting capacity "
            f"{cand.hc_kw:.1f} kW"
        )
    ev = _SiteEvaluator(net, base_loads, cand.bus, params, limits, ev_pf)
    if not ev.evaluate(s_lo)[0]:
        raise GridViolation(
            f"bus {cand.bus}: grid limits violated already at the lower bound {s_lo:.1f} kW"
        )
    # largest grid-feasible capacity in the box (feasibility is monotone in load)
    pts = _lattice(s_lo, cand.hc_kw)
    if ev.evaluate(float(pts[-1]))[0]:
        s_hi = float(pts[-1])
    else:
        lo_i, hi_i = 0, len(pts) - 1
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) // 2
            if ev.evaluate(float(pts[mid]))[0]:
                lo_i = mid
            else:
                hi_i = mid
        s_hi = float(pts[lo_i])
        pts = pts[: lo_i + 1]

    # coarse sample, then halve the search interval around the best point
    idx = np.unique(np.linspace(0, len(pts) - 1, min(33, len(pts))).round().astype(int))
    best_i = min(idx, key=lambda i: (ev.net_cost(float(pts[i])), i))
    gap = max(1, int(np.diff(idx).max()) if len(idx) > 1 else 1)
    lo_i, hi_i = max(0, best_i - gap), min(len(pts) - 1, best_i + gap)
    while hi_i - lo_i > 8:
        sample = np.unique(np.linspace(lo_i, hi_i, 7).round().astype(int))
        best_i = min(sample, key=lambda i: (ev.net_cost(float(pts[i])), i))
        width = max(1, (hi_i - lo_i) // 4)
        lo_i, hi_i = max(lo_i, best_i - width), min(hi_i, best_i + width)
    final = range(lo_i, hi_i + 1)
    best_i = min(final, key=lambda i: (ev.net_cost(float(pts[i])), i))
    s_star = float(pts[best_i])

    feasible, ledger, vmin, imax = ev.evaluate(s_star)
    if not feasible:
        raise GridViolation(f"bus {cand.bus}: no feasible capacity in the sizing box")
    return FcsSiteSizing(
        bus=cand.bus,
        s_kw=s_star,
        ledger=ledger,
        v_min_pu=vmin,
        i_peak_a=imax,
        s_lower_kw=s_lo,
        s_upper_kw=s_hi,
    )


def size_fcs(
    net: DistributionNetwork,
    base_loads: dict[int, BusLoad] | None,
    candidates: list[FcsCandidate],
    params: CostParams,
    limits: FcsLimits | None = None,
    ev_pf: float = 0.95,
    energy_need_kwh: np.ndarray | None = None,
    mcs_supply_kwh: np.ndarray | None = None,
    period_h: float = 1.0,
) -> FcsSizingResult:
    """Size every candidate, then enforce the joint supply-coverage floor.

    When per-period charging-energy needs are given, total station capacity
    (plus mobile supply) must cover them; any shortfall is distributed over
    sites in proportion to their remaining grid-feasible headroom.
    """
    limits = limits or FcsLimits()
    if energy_need_kwh is not None:
        need = np.asarray(energy_need_kwh, dtype=float)
        mcs = (
            np.zeros_like(need)
            if mcs_supply_kwh is None
            else np.asarray(mcs_supply_kwh, dtype=float)
        )
        headroom_total = sum(c.hc_kw for c in candidates) * period_h
        if (need - mcs > headroom_total + 1e-9).any():
            raise Infeasible(
                "hosting capacity plus mobile supply cannot cover charging demand"
            )
    sites = [
        size_fcs_site(net, base_loads, c, params, limits, ev_pf) for c in candidates
    ]
    notes: list[str] = []
    if energy_need_kwh is not None:
        required_kw = float(np.max((need - mcs) / period_h)) if len(need) else 0.0
        total = sum(s.s_kw for s in sites)
        if total < required_kw - 1e-9:
            shortfall = required_kw - total
            head = np.array([s.s_upper_kw - s.s_kw for s in sites])
            if head.sum() < shortfall - 1e-9:
                raise Infeasible(
                    "supply-coverage floor exceeds grid-feasible station capacity"
                )
            raised = []
            for s, extra in zip(sites, shortfall * head / head.sum()):
                evl = _SiteEvaluator(
                    net, base_loads, s.bus, params, limits, ev_pf
                )
                feasible, ledger, vmin, imax = evl.evaluate(s.s_kw + extra)
                raised.append(
                    FcsSiteSizing(
                        bus=s.bus,
                        s_kw=s.s_kw + extra,
                        ledger=ledger,
                        v_min_pu=vmin,
                        i_peak_a=imax,
                        s_lower_kw=s.s_lower_kw,
                        s_upper_kw=s.s_upper_kw,
                    )
                )
            sites = raised
            notes.append(
                f"capacities raised {shortfall:.1f} kW above cost optimum to cover demand"
            )
    # aggregate purchased-power limits across stations
    p_total = sum(c.served_peak_kw for c in candidates)
    tan_phi = math.tan(math.acos(ev_pf))
    q_total = p_total * tan_phi
    if not limits.p_f_bounds[0] <= p_total <= limits.p_f_bounds[1]:
        raise Infeasible(f"aggregate station active power {p_total:.1f} kW outside bounds")
    if not limits.q_f_bounds[0] <= q_total <= limits.q_f_bounds[1]:
        raise Infeasible(f"aggregate station reactive power {q_total:.1f} kvar outside bounds")
    return FcsSizingResult(sites=tuple(sites), notes=notes)
