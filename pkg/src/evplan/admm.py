"""Consensus coordination of the siting block X and the capacity block Z.

The two blocks negotiate through a consensus vector W and scaled duals U:

    x-update   solve the station-location problem with every node whose
               consensus capacity is positive forced open (the linearised
               capacity-only-at-open-sites coupling, big-M form)
    z-update   re-size open nodes (queueing for mobile sites, ledger
               optimization for fixed sites), zero closed nodes, then scale
               proportionally when total capacity exceeds its cap
    w-update   w = clamp(z + u, 0, iota_max * x) elementwise
    u-update   u += rho * (z - w)

The loop stops when ||z - w|| and rho * ||w - w_prev|| both fall under
their tolerances.  The coupled problem is non-convex (binary x, integer
chargers), so convergence is not guaranteed in general; the loop returns
its best iterate with a flag instead of asserting success.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, ValidationError
from .fcs import CostParams, FcsCandidate, FcsLimits, size_fcs_site
from .grid import BusLoad, DistributionNetwork
from .queueing import McsSiteSizing, erlang_metrics, min_servers, QueueInput
from .siting import SitingDecision, SitingInstance, solve_siting

W_OPEN_TOL = 1e-9  # consensus capacity above this forces a node open


@dataclass(frozen=True)
class StoppingRule:
    eps_prim: float = 1e-4
    eps_dual: float = 1e-4
    max_iter: int = 50

    def __post_init__(self):
        if self.eps_prim <= 0 or self.eps_dual <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")


@dataclass
class AdmmInstance:
    """Everything both negotiation sides need, plus the coupling caps."""

    siting: SitingInstance
    mu: float
    tw_limit: float
    grid: DistributionNetwork
    grid_loads: dict[int, BusLoad]
    cost_params: CostParams
    coupling: dict[int, int]  # transport node -> distribution bus
    hc_by_bus: dict[int, float]  # hosting capacity of coupled buses (kW)
    fcs_limits: FcsLimits = field(default_factory=FcsLimits)
    charger_kw: float = 100.0
    chargers_per_mcs: int = 4
    iota_max_units: float = 20.0
    iota_tot_kw: float = math.inf
    energy_per_ev_kwh: float = 30.0
    ev_pf: float = 0.95
    rho: float = 1.0
    adapt_rho: bool = False

    def __post_init__(self):
        if self.siting.n_periods != 1:
            raise ValidationError(
                "the coordinator works on one period; solve periods independently"
            )
        for node in self.siting.fixed_open:
            if node not in self.coupling:
                raise ValidationError(f"fixed station {node} has no coupled bus")

    @property
    def iota_max_kw(self) -> float:
        return self.iota_max_units * self.charger_kw


@dataclass
class PlanState:
    nodes: tuple[int, ...]
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    rho: float
    k: int = 0
    w_prev: np.ndarray | None = None
    history: list[tuple[float, float]] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    decision: SitingDecision | None = None
    mcs_sites: list[McsSiteSizing] = field(default_factory=list)
    fcs_sites: list = field(default_factory=list)


def project_consensus(
    z: np.ndarray, u: np.ndarray, x: np.ndarray, iota_max_kw: float
) -> np.ndarray:
    """Elementwise clamp of z + u into [0, iota_max * x]."""
    return np.clip(z + u, 0.0, iota_max_kw * np.asarray(x, dtype=float))


def update_dual(u: np.ndarray, z: np.ndarray, w: np.ndarray, rho: float) -> np.ndarray:
    return u + rho * (z - w)


def residuals(state: PlanState) -> tuple[float, float]:
    """Euclidean primal and dual residuals of the latest iterate."""
    r_prim = float(np.linalg.norm(state.z - state.w))
    w_prev = state.w_prev if state.w_prev is not None else np.zeros_like(state.w)
    r_dual = float(state.rho * np.linalg.norm(state.w - w_prev))
    return r_prim, r_dual


def update_siting(state: PlanState, inst: AdmmInstance) -> SitingDecision:
    """x-update: re-solve the location problem with consensus-open nodes forced.

    Nodes with positive consensus capacity cannot drop to zero capacity
    without violating w <= iota_max * x, so they enter the fixed-open set.
    """
    forced = set(inst.siting.fixed_open)
    for j, node in enumerate(state.nodes):
        if state.w[j] > W_OPEN_TOL:
            forced.add(node)
    if len(forced) > inst.siting.psi:
        raise Infeasible(
            f"{len(forced)} nodes carry consensus capacity but only "
            f"{inst.siting.psi} stations may open"
        )
    sub = SitingInstance(
        dm=inst.siting.dm,
        xi=inst.siting.xi,
        c_tc=inst.siting.c_tc,
        v_avg=inst.siting.v_avg,
        psi=inst.siting.psi,
        fixed_open=frozenset(forced),
        r_s=inst.siting.r_s,
        d_ev=inst.siting.d_ev,
        varsigma=inst.siting.varsigma,
        d_mcs_bounds=inst.siting.d_mcs_bounds,
        candidates=inst.siting.candidates,
    )
    return solve_siting(sub)


def update_capacity(
    state: PlanState, inst: AdmmInstance, decision: SitingDecision
) -> tuple[np.ndarray, list[McsSiteSizing], list]:
    """z-update: queueing-sized mobile nodes, ledger-sized fixed nodes.

    Closed nodes get zero capacity; if total capacity exceeds its cap all
    entries are scaled down proportionally.
    """
    nodes = state.nodes
    lam = demand_rates(decision, inst.siting.xi)
    z = np.zeros(len(nodes))
    mcs_sites: list[McsSiteSizing] = []
    fcs_sites = []
    for j, node in enumerate(nodes):
        if decision.x[j, 0] != 1:
            continue
        if node in inst.siting.fixed_open:
            bus = inst.coupling[node]
            s_q = min_servers(lam[j], inst.mu, inst.tw_limit) * inst.charger_kw
            cand = FcsCandidate(
                bus=bus,
                hc_kw=min(inst.hc_by_bus[bus], inst.iota_max_kw),
                s_q_kw=min(s_q, inst.iota_max_kw),
                served_peak_kw=lam[j] * inst.energy_per_ev_kwh,
            )
            site = size_fcs_site(
                inst.grid, inst.grid_loads, cand, inst.cost_params,
                inst.fcs_limits, inst.ev_pf,
            )
            fcs_sites.append((node, site))
            z[j] = site.s_kw
        else:
            chargers = min_servers(
                lam[j], inst.mu, inst.tw_limit, c_max=int(inst.iota_max_units)
            )
            mcs_sites.append(
                McsSiteSizing(
                    node=node,
                    lam=lam[j],
                    chargers=chargers,
                    n_mcs=math.ceil(chargers / inst.chargers_per_mcs),
                    capacity_kw=chargers * inst.charger_kw,
                    metrics=erlang_metrics(QueueInput(lam[j], inst.mu, chargers)),
                )
            )
            z[j] = chargers * inst.charger_kw
    total = z.sum()
    if total > inst.iota_tot_kw:
        z *= inst.iota_tot_kw / total
    return z, mcs_sites, fcs_sites


def demand_rates(decision: SitingDecision, xi: np.ndarray) -> np.ndarray:
    """Per-station arrival rates implied by the assignment: lam_j = sum_i xi_i v_ij."""
    return (xi[:, 0][:, None] * decision.v[:, :, 0]).sum(axis=0)


def run(inst: AdmmInstance, rule: StoppingRule | None = None) -> tuple[PlanState, bool]:
    """Alternate the four updates until both residuals meet tolerance.

    Returns the converged state, or the best iterate seen (smallest worst
    residual) with converged=False when the cap is reached.
    """
    rule = rule or StoppingRule()
    n = len(inst.siting.dm.nodes)
    state = PlanState(
        nodes=inst.siting.dm.nodes,
        x=np.zeros(n, dtype=int),
        z=np.zeros(n),
        w=np.zeros(n),
        u=np.zeros(n),
        rho=inst.rho,
    )
    best: dict | None = None
    for k in range(1, rule.max_iter + 1):
        decision = update_siting(state, inst)
        state.x = decision.x[:, 0].copy()
        state.decision = decision
        z, mcs_sites, fcs_sites = update_capacity(state, inst, decision)
        state.z = z
        state.mcs_sites = mcs_sites
        state.fcs_sites = fcs_sites
        state.w_prev = state.w
        state.w = project_consensus(state.z, state.u, state.x, inst.iota_max_kw)
        state.u = update_dual(state.u, state.z, state.w, state.rho)
        state.k = k
        r_prim, r_dual = residuals(state)
        state.history.append((r_prim, r_dual))
        state.trace.append(
            {
                "k": k,
                "x": state.x.copy(),
                "z": state.z.copy(),
                "w": state.w.copy(),
                "u": state.u.copy(),
                "r_prim": r_prim,
                "r_dual": r_dual,
                "objective": decision.objective,
            }
        )
        if best is None or max(r_prim, r_dual) < best["worst"]:
            best = {"worst": max(r_prim, r_dual), "snapshot": state.trace[-1]}
        if r_prim <= rule.eps_prim and r_dual <= rule.eps_dual:
            return state, True
        if inst.adapt_rho:
            if r_prim > 10.0 * r_dual:
                state.rho *= 2.0
            elif r_dual > 10.0 * r_prim:
                state.rho /= 2.0
    # restore the best iterate so callers see the least-inconsistent plan
    snap = best["snapshot"]
    state.x, state.z, state.w, state.u = snap["x"], snap["z"], snap["w"], snap["u"]
    return state, False
