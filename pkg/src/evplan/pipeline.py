"""Staged orchestration: assess -> site -> size -> plan -> simulate -> compare.

Each stage function takes the loaded CaseBundle (plus upstream results
where needed) and returns a plain-dict report section, so the whole report
serialises directly.  `run_pipeline` wires the stage dependencies.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import admm as admm_mod
from .assessment import AssessmentLimits, assess_all, hosting_capacity, rank_candidates
from .caseio import CaseBundle
from .ems import EmsState, McsUnit, simulate_day
from .errors import Infeasible, ValidationError
from .fcs import FcsCandidate, size_fcs_site
from .grid import run_power_flow
from .queueing import mcs_cost, min_servers, size_mcs_site
from .siting import SitingInstance, solve_siting

STAGES = ("assess", "paths", "site", "size-mcs", "size-fcs", "plan", "simulate", "compare")


def run_assess(bundle: CaseBundle) -> dict:
    """Stage 1: power-flow screening of every bus, ranked candidate list."""
    base = run_power_flow(bundle.grid, bundle.loads)
    limits = bundle.assessment_limits()
    results = assess_all(
        bundle.grid,
        bundle.loads,
        limits,
        ev_pf=bundle.params["phi_ev"],
        dp_kw=bundle.params["dP_ev_kw"],
    )
    k = min(int(bundle.params["n_candidates"]), len(results))
    vmin, vmin_bus = base.min_voltage()
    return {
        "base_case": {
            "p_loss_kw": base.p_loss_kw,
            "v_min_pu": vmin,
            "v_min_bus": vmin_bus,
            "sweeps": base.iterations,
        },
        "nodes": [
            {"bus": a.bus, "hc_kw": a.hc_kw, "vsf": a.vsf, "binding": a.binding}
            for a in results
        ],
        "candidates": rank_candidates(results, k),
    }


def run_paths(bundle: CaseBundle) -> dict:
    dm = bundle.dm
    return {
        "nodes": list(dm.nodes),
        "distance_km": [[float(x) for x in row] for row in dm.d],
    }


def _fcs_transport_node(bundle: CaseBundle, assess_section: dict | None) -> int:
    """Transport node of the configured (or top-ranked coupled) fixed station."""
    fcs_bus = int(bundle.params["fcs_bus"])
    coupled = {bus: node for node, bus in bundle.transport.coupling.items()}
    if fcs_bus == 0:
        if not assess_section:
            raise ValidationError("fcs_bus=0 needs the assess stage to rank candidates")
        for bus in assess_section["candidates"]:
            if bus in coupled:
                return coupled[bus]
        raise Infeasible("no ranked candidate bus is coupled to the road network")
    if fcs_bus not in coupled:
        raise ValidationError(f"fcs_bus {fcs_bus} has no coupled transport node")
    return coupled[fcs_bus]


def _decision_tables(bundle: CaseBundle, decision, inst) -> dict:
    lam = admm_mod.demand_rates(decision, inst.xi)
    dm = bundle.dm
    xi = inst.xi[:, 0]
    travel_km = 0.0
    per_node = []
    for i, node in enumerate(dm.nodes):
        j = int(np.argmax(decision.v[i, :, 0]))
        dist = float(dm.d[i, j])
        cost = inst.c_tc * xi[i] * dist / float(inst.v_avg[0])
        travel_km += xi[i] * dist
        per_node.append(
            {
                "node": node,
                "station": dm.nodes[j],
                "distance_km": dist,
                "xi_ev_h": float(xi[i]),
                "travel_cost_usd_h": cost,
            }
        )
    return {
        "open_nodes": decision.open_nodes(0),
        "objective_usd_h": decision.objective,
        "assignments": per_node,
        "station_arrivals_ev_h": {
            str(dm.nodes[j]): float(lam[j]) for j in range(len(dm.nodes)) if lam[j] > 0
        },
        "total_driving_km": float(travel_km),
    }


def run_site(bundle: CaseBundle, assess_section: dict | None = None) -> dict:
    """Stage 2a: optimal station layout with the fixed station forced open."""
    fcs_node = _fcs_transport_node(bundle, assess_section)
    inst = bundle.siting_instance(frozenset({fcs_node}))
    decision = solve_siting(inst)
    section = _decision_tables(bundle, decision, inst)
    section["fcs_node"] = fcs_node
    return section


def run_size_mcs(bundle: CaseBundle, site_section: dict) -> dict:
    """Stage 2b: queueing-based charger counts and fleet cost per mobile site."""
    p = bundle.params
    fcs_node = site_section["fcs_node"]
    sites = []
    for node_str, lam in sorted(
        site_section["station_arrivals_ev_h"].items(), key=lambda kv: int(kv[0])
    ):
        node = int(node_str)
        if node == fcs_node:
            continue
        sites.append(
            size_mcs_site(
                node,
                lam,
                p["mu_per_h"],
                p["T_w_max_h"],
                charger_kw=p["charger_kw"],
                chargers_per_mcs=int(p["chargers_per_mcs"]),
                min_units=p["iota_min"],
                max_units=p["iota_max"],
            )
        )
    result = mcs_cost(
        sites, p["c_mo_usd_h"], p["c_tc_usd_h"], budget_per_h=p["C_mo_max_usd_h"]
    )
    return {
        "sites": [
            {
                "node": s.node,
                "lambda_ev_h": s.lam,
                "chargers": s.chargers,
                "n_mcs": s.n_mcs,
                "capacity_kw": s.capacity_kw,
                "rho": s.metrics.rho,
                "p0": s.metrics.p0,
                "lq": s.metrics.lq,
                "tw_h": s.metrics.tw,
                "cost_usd_h": p["c_mo_usd_h"] * s.n_mcs
                + p["c_tc_usd_h"] * s.lam * s.metrics.tw,
            }
            for s in result.sites
        ],
        "n_mcs_total": result.n_mcs_total,
        "operation_cost_usd_h": result.operation_cost_per_h,
        "waiting_cost_usd_h": result.waiting_cost_per_h,
        "flexible_energy_kwh": result.n_mcs_total * bundle.params["mcs_battery_kwh"],
    }


def run_size_fcs(bundle: CaseBundle, site_section: dict) -> dict:
    """Stage 2c: ledger-optimal fixed-station capacity at the coupled bus."""
    p = bundle.params
    fcs_node = site_section["fcs_node"]
    bus = bundle.transport.coupling[fcs_node]
    lam = site_section["station_arrivals_ev_h"].get(str(fcs_node), 0.0)
    hc = hosting_capacity(
        bundle.grid, bundle.loads, bus, bundle.assessment_limits(), ev_pf=p["phi_ev"]
    ).hc_kw
    s_q = min_servers(lam, p["mu_per_h"], p["T_w_max_h"]) * p["charger_kw"]
    cand = FcsCandidate(
        bus=bus,
        hc_kw=min(hc, p["iota_max"] * p["charger_kw"]),
        s_q_kw=min(s_q, p["iota_max"] * p["charger_kw"]),
        served_peak_kw=lam * p["energy_per_ev_kwh"],
    )
    site = size_fcs_site(
        bundle.grid, bundle.loads, cand, bundle.cost_params(), bundle.fcs_limits(),
        ev_pf=p["phi_ev"],
    )
    return {
        "sites": [
            {
                "node": fcs_node,
                "bus": bus,
                "capacity_kw": site.s_kw,
                "hc_kw": hc,
                "s_q_kw": cand.s_q_kw,
                "c_cons_usd_yr": site.ledger.c_cons,
                "c_om_usd_yr": site.ledger.c_om,
                "c_loss_usd_yr": site.ledger.c_loss,
                "revenue_usd_yr": site.ledger.r_f,
                "net_cost_usd_yr": site.ledger.net,
                "v_min_pu": site.v_min_pu,
                "i_peak_a": site.i_peak_a,
            }
        ],
        "total_capacity_kw": site.s_kw,
        "net_cost_usd_yr": site.ledger.net,
    }


def run_plan(bundle: CaseBundle, assess_section: dict | None = None) -> dict:
    """Full coordinated plan: siting and sizing negotiated to consensus."""
    p = bundle.params
    fcs_node = _fcs_transport_node(bundle, assess_section)
    bus = bundle.transport.coupling[fcs_node]
    hc = hosting_capacity(
        bundle.grid, bundle.loads, bus, bundle.assessment_limits(), ev_pf=p["phi_ev"]
    ).hc_kw
    inst = bundle.admm_instance(frozenset({fcs_node}), {bus: hc})
    state, converged = admm_mod.run(inst, bundle.stopping_rule())

    decision = state.decision
    tables = _decision_tables(bundle, decision, inst.siting)
    mcs_section = {
        "sites": [
            {
                "node": s.node,
                "lambda_ev_h": s.lam,
                "chargers": s.chargers,
                "n_mcs": s.n_mcs,
                "capacity_kw": s.capacity_kw,
                "rho": s.metrics.rho,
                "p0": s.metrics.p0,
                "lq": s.metrics.lq,
                "tw_h": s.metrics.tw,
                "cost_usd_h": p["c_mo_usd_h"] * s.n_mcs
                + p["c_tc_usd_h"] * s.lam * s.metrics.tw,
            }
            for s in state.mcs_sites
        ],
        "n_mcs_total": sum(s.n_mcs for s in state.mcs_sites),
        "operation_cost_usd_h": p["c_mo_usd_h"] * sum(s.n_mcs for s in state.mcs_sites),
        "waiting_cost_usd_h": sum(
            p["c_tc_usd_h"] * s.lam * s.metrics.tw for s in state.mcs_sites
        ),
        "flexible_energy_kwh": sum(s.n_mcs for s in state.mcs_sites)
        * p["mcs_battery_kwh"],
    }
    fcs_rows = [
        {
            "node": node,
            "bus": site.bus,
            "capacity_kw": site.s_kw,
            "hc_kw": hc,
            "expansion_potential_kw": hc - site.s_kw,
            "c_cons_usd_yr": site.ledger.c_cons,
            "c_om_usd_yr": site.ledger.c_om,
            "c_loss_usd_yr": site.ledger.c_loss,
            "revenue_usd_yr": site.ledger.r_f,
            "net_cost_usd_yr": site.ledger.net,
        }
        for node, site in state.fcs_sites
    ]
    return {
        "converged": converged,
        "iterations": state.k,
        "residuals": [
            {"k": i + 1, "r_prim": rp, "r_dual": rd}
            for i, (rp, rd) in enumerate(state.history)
        ],
        "rho": state.rho,
        "capacity_kw": {
            str(node): float(z)
            for node, z in zip(state.nodes, state.z)
            if z > 0
        },
        "consensus_kw": {
            str(node): float(w)
            for node, w in zip(state.nodes, state.w)
            if w > 0
        },
        "siting": tables,
        "mcs": mcs_section,
        "fcs": fcs_rows,
        "summary": {
            "fcs_location_bus": bus,
            "fcs_capacity_kw": sum(r["capacity_kw"] for r in fcs_rows),
            "mcs_locations_units": {
                str(s.node): s.n_mcs for s in state.mcs_sites
            },
            "fcs_annual_net_revenue_usd": sum(r["revenue_usd_yr"] for r in fcs_rows),
            "mcs_operation_cost_usd_h": mcs_section["operation_cost_usd_h"],
            "waiting_cost_usd_h": mcs_section["waiting_cost_usd_h"],
            "total_driving_km": tables["total_driving_km"],
        },
    }


def run_simulate(bundle: CaseBundle, plan_section: dict | None = None) -> dict:
    """Short-term flexible-capacity day: dispatch the planned fleet hourly."""
    p = bundle.params
    n_units = (
        plan_section["mcs"]["n_mcs_total"]
        if plan_section
        else int(p.get("ems_mcs_count", 6))
    )
    battery = p["mcs_battery_kwh"]
    soc_hi = p["mcs_soc_high"]
    fleet = tuple(
        McsUnit(
            soc_kwh=soc_hi * battery,
            capacity_kwh=battery,
            discharge_limit_kw=p["charger_kw"] * p["chargers_per_mcs"],
            soc_window=(p["mcs_soc_low"], p["mcs_soc_high"]),
        )
        for _ in range(n_units)
    )
    initial = EmsState(
        t=0, ess_soc_kwh=p.get("ess_initial_kwh", p["ess_soc_min_kwh"]), fleet=fleet
    )
    records, metrics = simulate_day(
        bundle.ems_profile, bundle.tou, initial, bundle.ems_config()
    )
    return {
        "n_mcs": n_units,
        "trajectory": [
            {
                "hour": r.hour,
                "tou": r.tou,
                "grid_kw": r.power.p_grid,
                "pv_kw": r.power.p_pv,
                "mcs_kw": r.power.p_mcs,
                "vg_kw": r.power.p_vg,
                "ev_kw": r.power.p_ev,
                "load_kw": r.power.p_load,
                "ess_charge_kw": r.ess_charge_kw,
                "ess_discharge_kw": r.ess_discharge_kw,
                "ess_soc_kwh": r.ess_soc_kwh,
                "loss_kw": r.conversion_loss_kw,
                "dispatched": r.dispatched,
            }
            for r in records
        ],
        "metrics": metrics,
    }


def _coupled_hc(bundle: CaseBundle, limits) -> dict[int, float]:
    """Hosting capacity of every coupled bus under the given limits."""
    out = {}
    for bus in sorted(set(bundle.transport.coupling.values())):
        out[bus] = hosting_capacity(
            bundle.grid, bundle.loads, bus, limits, ev_pf=bundle.params["phi_ev"]
        ).hc_kw
    return out


def _scenario_distance(bundle: CaseBundle, open_nodes: list[int]) -> float:
    xi = bundle.demand.xi[:, 0]
    total = 0.0
    for i, _ in enumerate(bundle.dm.nodes):
        dist = min(bundle.dm.d[i, bundle.dm.index(j)] for j in open_nodes)
        total += xi[i] * dist
    return float(total)


def _voltage_profile(bundle: CaseBundle, stations: dict[int, float], ev_pf: float):
    """Bus voltage magnitudes with stations at full output on top of base load."""
    from .assessment import with_extra_load

    loads = dict(bundle.loads)
    tan_phi = math.tan(math.acos(ev_pf))
    for bus, kw in stations.items():
        loads = with_extra_load(loads, bus, kw, kw * tan_phi)
    res = run_power_flow(bundle.grid, loads)
    return [
        {"bus": b, "v_pu": float(np.mean(np.abs(res.v[k])))}
        for k, b in enumerate(res.buses)
    ]


def run_compare(bundle: CaseBundle, plan_section: dict) -> dict:
    """Benchmark the coordinated plan against two conventional layouts.

    Scenario 1 places psi stations by the p-median rule over coupled nodes
    and sizes each by conservative stepping under a staged voltage floor;
    scenario 2 picks the highest-hosting-capacity coupled nodes that still
    cover all demand.  Both are capacity-matched to the plan so the table
    compares investment, flexibility and expansion potential at like scale.
    """
    p = bundle.params
    step = p["compare_step_kw"]
    joint_total = plan_section["summary"]["fcs_capacity_kw"]
    cost = bundle.cost_params()
    coupled_nodes = sorted(bundle.transport.coupling)

    # -- scenario 1: p-median siting, stepping capacities, no HC knowledge
    inst1 = SitingInstance(
        dm=bundle.dm,
        xi=bundle.demand.xi,
        c_tc=p["c_tc_usd_h"],
        v_avg=np.full(bundle.demand.n_periods, float(p["v_avg_kmh"])),
        psi=int(p["psi"]),
        varsigma=1.0,
        r_s=0.0,
        d_ev=float(bundle.dm.d.max()) * 2.0,
        d_mcs_bounds=(0.0, math.inf),
        candidates=tuple(coupled_nodes),
    )
    dec1 = solve_siting(inst1)
    s1_nodes = dec1.open_nodes(0)
    schedule = (
        (p["compare_v_min_break_kw"], p["compare_v_min_low_pu"]),
        (math.inf, p["compare_v_min_high_pu"]),
    )
    step_limits = AssessmentLimits(
        v_min=p["compare_v_min_high_pu"],
        v_max=p["v_max_pu"],
        gamma=p["gamma"],
        i_max_a=p["I_mn_max_A"],
        pf_bounds=(min(p["phi_ev"], 1.0), 1.0),
        step_kw=step,
        margin=1.0,
        v_min_schedule=schedule,
    )
    cap1 = math.ceil(joint_total / int(p["psi"]) / step) * step
    s1_caps = {}
    for node in s1_nodes:
        bus = bundle.transport.coupling[node]
        stepped = hosting_capacity(
            bundle.grid, bundle.loads, bus, step_limits, ev_pf=p["phi_ev"]
        ).hc_kw
        s1_caps[bus] = min(stepped, cap1)

    # -- scenario 2: HC-guided siting over coupled nodes, coverage-feasible
    hc_limits = bundle.assessment_limits()
    hc_map = _coupled_hc(bundle, hc_limits)
    n2 = min(int(p["n_candidates"]), len(coupled_nodes))
    best2 = None
    for combo in itertools.combinations(coupled_nodes, n2):
        cols = [bundle.dm.index(j) for j in combo]
        covered = (bundle.dm.d[:, cols] <= p["varsigma"] * p["d_EV_km"]).any(axis=1)
        if not covered.all():
            continue
        total_hc = sum(hc_map[bundle.transport.coupling[j]] for j in combo)
        if best2 is None or total_hc > best2[0]:
            best2 = (total_hc, list(combo))
    if best2 is None:
        raise Infeasible("no coupled-node subset covers all demand for scenario 2")
    s2_nodes = best2[1]
    cap2 = math.ceil(joint_total / n2 / step) * step
    s2_caps = {bundle.transport.coupling[j]: cap2 for j in s2_nodes}

    def investment(n_sites: int, total_kw: float) -> float:
        return n_sites * cost.c_base + cost.c_inve * total_kw

    plan_summary = plan_section["summary"]
    fcs_bus = plan_summary["fcs_location_bus"]
    joint_caps = {fcs_bus: joint_total}
    expansion_joint = sum(r["expansion_potential_kw"] for r in plan_section["fcs"])
    rows = [
        {
            "scenario": "joint_model",
            "stations": [fcs_bus],
            "total_fixed_capacity_kw": joint_total,
            "basic_investment_usd": investment(len(plan_section["fcs"]), joint_total),
            "flexible_energy_kwh": plan_section["mcs"]["flexible_energy_kwh"],
            "capacity_expansion_potential_kw": expansion_joint,
            "total_user_driving_km": plan_summary["total_driving_km"],
        },
        {
            "scenario": "scenario_1_p_median",
            "stations": sorted(s1_caps),
            "total_fixed_capacity_kw": sum(s1_caps.values()),
            "basic_investment_usd": investment(len(s1_caps), sum(s1_caps.values())),
            "flexible_energy_kwh": 0.0,
            "capacity_expansion_potential_kw": sum(
                hc_map[b] - s for b, s in s1_caps.items()
            ),
            "total_user_driving_km": _scenario_distance(bundle, s1_nodes),
        },
        {
            "scenario": "scenario_2_hc_guided",
            "stations": sorted(s2_caps),
            "total_fixed_capacity_kw": sum(s2_caps.values()),
            "basic_investment_usd": investment(len(s2_caps), sum(s2_caps.values())),
            "flexible_energy_kwh": 0.0,
            "capacity_expansion_potential_kw": sum(
                hc_map[b] - s for b, s in s2_caps.items()
            ),
            "total_user_driving_km": _scenario_distance(bundle, s2_nodes),
        },
    ]
    voltage = {
        "joint_model": _voltage_profile(bundle, joint_caps, p["phi_ev"]),
        "scenario_1_p_median": _voltage_profile(bundle, s1_caps, p["phi_ev"]),
        "scenario_2_hc_guided": _voltage_profile(bundle, s2_caps, p["phi_ev"]),
    }
    return {"table": rows, "voltage_profiles": voltage, "coupled_hc_kw": hc_map}


def run_pipeline(bundle: CaseBundle, stage: str) -> dict:
    """Execute one stage (with its prerequisites) or the full report."""
    report: dict = {
        "case": str(bundle.case_dir),
        "seed": int(bundle.params["demand_seed"]),
        "stage": stage,
    }
    if stage not in STAGES and stage != "report":
        raise ValidationError(f"unknown stage {stage!r}; expected one of {STAGES}")
    needs_assess = stage in ("assess", "report") or (
        int(bundle.params["fcs_bus"]) == 0 and stage in ("site", "size-mcs", "size-fcs",
                                                         "plan", "simulate", "compare")
    )
    assess_section = run_assess(bundle) if needs_assess else None
    if assess_section:
        report["assessment"] = assess_section
    if stage in ("paths", "report"):
        report["paths"] = run_paths(bundle)
    if stage in ("site", "size-mcs", "size-fcs", "report"):
        site_section = run_site(bundle, assess_section)
        report["siting"] = site_section
        if stage in ("size-mcs", "report"):
            report["mcs_sizing"] = run_size_mcs(bundle, site_section)
        if stage in ("size-fcs", "report"):
            report["fcs_sizing"] = run_size_fcs(bundle, site_section)
    if stage in ("plan", "simulate", "compare", "report"):
        plan_section = run_plan(bundle, assess_section)
        report["plan"] = plan_section
        if stage in ("simulate", "report"):
            report["ems"] = run_simulate(bundle, plan_section)
        if stage in ("compare", "report"):
            report["compare"] = run_compare(bundle, plan_section)
    return report
