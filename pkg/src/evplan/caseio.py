"""Case-directory ingestion: grid, road network, demand, parameters.

A case directory holds:

    grid_branches.csv    from,to,r_ohm,x_ohm,b_us,ampacity_a
                         (optionally r_a,x_a,r_b,x_b,r_c,x_c for per-phase)
    grid_loads.csv       bus,p_kw,q_kvar,category
    transport_edges.csv  u,v,length  (scaled by distance_unit_km at load)
    coupling.csv         transport_node,distribution_bus
    demand.csv           node,period,ev_per_hour,kwh_arr,kwh_dep (optional
                         when the config selects the synthetic generator)
    ems_profile.csv      hour,load_kw,pv_kw,ev_kw
    params.cfg           key = value lines keyed by study-parameter symbols

Every cross-reference is checked at load time; a missing parameter or a
dangling bus/node reference raises ValidationError naming the culprit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .admm import AdmmInstance, StoppingRule
from .assessment import AssessmentLimits
from .ems import EmsConfig, HourlyPower, TouSchedule
from .errors import ParseError, ValidationError
from .fcs import CostParams, FcsLimits
from .grid import Branch, BusLoad, DistributionNetwork
from .siting import SitingInstance
from .transport import (
    all_pairs_shortest,
    DemandProfile,
    DistanceMatrix,
    synthesize_demand,
    TransportNetwork,
)

# Parameters every case must define, with units in the key or comment.
REQUIRED_PARAMS = (
    "I_mn_max_A",     # branch current cap (A)
    "phi_ev",         # EV charging power factor
    "gamma",          # phase-unbalance cap (fraction)
    "v_avg_kmh",      # average EV driving speed (km/h)
    "psi",            # stations to open per period
    "R_s_km",         # station service radius (km)
    "d_EV_km",        # EV driving range (km)
    "varsigma",       # psychological range factor
    "c_pb_usd_kwh",   # electricity purchase price ($/kWh)
    "c_bf_usd_kw",    # base-demand charge ($/kW-yr)
    "T_w_max_h",      # queue wait limit (h)
    "c_tc_usd_h",     # travel-time cost rate ($/h)
    "mu_per_h",       # charger service rate (EV/h)
    "iota_min",       # per-site charger-unit floor
    "iota_max",       # per-site charger-unit cap
    "c_mo_usd_h",     # per-MCS hourly operation cost ($/h)
    "C_base_usd",     # fixed station construction cost ($)
    "C_inve_usd_kw",  # capacity investment cost ($/kW)
    "C_land_usd_kw",  # land share of the investment cost ($/kW)
    "c_ps_usd_kwh",   # charging energy selling price ($/kWh)
    "C_mo_max_usd_h", # MCS fleet operating budget ($/h)
    "V_f_min_pu",     # station-feasibility voltage floor (p.u.)
    "V_f_max_pu",     # station-feasibility voltage cap (p.u.)
    "r_discount",     # discount rate
    "n_years",        # depreciation period (years)
    "c_om_usd_kw",    # O&M cost ($/kW-yr)
    "t_om_h_day",     # utilisation (h/day)
    "c_cs_usd_kwh",   # charging service price ($/kWh)
)

_DEFAULTS = {
    "s_base_mva": 10.0,
    "v_base_kv": 12.66,
    "slack_bus": 1,
    "slack_v_pu": 1.0,
    "v_min_pu": 0.9,
    "v_max_pu": 1.1,
    "hc_step_kw": 5.0,
    "hc_margin": 0.85,
    "dP_ev_kw": 0.01,
    "n_candidates": 3,
    "fcs_bus": 0,          # 0 = use the top-ranked assessed bus
    "R_xp": 0.13,
    "R_xs": 0.06,
    "sigma": 1.0,
    "distance_unit_km": 1.0,
    "demand_source": "csv",
    "demand_seed": 42,
    "demand_periods": 1,
    "demand_intensity": 2.5,
    "ev_battery_kwh": 60.0,
    "energy_per_ev_kwh": 30.0,
    "charger_kw": 100.0,
    "chargers_per_mcs": 4,
    "mcs_battery_kwh": 600.0,
    "iota_tot_kw": math.inf,
    "rho": 1.0,
    "eps_prim": 1e-4,
    "eps_dual": 1e-4,
    "max_iter": 50,
    "adapt_rho": 0,
    "ess_capacity_kwh": 1000.0,
    "ess_soc_min_kwh": 100.0,
    "ess_soc_max_kwh": 950.0,
    "ess_power_kw": 250.0,
    "ess_efficiency": 0.95,
    "grid_import_limit_kw": math.inf,
    "mcs_soc_low": 0.60,
    "mcs_soc_high": 0.95,
    "compare_step_kw": 25.0,
    "compare_v_min_low_pu": 0.905,
    "compare_v_min_high_pu": 0.90,
    "compare_v_min_break_kw": 100.0,
    "tou": "valley,valley,valley,valley,valley,valley,flat,flat,flat,flat,flat,"
    "flat,flat,flat,flat,flat,peak,peak,peak,peak,peak,flat,flat,flat",
}


def default_case_dir() -> Path:
    """Directory of the bundled coupled 33-bus / 25-node case."""
    return Path(resources.files("evplan").joinpath("data/default_case"))


def parse_params(path: Path) -> dict:
    """Read `key = value` lines; values become int, float or string."""
    params: dict = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError(f"{path}:{lineno}: empty parameter name")
        params[key] = _coerce(value)
    return params


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    if value.lower() in ("inf", "infinity"):
        return math.inf
    return value


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            fields = reader.fieldnames or []
            missing = [c for c in required if c not in fields]
            if missing:
                raise ParseError(f"{path}: missing columns {missing}")
            return [dict(row) for row in reader]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _num(row: dict, key: str, path: Path, lineno: int) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise ParseError(f"{path}: line {lineno}: bad numeric value for {key!r}") from None


@dataclass
class CaseBundle:
    """Validated case: networks, demand, hourly profile and parameters."""

    grid: DistributionNetwork
    loads: dict[int, BusLoad]
    transport: TransportNetwork
    demand: DemandProfile
    ems_profile: list[HourlyPower]
    tou: TouSchedule
    params: dict
    case_dir: Path
    dm: DistanceMatrix = field(init=False)

    def __post_init__(self):
        self.dm = all_pairs_shortest(self.transport)

    # --- parameter-backed factories -------------------------------------

    def assessment_limits(self, schedule=None) -> AssessmentLimits:
        p = self.params
        return AssessmentLimits(
            v_min=p["v_min_pu"],
            v_max=p["v_max_pu"],
            gamma=p["gamma"],
            i_max_a=p["I_mn_max_A"],
            pf_bounds=(min(p["phi_ev"], 1.0), 1.0),
            step_kw=p["hc_step_kw"],
            margin=p["hc_margin"],
            v_min_schedule=schedule,
        )

    def siting_instance(self, fixed_open: frozenset[int] = frozenset()) -> SitingInstance:
        p = self.params
        periods = self.demand.n_periods
        return SitingInstance(
            dm=self.dm,
            xi=self.demand.xi,
            c_tc=p["c_tc_usd_h"],
            v_avg=np.full(periods, float(p["v_avg_kmh"])),
            psi=int(p["psi"]),
            fixed_open=fixed_open,
            r_s=p["R_s_km"],
            d_ev=p["d_EV_km"],
            varsigma=p["varsigma"],
        )

    def cost_params(self) -> CostParams:
        p = self.params
        return CostParams(
            h=p["r_discount"],
            eps=p["n_years"],
            c_base=p["C_base_usd"],
            c_inve=p["C_inve_usd_kw"],
            c_om=p["c_om_usd_kw"],
            c_pb=p["c_pb_usd_kwh"],
            c_ps=p["c_ps_usd_kwh"],
            c_cs=p["c_cs_usd_kwh"],
            c_bf=p["c_bf_usd_kw"],
            r_xp=p["R_xp"],
            r_xs=p["R_xs"],
            t_om_h=p["t_om_h_day"] * 365.0,
            sigma=p["sigma"],
        )

    def fcs_limits(self) -> FcsLimits:
        p = self.params
        return FcsLimits(
            v_min=p["V_f_min_pu"], v_max=p["V_f_max_pu"], i_max_a=p["I_mn_max_A"]
        )

    def ems_config(self) -> EmsConfig:
        p = self.params
        return EmsConfig(
            ess_capacity_kwh=p["ess_capacity_kwh"],
            ess_bounds_kwh=(p["ess_soc_min_kwh"], p["ess_soc_max_kwh"]),
            ess_power_kw=p["ess_power_kw"],
            roundtrip_eff=p["ess_efficiency"],
            grid_import_limit_kw=p["grid_import_limit_kw"],
        )

    def stopping_rule(self) -> StoppingRule:
        p = self.params
        return StoppingRule(
            eps_prim=p["eps_prim"], eps_dual=p["eps_dual"], max_iter=int(p["max_iter"])
        )

    def admm_instance(
        self, fixed_open: frozenset[int], hc_by_bus: dict[int, float]
    ) -> AdmmInstance:
        p = self.params
        return AdmmInstance(
            siting=self.siting_instance(fixed_open),
            mu=p["mu_per_h"],
            tw_limit=p["T_w_max_h"],
            grid=self.grid,
            grid_loads=self.loads,
            cost_params=self.cost_params(),
            coupling=dict(self.transport.coupling),
            hc_by_bus=hc_by_bus,
            fcs_limits=self.fcs_limits(),
            charger_kw=p["charger_kw"],
            chargers_per_mcs=int(p["chargers_per_mcs"]),
            iota_max_units=p["iota_max"],
            iota_tot_kw=p["iota_tot_kw"],
            energy_per_ev_kwh=p["energy_per_ev_kwh"],
            ev_pf=p["phi_ev"],
            rho=p["rho"],
            adapt_rho=bool(p["adapt_rho"]),
        )


def _load_grid(case_dir: Path, params: dict) -> tuple[DistributionNetwork, dict[int, BusLoad]]:
    bpath = case_dir / "grid_branches.csv"
    rows = _read_csv(bpath, ("from", "to"))
    per_phase = rows and "r_a" in rows[0]
    branches = []
    for lineno, row in enumerate(rows, start=2):
        amp = _num(row, "ampacity_a", bpath, lineno) if row.get("ampacity_a") else math.inf
        if per_phase:
            z = np.diag(
                [
                    _num(row, "r_a", bpath, lineno) + 1j * _num(row, "x_a", bpath, lineno),
                    _num(row, "r_b", bpath, lineno) + 1j * _num(row, "x_b", bpath, lineno),
                    _num(row, "r_c", bpath, lineno) + 1j * _num(row, "x_c", bpath, lineno),
                ]
            )
            y = np.zeros((3, 3), dtype=complex)
            if row.get("b_us"):
                y += 1j * np.eye(3) * _num(row, "b_us", bpath, lineno) * 1e-6
        else:
            z = _num(row, "r_ohm", bpath, lineno) + 1j * _num(row, "x_ohm", bpath, lineno)
            y = 1j * _num(row, "b_us", bpath, lineno) * 1e-6 if row.get("b_us") else 0.0
        branches.append(
            Branch(int(row["from"]), int(row["to"]), z_abc=z, y_abc=y, ampacity=amp)
        )
    net = DistributionNetwork(
        branches,
        slack=int(params["slack_bus"]),
        v_base_kv=params["v_base_kv"],
        s_base_mva=params["s_base_mva"],
        slack_v_pu=params["slack_v_pu"],
    )
    lpath = case_dir / "grid_loads.csv"
    loads: dict[int, BusLoad] = {}
    for lineno, row in enumerate(_read_csv(lpath, ("bus", "p_kw", "q_kvar")), start=2):
        bus = int(row["bus"])
        if bus not in net._index:
            raise ValidationError(f"{lpath}: load references unknown bus {bus}")
        loads[bus] = BusLoad(
            _num(row, "p_kw", lpath, lineno),
            _num(row, "q_kvar", lpath, lineno),
            row.get("category", "unspecified"),
        )
    return net, loads


def _load_transport(case_dir: Path, params: dict, net: DistributionNetwork) -> TransportNetwork:
    epath = case_dir / "transport_edges.csv"
    unit = params["distance_unit_km"]
    edges = []
    nodes = set()
    for lineno, row in enumerate(_read_csv(epath, ("u", "v", "length")), start=2):
        u, v = int(row["u"]), int(row["v"])
        edges.append((u, v, unit * _num(row, "length", epath, lineno)))
        nodes.update((u, v))
    cpath = case_dir / "coupling.csv"
    coupling = {}
    for row in _read_csv(cpath, ("transport_node", "distribution_bus")):
        t_node, bus = int(row["transport_node"]), int(row["distribution_bus"])
        if t_node not in nodes:
            raise ValidationError(f"{cpath}: unknown transport node {t_node}")
        if bus not in net._index:
            raise ValidationError(f"{cpath}: unknown distribution bus {bus}")
        coupling[t_node] = bus
    return TransportNetwork(
        nodes=tuple(sorted(nodes)), edges=tuple(edges), coupling=coupling
    )


def _load_demand(case_dir: Path, params: dict, transport: TransportNetwork) -> DemandProfile:
    source = str(params["demand_source"])
    if source == "synth":
        return synthesize_demand(
            seed=int(params["demand_seed"]),
            nodes=transport.nodes,
            periods=int(params["demand_periods"]),
            intensity=params["demand_intensity"],
            battery_kwh=params["ev_battery_kwh"],
        )
    dpath = case_dir / "demand.csv"
    rows = _read_csv(dpath, ("node", "period", "ev_per_hour", "kwh_arr", "kwh_dep"))
    periods = 1 + max(int(r["period"]) for r in rows)
    index = {n: i for i, n in enumerate(transport.nodes)}
    xi = np.zeros((len(transport.nodes), periods))
    soc_arr = np.zeros(periods)
    soc_dep = np.zeros(periods)
    for lineno, row in enumerate(rows, start=2):
        node, t = int(row["node"]), int(row["period"])
        if node not in index:
            raise ValidationError(f"{dpath}: unknown transport node {node}")
        xi[index[node], t] += _num(row, "ev_per_hour", dpath, lineno)
        soc_arr[t] += _num(row, "kwh_arr", dpath, lineno)
        soc_dep[t] += _num(row, "kwh_dep", dpath, lineno)
    return DemandProfile(
        nodes=transport.nodes, xi=xi, soc_arr_kwh=soc_arr, soc_dep_kwh=soc_dep
    )


def _load_ems_profile(case_dir: Path) -> list[HourlyPower]:
    path = case_dir / "ems_profile.csv"
    rows = _read_csv(path, ("hour", "load_kw", "pv_kw", "ev_kw"))
    if len(rows) != 24:
        raise ValidationError(f"{path}: expected 24 hourly rows, got {len(rows)}")
    profile = []
    for lineno, row in enumerate(rows, start=2):
        profile.append(
            HourlyPower(
                p_load=_num(row, "load_kw", path, lineno),
                p_pv=_num(row, "pv_kw", path, lineno),
                p_ev=_num(row, "ev_kw", path, lineno),
                p_vg=_num(row, "vg_kw", path, lineno) if row.get("vg_kw") else 0.0,
            )
        )
    return profile


def load_case(
    case_dir: Path | str | None = None,
    config_path: Path | str | None = None,
    seed: int | None = None,
) -> CaseBundle:
    """Load and cross-validate a case directory (the bundled one by default).

    config_path overrides the case's params.cfg; seed overrides the
    synthetic-demand seed.
    """
    case_dir = Path(case_dir) if case_dir else default_case_dir()
    if not case_dir.is_dir():
        raise ValidationError(f"case directory {case_dir} does not exist")
    cfg = Path(config_path) if config_path else case_dir / "params.cfg"
    params = dict(_DEFAULTS)
    params.update(parse_params(cfg))
    missing = [k for k in REQUIRED_PARAMS if k not in params]
    if missing:
        raise ValidationError(f"missing required parameters: {missing}")
    if seed is not None:
        params["demand_seed"] = int(seed)
    net, loads = _load_grid(case_dir, params)
    transport = _load_transport(case_dir, params, net)
    demand = _load_demand(case_dir, params, transport)
    ems_profile = _load_ems_profile(case_dir)
    tou_labels = tuple(str(params["tou"]).split(","))
    tou = TouSchedule(tou_labels)
    return CaseBundle(
        grid=net,
        loads=loads,
        transport=transport,
        demand=demand,
        ems_profile=ems_profile,
        tou=tou,
        params=params,
        case_dir=case_dir,
    )
