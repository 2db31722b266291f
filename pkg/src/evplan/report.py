"""Report emission: delimited tables, a JSON document, schema validation.

The JSON document is the canonical report; CSV tables are flat projections
of its sections.  Field ordering is fixed and numbers are written with six
significant digits in CSV, so identical runs emit identical bytes.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import IoError, ValidationError


def _plain(value):
    """Recursively convert numpy scalars/arrays into JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    return value


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".6g")
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[dict]):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n")


# section -> (file stem, row accessor, fixed column order)
_TABLES = {
    "assessment": (
        "assessment",
        lambda s: s["nodes"],
        ["bus", "hc_kw", "vsf", "binding"],
    ),
    "siting": (
        "siting_assignments",
        lambda s: s["assignments"],
        ["node", "station", "distance_km", "xi_ev_h", "travel_cost_usd_h"],
    ),
    "mcs_sizing": (
        "mcs_sizing",
        lambda s: s["sites"],
        ["node", "lambda_ev_h", "chargers", "n_mcs", "capacity_kw", "rho", "p0", "lq", "tw_h", "cost_usd_h"],
    ),
    "fcs_sizing": (
        "fcs_sizing",
        lambda s: s["sites"],
        [
            "node", "bus", "capacity_kw", "hc_kw", "s_q_kw",
            "c_cons_usd_yr", "c_om_usd_yr", "c_loss_usd_yr",
            "revenue_usd_yr", "net_cost_usd_yr", "v_min_pu", "i_peak_a",
        ],
    ),
    "ems": (
        "ems_trajectory",
        lambda s: s["trajectory"],
        [
            "hour", "tou", "grid_kw", "pv_kw", "mcs_kw", "vg_kw", "ev_kw",
            "load_kw", "ess_charge_kw", "ess_discharge_kw", "ess_soc_kwh",
            "loss_kw", "dispatched",
        ],
    ),
    "compare": (
        "compare",
        lambda s: s["table"],
        [
            "scenario", "stations", "total_fixed_capacity_kw",
            "basic_investment_usd", "flexible_energy_kwh",
            "capacity_expansion_potential_kw", "total_user_driving_km",
        ],
    ),
}


def emit_report(report: dict, out_dir: Path | str, fmt: str = "csv") -> list[Path]:
    """Write the report to out_dir; returns the created paths.

    fmt="json" writes the canonical report.json; fmt="csv" writes one
    delimited table per populated section (plus residuals/summary tables
    for the plan stage).
    """
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown report format {fmt!r}")
    report = _plain(report)
    problems = validate_report(report)
    if problems:
        raise ValidationError(f"report fails its schema: {problems}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        created: list[Path] = []
        if fmt == "json":
            path = out / "report.json"
            path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            created.append(path)
            return created
        for section, (stem, rows_of, columns) in _TABLES.items():
            if section not in report:
                continue
            path = out / f"{stem}.csv"
            _write_csv(path, columns, rows_of(report[section]))
            created.append(path)
        if "paths" in report:
            nodes = report["paths"]["nodes"]
            path = out / "distances.csv"
            rows = [
                {"from": u, **{str(v): d for v, d in zip(nodes, row)}}
                for u, row in zip(nodes, report["paths"]["distance_km"])
            ]
            _write_csv(path, ["from"] + [str(n) for n in nodes], rows)
            created.append(path)
        if "plan" in report:
            plan = report["plan"]
            path = out / "admm_residuals.csv"
            _write_csv(path, ["k", "r_prim", "r_dual"], plan["residuals"])
            created.append(path)
            path = out / "plan_summary.csv"
            summary = dict(plan["summary"])
            summary["mcs_locations_units"] = ";".join(
                f"{k}:{v}" for k, v in sorted(summary["mcs_locations_units"].items(),
                                              key=lambda kv: int(kv[0]))
            )
            summary["converged"] = plan["converged"]
            summary["iterations"] = plan["iterations"]
            _write_csv(path, list(summary), [summary])
            created.append(path)
        if "compare" in report:
            path = out / "voltage_profiles.csv"
            rows = []
            for scenario, profile in sorted(report["compare"]["voltage_profiles"].items()):
                for entry in profile:
                    rows.append({"scenario": scenario, **entry})
            _write_csv(path, ["scenario", "bus", "v_pu"], rows)
            created.append(path)
        return created
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc


def load_report(path: Path | str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read report {path}: {exc}") from exc


def _schema() -> dict:
    with resources.files("evplan").joinpath("data/report.schema.json").open() as f:
        return json.load(f)


def validate_report(report: dict) -> list[str]:
    """Structural check against the bundled schema; returns problem strings."""
    return _check(report, _schema(), "$")


def _check(value, schema: dict, where: str) -> list[str]:
    problems = []
    expected = schema.get("type")
    if expected:
        ok = {
            "object": lambda v: isinstance(v, dict),
            "array": lambda v: isinstance(v, list),
            "string": lambda v: isinstance(v, str),
            "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "boolean": lambda v: isinstance(v, bool),
        }[expected](value)
        if not ok:
            return [f"{where}: expected {expected}, got {type(value).__name__}"]
    if "enum" in schema and value not in schema["enum"]:
        problems.append(f"{where}: {value!r} not in {schema['enum']}")
    if expected == "object":
        for key in schema.get("required", []):
            if key not in value:
                problems.append(f"{where}: missing required field {key!r}")
        for key, sub in schema.get("properties", {}).items():
            if key in value:
                problems.extend(_check(value[key], sub, f"{where}.{key}"))
    if expected == "array" and "items" in schema:
        for i, item in enumerate(value):
            problems.extend(_check(item, schema["items"], f"{where}[{i}]"))
    return problems
