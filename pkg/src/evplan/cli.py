"""Batch command-line interface.

    evplan <subcommand> [--case DIR] [--config FILE] [--seed N]
                        [--out DIR] [--format csv|json]

Subcommands mirror the planning workflow: assess, paths, site, size-mcs,
size-fcs, plan, simulate-ems, compare, and report (everything, plus
figures).  Exit codes: 0 success, 2 validation error, 3 infeasible,
4 not converged.
"""

from __future__ import annotations

import argparse
import sys

from .caseio import load_case
from .errors import InfeasibleError, NotConverged, ValidationError
from .pipeline import run_pipeline
from .report import emit_report
from .plots import render_figures

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NOT_CONVERGED = 4

_SUBCOMMANDS = {
    "assess": "assess",
    "paths": "paths",
    "site": "site",
    "size-mcs": "size-mcs",
    "size-fcs": "size-fcs",
    "plan": "plan",
    "simulate-ems": "simulate",
    "compare": "compare",
    "report": "report",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="case directory (bundled case by default)")
    common.add_argument("--config", help="parameter file overriding the case's params.cfg")
    common.add_argument("--seed", type=int, help="synthetic-demand seed override")
    common.add_argument("--out", help="output directory for report files")
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="report file format"
    )
    parser = argparse.ArgumentParser(
        prog="evplan",
        description="Joint planning of fixed and mobile EV charging stations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "assess": "per-bus hosting capacity and voltage sensitivity",
        "paths": "all-pairs road distances",
        "site": "optimal station locations",
        "size-mcs": "queueing-based mobile-station sizing",
        "size-fcs": "ledger-based fixed-station sizing",
        "plan": "full coordinated siting + sizing plan",
        "simulate-ems": "hourly flexible-capacity dispatch for one day",
        "compare": "benchmark the plan against conventional layouts",
        "report": "run everything and emit tables, JSON and figures",
    }
    for name in _SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _summarise(report: dict) -> str:
    lines = [f"stage: {report['stage']}   case: {report['case']}"]
    if "assessment" in report:
        a = report["assessment"]
        lines.append(
            f"base case: loss {a['base_case']['p_loss_kw']:.1f} kW, "
            f"min voltage {a['base_case']['v_min_pu']:.4f} p.u. at bus "
            f"{a['base_case']['v_min_bus']}; candidates {a['candidates']}"
        )
    if "siting" in report:
        s = report["siting"]
        lines.append(
            f"stations: {s['open_nodes']} travel cost {s['objective_usd_h']:.2f} $/h"
        )
    if "mcs_sizing" in report:
        m = report["mcs_sizing"]
        lines.append(
            f"mobile fleet: {m['n_mcs_total']} units, operation "
            f"{m['operation_cost_usd_h']:.2f} $/h"
        )
    if "fcs_sizing" in report:
        f = report["fcs_sizing"]
        lines.append(
            f"fixed station: {f['total_capacity_kw']:.0f} kW, net cost "
            f"{f['net_cost_usd_yr']:.0f} $/yr"
        )
    if "plan" in report:
        p = report["plan"]
        s = p["summary"]
        lines.append(
            f"plan: {'converged' if p['converged'] else 'NOT converged'} in "
            f"{p['iterations']} iterations; FCS bus {s['fcs_location_bus']} at "
            f"{s['fcs_capacity_kw']:.0f} kW, mobile units {s['mcs_locations_units']}"
        )
    if "ems" in report:
        m = report["ems"]["metrics"]
        lines.append(
            f"dispatch day: peak {m['peak_before_kw']:.0f} -> {m['peak_after_kw']:.0f} kW, "
            f"V2G {m['v2g_energy_kwh']:.0f} kWh, max {m['max_dispatched']} units/hour"
        )
    if "compare" in report:
        for row in report["compare"]["table"]:
            lines.append(
                f"{row['scenario']}: {row['total_fixed_capacity_kw']:.0f} kW fixed, "
                f"investment {row['basic_investment_usd']:.0f} $, "
                f"flexible {row['flexible_energy_kwh']:.0f} kWh"
            )
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    stage = _SUBCOMMANDS[args.command]
    try:
        bundle = load_case(args.case, args.config, args.seed)
        report = run_pipeline(bundle, stage)
        if args.out:
            created = emit_report(report, args.out, args.format)
            if args.format == "csv":
                created += emit_report(report, args.out, "json")
            if stage == "report":
                created += render_figures(report, args.out)
            for path in created:
                print(path)
        print(_summarise(report))
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    if report.get("plan", {}).get("converged") is False:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
