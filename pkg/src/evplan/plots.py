"""Figure rendering for the report path.

Each function takes an already-built report section and writes one PNG;
render_figures walks whatever sections a report carries.  Uses the Agg
backend so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_assessment(section: dict, path: Path) -> Path:
    """Hosting capacity bars with the voltage-sensitivity line overlaid."""
    nodes = section["nodes"]
    buses = [r["bus"] for r in nodes]
    hc = [r["hc_kw"] for r in nodes]
    vsf = [r["vsf"] for r in nodes]
    fig, ax1 = plt.subplots(figsize=(8, 4))
    ax1.bar(buses, hc, color="#4878d0", label="hosting capacity")
    ax1.set_xlabel("bus")
    ax1.set_ylabel("hosting capacity (kW)")
    ax2 = ax1.twinx()
    ax2.plot(buses, vsf, "o-", color="#d65f5f", ms=3, lw=1, label="|dV/dP|")
    ax2.set_ylabel("voltage sensitivity (p.u./kW)")
    ax1.set_title("Per-bus EV hosting capacity and voltage sensitivity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_residuals(plan_section: dict, path: Path) -> Path:
    """Primal/dual residual decay of the coordination loop."""
    ks = [r["k"] for r in plan_section["residuals"]]
    rp = [max(r["r_prim"], 1e-16) for r in plan_section["residuals"]]
    rd = [max(r["r_dual"], 1e-16) for r in plan_section["residuals"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(ks, rp, "o-", label="primal ||z - w||")
    ax.semilogy(ks, rd, "s-", label="dual rho ||w - w_prev||")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title("Consensus residuals")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_ems(section: dict, path: Path) -> Path:
    """Grid draw before/after dispatch plus storage and V2G activity."""
    traj = section["trajectory"]
    hours = [r["hour"] for r in traj]
    before = [max(0.0, r["load_kw"] + r["ev_kw"] - r["pv_kw"] - r["vg_kw"]) for r in traj]
    after = [max(0.0, r["grid_kw"]) for r in traj]
    mcs = [r["mcs_kw"] for r in traj]
    soc = [r["ess_soc_kwh"] for r in traj]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(hours, before, "k--", label="import before dispatch")
    ax1.plot(hours, after, "b-", label="import after dispatch")
    ax1.bar(hours, mcs, color="#ee854a", alpha=0.7, label="mobile V2G")
    ax1.set_ylabel("kW")
    ax1.legend(loc="upper left", fontsize=8)
    ax1.set_title("Load regulation through hourly dispatch")
    ax2.plot(hours, soc, "g-")
    ax2.set_ylabel("storage (kWh)")
    ax2.set_xlabel("hour")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_voltage(compare_section: dict, path: Path) -> Path:
    """Bus voltage profiles under each placement scenario."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for scenario, profile in sorted(compare_section["voltage_profiles"].items()):
        buses = [e["bus"] for e in profile]
        v = [e["v_pu"] for e in profile]
        ax.plot(buses, v, marker=".", ms=4, lw=1, label=scenario)
    ax.axhline(0.9, color="gray", ls=":", lw=1)
    ax.set_xlabel("bus")
    ax.set_ylabel("voltage (p.u.)")
    ax.set_title("Voltage profiles after station placement")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_figures(report: dict, out_dir: Path | str) -> list[Path]:
    """Render every figure the report's sections support."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []
    if "assessment" in report:
        created.append(plot_assessment(report["assessment"], out / "assessment.png"))
    if "plan" in report:
        created.append(plot_residuals(report["plan"], out / "admm_residuals.png"))
    if "ems" in report:
        created.append(plot_ems(report["ems"], out / "ems_dispatch.png"))
    if "compare" in report:
        created.append(plot_voltage(report["compare"], out / "voltage_profiles.png"))
    return created
