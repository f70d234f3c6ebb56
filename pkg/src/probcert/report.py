"""Markdown / CSV tables and SVG figures for campaigns and training runs."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so identical inputs give identical SVG bytes
plt.rcParams["svg.hashsalt"] = "probcert"
plt.rcParams["svg.fonttype"] = "none"
_SVG_META = {"Date": None, "Creator": None}

TABLE_COLUMNS = ("controller", "type", "eta", "delayed", "N", "feasible", "level", "mean_thrust_kN", "safe",
                 "faults", "solver_failures")


def _num(x: float, digits: int = 6) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.{digits}g}"


def table_rows(report) -> list[list[str]]:
    return [[r.id, r.type, _num(r.eta), str(report.delayed).lower(), str(report.n), str(r.feasible),
             _num(r.level), _num(r.mean_thrust / 1e3), str(r.safe).lower(), str(r.faults), str(r.solver_failures)]
            for r in report.rows]


def write_csv(header, rows, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def campaign_markdown(report) -> str:
    risk = report.risk
    parts = [
        f"# {report.label}",
        "",
        f"- scenarios N = {report.n} ({report.family} parameters), hash `{report.scenario_hash[:16]}`",
        f"- risk: epsilon = {risk.epsilon:g}, delta = {risk.delta:g}, r = {risk.r}, M = {risk.m}",
        f"- input delay: {'on' if report.delayed else 'off'}",
        f"- degraded: {'yes' if report.degraded else 'no'}",
        "",
        markdown_table(TABLE_COLUMNS, table_rows(report)),
        "",
        "## Certified levels per indicator",
        "",
    ]
    for kind, cert in report.certificates.items():
        rows = [[cid, _num(lvl), str(safe).lower()]
                for cid, lvl, safe in zip(cert.controller_ids, cert.levels, cert.safe_flags)]
        parts += [f"### {kind}", "", markdown_table(("controller", "level", "safe"), rows), ""]
    return "\n".join(parts)


def emit_report(report, out_dir, cfg=None, trajs=()) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(TABLE_COLUMNS, table_rows(report), out / "table.csv")
    rows = []
    for kind, vals in report.values.items():
        for j, v in enumerate(vals):
            for i, x in enumerate(v):
                rows.append([kind, report.rows[j].id, str(i), _num(float(x), 17)])
    write_csv(("indicator", "controller", "scenario", "value"), rows, out / "indicators.csv")
    (out / "report.md").write_text(campaign_markdown(report) + "\n")
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for kind, vals in report.values.items():
        labels = [r.id for r in report.rows]
        indicator_histogram(vals, labels, kind, plots / f"hist_{kind}.svg")
    if trajs and cfg is not None:
        for j, row in enumerate(report.rows):
            mine = [t for t in trajs if t.controller_id == row.id][:5]
            if mine:
                height_plot(mine, cfg.sim.t_c, cfg.kite.h_min, row.eta, plots / f"height_{row.id}.svg")
                phi_theta_plot(mine, plots / f"phi_theta_{row.id}.svg")


def write_robustness(rows, cfg, out_dir) -> None:
    ids = [c.label for c in cfg.campaign.controllers]
    header = ["distribution", "N", "support_within_nominal"]
    for cid in ids:
        header += [f"{cid}_feasible", f"{cid}_level"]
    body = []
    for r in rows:
        line = [r.family, str(r.n), str(r.support_within_nominal).lower()]
        for f, lvl in zip(r.feasible, r.levels):
            line += [str(f), _num(lvl)]
        body.append(line)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(header, body, out / "robustness.csv")
    (out / "robustness.md").write_text("# Robustness to the parameter distribution\n\n"
                                       + markdown_table(header, body) + "\n")


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def height_plot(trajs, t_c: float, h_min: float, eta: float, path) -> None:
    """Height over time with the bound and the tightened bound."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for tr in trajs:
        t = np.arange(len(tr.height)) * t_c
        ax.plot(t, tr.height, lw=0.8)
    ax.axhline(h_min, color="k", ls="-", lw=1, label="h_min")
    if eta > 0:
        ax.axhline(h_min + eta, color="k", ls="--", lw=1, label="h_min + eta")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("height [m]")
    ax.legend(loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def phi_theta_plot(trajs, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for tr in trajs:
        ax.plot(np.degrees(tr.states[:, 1]), np.degrees(tr.states[:, 0]), lw=0.8)
    ax.set_xlabel("phi [deg]")
    ax.set_ylabel("theta [deg]")
    fig.tight_layout()
    _save(fig, path)


def training_curve_plot(curves: dict, path) -> None:
    """``curves`` maps a label to a per-epoch loss list."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, c in curves.items():
        if len(c):
            ax.semilogy(np.arange(1, len(c) + 1), c, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (standardized)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def indicator_histogram(values, labels, kind: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for v, lab in zip(values, labels):
        v = np.asarray(v, dtype=float)
        finite = v[np.isfinite(v)]
        if finite.size:
            ax.hist(finite, bins=30, alpha=0.5, label=f"{lab} ({v.size - finite.size} faulted)")
    ax.axvline(0.0, color="k", lw=1)
    ax.set_xlabel(kind)
    ax.set_ylabel("count")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    _save(fig, path)
