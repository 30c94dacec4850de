"""Report rendering: JSON, markdown tables, delimited CSVs, and figures.

Output is byte-deterministic for identical report dicts: sorted keys, fixed
float formats, and PNGs stripped of the encoder software tag.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIG_DPI = 120
PNG_METADATA = {"Software": None}


def _ci(pair) -> str:
    return f"[{pair[0]:.2f}, {pair[1]:.2f}]"


def render_markdown(report: dict) -> str:
    lines = ["# Offline fallback evaluation", ""]
    suite = report["suite"]
    lines.append(
        f"{suite['scene_count']} scenes; {suite['n_seeds']} seeds per (model, scene); "
        f"prompt variant `{suite['variant']}`."
    )
    lines.append("")
    if report["alignment"]:
        lines.append("## Action alignment (majority-of-n, 95% Wilson CIs)")
        lines.append("")
        lines.append("| Method | Accept@1 | Best@1 | Latency (s) |")
        lines.append("|---|---|---|---|")
        for row in report["alignment"]:
            lines.append(
                f"| {row['method']} | {row['accept_at_1']:.2f} {_ci(row['accept_ci'])} "
                f"| {row['best_at_1']:.2f} {_ci(row['best_ci'])} "
                f"| {row['mean_latency_s']:.2f} |"
            )
        lines.append("")
    if report["risk_relief"]:
        horizons = report["suite"]["horizons"]
        lines.append("## Hazard risk relief (mean change in separation, m)")
        lines.append("")
        header = " | ".join(f"dd_{h:g}s" for h in horizons)
        lines.append(f"| Fallback | {header} |")
        lines.append("|" + "---|" * (len(horizons) + 1))
        for row in report["risk_relief"]:
            cells = []
            for h in horizons:
                stats = row["horizons"][f"{h:g}"]
                cells.append(f"{stats['mean']:.1f} [{stats['min']:.1f}, {stats['max']:.1f}]")
            lines.append(f"| {row['method']} | " + " | ".join(cells) + " |")
        lines.append("")
    if report["awareness"]:
        lines.append("## Scene understanding (judge-scored awareness)")
        lines.append("")
        lines.append("| Model | Latency (s) | Awareness | H / I / A |")
        lines.append("|---|---|---|---|")
        for row in report["awareness"]:
            lines.append(
                f"| {row['model']} | {row['mean_latency_s']:.2f} "
                f"| {row['awareness_mean']:.3f} "
                f"| {row['hazard_mean']:.2f} / {row['implication_mean']:.2f} / "
                f"{row['action_mean']:.2f} |"
            )
        lines.append("")
    if report["judging_errors"]:
        lines.append("## Judging errors")
        lines.append("")
        for e in report["judging_errors"]:
            lines.append(f"- {e['model']} / {e['scene_id']} / seed {e['seed']}: {e['error']}")
        lines.append("")
    gaps = report.get("gaps", {})
    if gaps.get("failed_calls") or gaps.get("incomplete_model_scenes"):
        lines.append("## Gaps (partial run)")
        lines.append("")
        for g in gaps.get("failed_calls", []):
            lines.append(f"- failed call: {g['model']} / {g['scene_id']} / seed {g['seed']} "
                         f"({g['reason']})")
        for g in gaps.get("incomplete_model_scenes", []):
            lines.append(f"- incomplete: {g['model']} / {g['scene_id']} "
                         f"({g['recorded_calls']}/{g['expected_calls']} calls)")
        lines.append("")
    stats = report["decision_log"]
    lines.append(f"Decision log: {stats['records']} records, {stats['defaulted']} defaulted.")
    lines.append("")
    return "\n".join(lines)


def write_tables(report: dict, tables_dir: str) -> None:
    align_path = os.path.join(tables_dir, "alignment.csv")
    with open(align_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "n_scenes", "accept_at_1", "accept_ci_lo", "accept_ci_hi",
                         "best_at_1", "best_ci_lo", "best_ci_hi", "mean_latency_s"])
        for row in report["alignment"]:
            writer.writerow([
                row["method"], row["n_scenes"],
                f"{row['accept_at_1']:.6f}", f"{row['accept_ci'][0]:.6f}",
                f"{row['accept_ci'][1]:.6f}",
                f"{row['best_at_1']:.6f}", f"{row['best_ci'][0]:.6f}",
                f"{row['best_ci'][1]:.6f}", f"{row['mean_latency_s']:.6f}",
            ])
    risk_path = os.path.join(tables_dir, "risk_relief.csv")
    with open(risk_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        horizons = report["suite"]["horizons"]
        header = ["method", "n_scenes"]
        for h in horizons:
            header += [f"mean_{h:g}s", f"min_{h:g}s", f"max_{h:g}s"]
        writer.writerow(header)
        for row in report["risk_relief"]:
            cells = [row["method"], row["n_scenes"]]
            for h in horizons:
                stats = row["horizons"][f"{h:g}"]
                cells += [f"{stats['mean']:.6f}", f"{stats['min']:.6f}", f"{stats['max']:.6f}"]
            writer.writerow(cells)
    if report["awareness"]:
        aware_path = os.path.join(tables_dir, "awareness.csv")
        with open(aware_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "n_calls", "awareness_mean", "hazard_mean",
                             "implication_mean", "action_mean", "mean_latency_s"])
            for row in report["awareness"]:
                writer.writerow([
                    row["model"], row["n_calls"], f"{row['awareness_mean']:.6f}",
                    f"{row['hazard_mean']:.6f}", f"{row['implication_mean']:.6f}",
                    f"{row['action_mean']:.6f}", f"{row['mean_latency_s']:.6f}",
                ])


def render_figures(report: dict, fig_dir: str) -> list:
    """Write the report figures; returns the file paths."""
    paths = []
    if report["alignment"]:
        rows = report["alignment"]
        fig, ax = plt.subplots(figsize=(7, max(2.5, 0.4 * len(rows))))
        names = [r["method"] for r in rows]
        values = [r["accept_at_1"] for r in rows]
        err_lo = [r["accept_at_1"] - r["accept_ci"][0] for r in rows]
        err_hi = [r["accept_ci"][1] - r["accept_at_1"] for r in rows]
        ax.barh(names, values, xerr=[err_lo, err_hi], color="#4878a8", capsize=3)
        ax.set_xlabel("Accept@1 (95% Wilson CI)")
        ax.set_xlim(0, 1)
        fig.tight_layout()
        path = os.path.join(fig_dir, "alignment_leaderboard.png")
        fig.savefig(path, dpi=FIG_DPI, metadata=PNG_METADATA)
        plt.close(fig)
        paths.append(path)
    if report["risk_relief"]:
        horizons = report["suite"]["horizons"]
        fig, ax = plt.subplots(figsize=(7, 4))
        for row in report["risk_relief"]:
            means = [row["horizons"][f"{h:g}"]["mean"] for h in horizons]
            lo = [row["horizons"][f"{h:g}"]["min"] for h in horizons]
            hi = [row["horizons"][f"{h:g}"]["max"] for h in horizons]
            ax.plot(horizons, means, marker="o", label=row["method"])
            ax.fill_between(horizons, lo, hi, alpha=0.12)
        ax.axhline(0.0, color="gray", lw=0.8)
        ax.set_xlabel("Horizon (s)")
        ax.set_ylabel("Change in hazard separation (m)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(fig_dir, "risk_relief.png")
        fig.savefig(path, dpi=FIG_DPI, metadata=PNG_METADATA)
        plt.close(fig)
        paths.append(path)
    if report["awareness"]:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [r["mean_latency_s"] for r in report["awareness"]]
        ys = [r["awareness_mean"] for r in report["awareness"]]
        ax.scatter(xs, ys, color="#a84848")
        for r in report["awareness"]:
            ax.annotate(r["model"], (r["mean_latency_s"], r["awareness_mean"]),
                        fontsize=7, xytext=(3, 3), textcoords="offset points")
        ax.set_xlabel("Mean latency (s)")
        ax.set_ylabel("Mean awareness")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        path = os.path.join(fig_dir, "awareness_latency.png")
        fig.savefig(path, dpi=FIG_DPI, metadata=PNG_METADATA)
        plt.close(fig)
        paths.append(path)
    return paths


def write_report(report: dict, out_dir: str) -> None:
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8") as f:
        f.write(render_markdown(report))
    write_tables(report, os.path.join(out_dir, "tables"))
    render_figures(report, os.path.join(out_dir, "figures"))
