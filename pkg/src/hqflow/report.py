"""Tabular and graphical summaries of a finished run: CSV files plus PNG figures."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .engine import STATES, RunReport  # noqa: E402

TASK_COLUMNS = ("id", "template", "state", "node", "queue", "flavor", "enqueued_s", "started_s", "finished_s", "wait_s", "run_s")
STATE_COLORS = {"Pending": "#9e9e9e", "Active": "#1f77b4", "Succeeded": "#2ca02c", "Failed": "#d62728"}


def _s(ns: int | None) -> str:
    return "" if ns is None else f"{ns / 1e9:.9f}"


def task_rows(report: RunReport) -> list[dict[str, str]]:
    rows = []
    for t in report.tasks:
        wait = t["started"] - t["enqueued"] if t["started"] is not None and t["enqueued"] is not None else None
        run = t["finished"] - t["started"] if t["finished"] is not None and t["started"] is not None else None
        rows.append(
            {
                "id": t["id"],
                "template": t["template"],
                "state": t["state"],
                "node": t["node"] or "",
                "queue": t["queue"] or "",
                "flavor": t["flavor"] or "",
                "enqueued_s": _s(t["enqueued"]),
                "started_s": _s(t["started"]),
                "finished_s": _s(t["finished"]),
                "wait_s": _s(wait),
                "run_s": _s(run),
            }
        )
    return rows


def tasks_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TASK_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(task_rows(report))
    return buf.getvalue()


def census_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", *(s.value for s in STATES)])
    for row in report.census:
        w.writerow([_s(row[0]), *row[1:]])
    return buf.getvalue()


def plot_census(report: RunReport, path: Path) -> None:
    times = [r[0] / 1e9 for r in report.census]
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, s in enumerate(STATES, start=1):
        ax.step(times, [r[i] for r in report.census], where="post", label=s.value, color=STATE_COLORS[s.value])
    ax.set_xlabel("virtual time (s)")
    ax.set_ylabel("tasks")
    ax.set_title(f"{report.run_id}: task states")
    ax.legend(loc="center right")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_gantt(report: RunReport, path: Path) -> None:
    """One lane per node; every started task is a bar from start to finish."""
    nodes = sorted({t["node"] for t in report.tasks if t["node"]})
    lane = {n: i for i, n in enumerate(nodes)}
    templates = sorted({t["template"] for t in report.tasks})
    cmap = plt.get_cmap("tab10")
    color = {tp: cmap(i % 10) for i, tp in enumerate(templates)}
    fig, ax = plt.subplots(figsize=(10, 1.2 + 0.6 * max(len(nodes), 1)))
    for tp in templates:
        bars = [
            (t["started"] / 1e9, (t["finished"] - t["started"]) / 1e9, lane[t["node"]])
            for t in report.tasks
            if t["template"] == tp and t["node"] and t["started"] is not None and t["finished"] is not None
        ]
        for x, w, y in bars:
            ax.broken_barh([(x, w)], (y - 0.4, 0.8), facecolors=color[tp], edgecolors="none", alpha=0.7)
        if bars:
            ax.plot([], [], color=color[tp], linewidth=6, label=tp)
    ax.set_yticks(range(len(nodes)), nodes)
    ax.set_xlabel("virtual time (s)")
    ax.set_title(f"{report.run_id}: task placement")
    if templates:
        ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0), fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "tasks.csv", out / "census.csv", out / "census.png", out / "gantt.png"]
    paths[0].write_text(tasks_csv(report))
    paths[1].write_text(census_csv(report))
    plot_census(report, paths[2])
    plot_gantt(report, paths[3])
    return paths
