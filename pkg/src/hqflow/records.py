"""On-disk run records: spec snapshot, append-only event log, report, artifact index and metrics.

Layout of ``<runs-dir>/<runId>/``::

    spec.yaml          rendered workflow the run was created from
    events.jsonl       one JSON object per engine event, in sequence order
    report.json        RunReport
    artifacts.json     claim/path/size/sha256 of every committed artifact
    metrics.prom       final metrics export
    result.json        reconstruction summary, when the workflow produced one

Secret material is never written: spec.yaml only names secrets and events
carry no payload data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .engine import Event, RunReport, WorkflowRun
from .workflow import render_workflow

EVENTS = "events.jsonl"
REPORT = "report.json"


class RecordError(Exception):
    pass


def _dump(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, indent=1).encode() + b"\n"


def write_run(
    runs_dir: str | Path,
    run: WorkflowRun,
    report: RunReport,
    metrics_text: bytes,
    result: dict | None = None,
) -> Path:
    d = Path(runs_dir) / run.run_id
    d.mkdir(parents=True, exist_ok=True)
    (d / "spec.yaml").write_bytes(render_workflow(run.spec))
    with open(d / EVENTS, "wb") as fh:
        for ev in run.events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True).encode() + b"\n")
    (d / REPORT).write_bytes(report.to_json())
    (d / "artifacts.json").write_bytes(_dump(report.artifacts))
    (d / "metrics.prom").write_bytes(metrics_text)
    if result is not None:
        (d / "result.json").write_bytes(_dump(result))
    elif (d / "result.json").exists():
        (d / "result.json").unlink()
    return d


def run_dir(runs_dir: str | Path, run_id: str) -> Path:
    d = Path(runs_dir) / run_id
    if not (d / REPORT).is_file():
        raise RecordError(f"no run record for {run_id!r} under {runs_dir}")
    return d


def list_runs(runs_dir: str | Path) -> list[str]:
    root = Path(runs_dir)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / REPORT).is_file())


def load_report(runs_dir: str | Path, run_id: str) -> RunReport:
    return RunReport.from_dict(json.loads((run_dir(runs_dir, run_id) / REPORT).read_bytes()))


def load_events(runs_dir: str | Path, run_id: str) -> list[Event]:
    with open(run_dir(runs_dir, run_id) / EVENTS, "rb") as fh:
        return [Event.from_dict(json.loads(line)) for line in fh if line.strip()]


def load_result(runs_dir: str | Path, run_id: str) -> dict | None:
    p = run_dir(runs_dir, run_id) / "result.json"
    return json.loads(p.read_bytes()) if p.is_file() else None


@dataclass(frozen=True)
class QueueCount:
    queue: str
    pending: int
    admitted: int


def replay_queue_counts(events: Iterable[Event], at_ns: int | None = None) -> list[QueueCount]:
    """Per-queue pending/admitted counts after every event with time <= ``at_ns``."""
    queue_of: dict[str, str] = {}
    pending: dict[str, int] = {}
    admitted: dict[str, int] = {}
    for ev in events:
        if at_ns is not None and ev.time > at_ns:
            break
        if ev.kind == "task_enqueued" and ev.queue is not None:
            queue_of[ev.task_id] = ev.queue
            pending[ev.queue] = pending.get(ev.queue, 0) + 1
            admitted.setdefault(ev.queue, 0)
        elif ev.kind == "task_withdrawn" and ev.task_id in queue_of:
            pending[queue_of.pop(ev.task_id)] -= 1
        elif ev.kind == "task_transition" and ev.task_id in queue_of:
            q = queue_of[ev.task_id]
            if ev.to_state == "Active":
                pending[q] -= 1
                admitted[q] += 1
            else:
                admitted[q] -= 1
                del queue_of[ev.task_id]
    return [QueueCount(q, pending[q], admitted[q]) for q in sorted(pending)]


def replay_census(events: Iterable[Event], num_tasks: int) -> list[tuple[int, dict[str, int]]]:
    """Task-state census after each transition, rebuilt from the event log alone."""
    counts = {"Pending": num_tasks, "Active": 0, "Succeeded": 0, "Failed": 0}
    out = [(0, dict(counts))]
    for ev in events:
        if ev.kind != "task_transition":
            continue
        counts[ev.from_state] -= 1
        counts[ev.to_state] += 1
        out.append((ev.time, dict(counts)))
    return out
