"""Metrics registry with text exposition (format 0.0.4) and the engine event recorder."""

from __future__ import annotations

import bisect
import math
import re
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .engine import Engine, Event

METRIC_NAME = re.compile(r"^[a-zA-Z_:][a-zA-Z0-9_:]*$")
LABEL_NAME = re.compile(r"^[a-zA-Z_][a-zA-Z0-9_]*$")
CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricPoint:
    name: str
    labels: tuple[tuple[str, str], ...]
    value: float
    timestamp_ms: int | None = None


def format_value(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    return repr(float(v))


def _escape_label(v: str) -> str:
    return v.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def _escape_help(v: str) -> str:
    return v.replace("\\", "\\\\").replace("\n", "\\n")


class _Family:
    kind = "untyped"

    def __init__(self, name: str, help: str, labelnames: Sequence[str]):
        if not METRIC_NAME.match(name):
            raise MetricsError(f"invalid metric name {name!r}")
        for ln in labelnames:
            if not LABEL_NAME.match(ln) or ln.startswith("__"):
                raise MetricsError(f"invalid label name {ln!r}")
        self.name = name
        self.help = help
        self.labelnames = tuple(labelnames)
        self._values: dict[tuple[str, ...], float] = {}

    def _key(self, labels: dict[str, str]) -> tuple[str, ...]:
        if set(labels) != set(self.labelnames):
            raise MetricsError(f"{self.name} expects labels {self.labelnames}, got {sorted(labels)}")
        return tuple(str(labels[n]) for n in self.labelnames)

    def points(self) -> list[MetricPoint]:
        return [
            MetricPoint(self.name, tuple(zip(self.labelnames, k)), v) for k, v in sorted(self._values.items())
        ]


class Counter(_Family):
    kind = "counter"

    def inc(self, amount: float = 1.0, **labels: str) -> None:
        if amount < 0:
            raise MetricsError("counters only go up")
        k = self._key(labels)
        self._values[k] = self._values.get(k, 0.0) + amount

    def value(self, **labels: str) -> float:
        return self._values.get(self._key(labels), 0.0)


class Gauge(_Family):
    kind = "gauge"

    def set(self, value: float, **labels: str) -> None:
        self._values[self._key(labels)] = float(value)

    def inc(self, amount: float = 1.0, **labels: str) -> None:
        k = self._key(labels)
        self._values[k] = self._values.get(k, 0.0) + amount

    def dec(self, amount: float = 1.0, **labels: str) -> None:
        self.inc(-amount, **labels)

    def value(self, **labels: str) -> float:
        return self._values.get(self._key(labels), 0.0)


class Histogram(_Family):
    kind = "histogram"

    def __init__(self, name: str, help: str, buckets: Sequence[float], labelnames: Sequence[str] = ()):
        super().__init__(name, help, labelnames)
        if "le" in self.labelnames:
            raise MetricsError("'le' is reserved for histogram buckets")
        b = sorted(float(x) for x in buckets)
        if not b or b[-1] != math.inf:
            b.append(math.inf)
        self.buckets = tuple(b)
        self._obs: dict[tuple[str, ...], tuple[list[int], float, int]] = {}

    def observe(self, value: float, **labels: str) -> None:
        k = self._key(labels)
        counts, total, n = self._obs.get(k, ([0] * len(self.buckets), 0.0, 0))
        i = bisect.bisect_left(self.buckets, value)
        counts = counts[:i] + [c + 1 for c in counts[i:]]
        self._obs[k] = (counts, total + value, n + 1)

    def bucket_counts(self, **labels: str) -> dict[float, int]:
        counts, _, _ = self._obs.get(self._key(labels), ([0] * len(self.buckets), 0.0, 0))
        return dict(zip(self.buckets, counts))

    def points(self) -> list[MetricPoint]:
        out = []
        for k, (counts, total, n) in sorted(self._obs.items()):
            base = tuple(zip(self.labelnames, k))
            for le, c in zip(self.buckets, counts):
                out.append(MetricPoint(f"{self.name}_bucket", base + (("le", format_value(le)),), float(c)))
            out.append(MetricPoint(f"{self.name}_sum", base, total))
            out.append(MetricPoint(f"{self.name}_count", base, float(n)))
        return out


class MetricsRegistry:
    def __init__(self) -> None:
        self._families: dict[str, _Family] = {}
        self._lock = threading.Lock()
        self.snapshot_seq = 0
        self.timestamp_ms: int | None = None

    def _add(self, fam: _Family) -> _Family:
        if fam.name in self._families:
            raise MetricsError(f"metric {fam.name} already registered")
        self._families[fam.name] = fam
        return fam

    def counter(self, name: str, help: str, labelnames: Sequence[str] = ()) -> Counter:
        return self._add(Counter(name, help, labelnames))  # type: ignore[return-value]

    def gauge(self, name: str, help: str, labelnames: Sequence[str] = ()) -> Gauge:
        return self._add(Gauge(name, help, labelnames))  # type: ignore[return-value]

    def histogram(self, name: str, help: str, buckets: Sequence[float], labelnames: Sequence[str] = ()) -> Histogram:
        return self._add(Histogram(name, help, buckets, labelnames))  # type: ignore[return-value]

    def get(self, name: str) -> _Family:
        return self._families[name]

    def collect(self) -> list[MetricPoint]:
        return [p for f in self._families.values() for p in f.points()]

    def export_text(self, timestamps: bool = False) -> bytes:
        with self._lock:
            self.snapshot_seq += 1
            lines = []
            for fam in self._families.values():
                lines.append(f"# HELP {fam.name} {_escape_help(fam.help)}")
                lines.append(f"# TYPE {fam.name} {fam.kind}")
                for p in fam.points():
                    lab = ""
                    if p.labels:
                        lab = "{" + ",".join(f'{k}="{_escape_label(v)}"' for k, v in p.labels) + "}"
                    ts = f" {self.timestamp_ms}" if timestamps and self.timestamp_ms is not None else ""
                    lines.append(f"{p.name}{lab} {format_value(p.value)}{ts}")
            return ("\n".join(lines) + "\n").encode() if lines else b""


QPU_LATENCY_BUCKETS = (0.5, 1.0, 2.0, 2.5, 5.0, 10.0, 30.0, 60.0, 120.0)


class EngineMetrics:
    """Translates engine events into the ``hqflow_*`` series."""

    def __init__(self, engine: "Engine", registry: MetricsRegistry | None = None):
        self.engine = engine
        self.registry = registry or MetricsRegistry()
        r = self.registry
        self.tasks = r.gauge("hqflow_tasks", "Tasks by lifecycle state across all runs.", ["state"])
        self.transitions = r.counter(
            "hqflow_task_transitions_total", "Task lifecycle transitions.", ["from_state", "to_state"]
        )
        self.allocatable = r.gauge(
            "hqflow_node_allocatable", "Unbound capacity per node and resource.", ["node", "resource"]
        )
        self.queue_pending = r.gauge("hqflow_queue_pending", "Workloads waiting for admission.", ["queue"])
        self.queue_admitted = r.gauge("hqflow_queue_admitted", "Workloads admitted and running.", ["queue"])
        self.qpu_latency = r.histogram(
            "hqflow_qpu_latency_seconds", "Virtual time from start to finish of tasks on QPU nodes.", QPU_LATENCY_BUCKETS
        )
        self.completed = r.counter("hqflow_workflow_completed_total", "Workflow runs that reached a terminal state.")
        self.throughput = r.gauge(
            "hqflow_workflow_throughput", "Completed workflow runs per virtual second."
        )
        self.bytes_read = r.counter("hqflow_artifact_read_bytes_total", "Bytes read from shared volumes.")
        self.bytes_written = r.counter("hqflow_artifact_written_bytes_total", "Bytes committed to shared volumes.")
        self.clock = r.gauge("hqflow_virtual_time_seconds", "Current virtual time.")
        from .engine import STATES

        for s in STATES:
            self.tasks.set(0, state=s.value)
        for q in engine.scheduler.local_queues:
            self.queue_pending.set(0, queue=q)
            self.queue_admitted.set(0, queue=q)
        for name in engine.cluster.nodes:
            self._refresh_node(name)
        self._io_seen = (0, 0)
        engine.listeners.append(self.record)

    def _refresh_node(self, name: str) -> None:
        for res, amount in sorted(self.engine.cluster.nodes[name].allocatable.items()):
            self.allocatable.set(amount, node=name, resource=res)

    def _refresh_queues(self) -> None:
        for st in self.engine.scheduler.status():
            self.queue_pending.set(st.pending, queue=st.name)
            self.queue_admitted.set(st.admitted, queue=st.name)

    def _refresh_io(self) -> None:
        read = sum(r.store.io.bytes_read for r in self.engine.runs.values())
        written = sum(r.store.io.bytes_written for r in self.engine.runs.values())
        r0, w0 = self._io_seen
        if read > r0:
            self.bytes_read.inc(read - r0)
        if written > w0:
            self.bytes_written.inc(written - w0)
        self._io_seen = (read, written)

    def record(self, ev: "Event") -> None:
        self.registry.timestamp_ms = ev.time // 1_000_000
        self.clock.set(ev.time / 1e9)
        if ev.kind == "run_submitted":
            n = len(self.engine.runs[ev.run_id].tasks)
            self.tasks.inc(n, state="Pending")
        elif ev.kind == "task_transition":
            self.tasks.dec(1, state=ev.from_state)
            self.tasks.inc(1, state=ev.to_state)
            self.transitions.inc(1, from_state=ev.from_state, to_state=ev.to_state)
            if ev.node is not None:
                self._refresh_node(ev.node)
                node = self.engine.cluster.nodes[ev.node]
                if ev.to_state in ("Succeeded", "Failed") and node.role == "qpu":
                    task = self.engine.runs[ev.run_id].tasks[ev.task_id]
                    self.qpu_latency.observe((task.finished - task.started) / 1e9)
            self._refresh_queues()
            self._refresh_io()
        elif ev.kind in ("task_enqueued", "task_withdrawn"):
            self._refresh_queues()
        elif ev.kind == "run_completed":
            self.completed.inc()
            if ev.time > 0:
                self.throughput.set(self.completed.value() / (ev.time / 1e9))
            self._refresh_io()

    def census_total(self) -> float:
        from .engine import STATES

        return sum(self.tasks.value(state=s.value) for s in STATES)

