from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from prometheus_client.parser import text_string_to_metric_families

from hqflow.metrics import MetricsError, MetricsRegistry, format_value


def parse(text: bytes) -> dict[str, dict[tuple, float]]:
    out: dict[str, dict[tuple, float]] = {}
    for fam in text_string_to_metric_families(text.decode()):
        for s in fam.samples:
            out.setdefault(s.name, {})[tuple(sorted(s.labels.items()))] = s.value
    return out


def test_empty_registry_exports_nothing():
    assert MetricsRegistry().export_text() == b""


def test_escaping_round_trips():
    r = MetricsRegistry()
    g = r.gauge("x_g", 'help with \\ and\nnewline', ["lab"])
    g.set(1.5, lab='quote " back \\ nl \n end')
    parsed = parse(r.export_text())
    assert parsed["x_g"] == {(("lab", 'quote " back \\ nl \n end'),): 1.5}


def test_name_and_label_validation():
    r = MetricsRegistry()
    with pytest.raises(MetricsError):
        r.counter("bad-name", "h")
    with pytest.raises(MetricsError):
        r.gauge("ok", "h", ["bad-label"])
    r.counter("dup", "h")
    with pytest.raises(MetricsError):
        r.counter("dup", "h")
    with pytest.raises(MetricsError):
        r.counter("c_total", "h").inc(-1)


def test_histogram_is_cumulative():
    r = MetricsRegistry()
    h = r.histogram("lat_seconds", "h", (1.0, 2.0, 5.0))
    for v in (0.5, 2.0, 2.0, 7.0):
        h.observe(v)
    p = parse(r.export_text())
    b = {dict(k)["le"]: v for k, v in p["lat_seconds_bucket"].items()}
    assert b == {"1.0": 1, "2.0": 3, "5.0": 3, "+Inf": 4}
    assert p["lat_seconds_count"][()] == 4 and p["lat_seconds_sum"][()] == 11.5


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_format_value_parses_back(v):
    back = float(format_value(v))
    assert (math.isnan(v) and math.isnan(back)) or back == v


def test_shipped_run_metrics(poc_run):
    p = parse(poc_run.metrics_text)
    tasks = {dict(k)["state"]: v for k, v in p["hqflow_tasks"].items()}
    assert tasks == {"Pending": 0, "Active": 0, "Succeeded": 650, "Failed": 0}
    trans = {(dict(k)["from_state"], dict(k)["to_state"]): v for k, v in p["hqflow_task_transitions_total"].items()}
    assert trans == {("Pending", "Active"): 650, ("Active", "Succeeded"): 650}
    assert p["hqflow_qpu_latency_seconds_count"][()] == 216
    # every QPU task carries at least the fixed 2 s queue delay
    lat = {dict(k)["le"]: v for k, v in p["hqflow_qpu_latency_seconds_bucket"].items()}
    assert lat["1.0"] == 0 and lat["+Inf"] == 216
    assert p["hqflow_qpu_latency_seconds_sum"][()] >= 2.0 * 216
    assert p["hqflow_workflow_completed_total"][()] == 1
    makespan = poc_run.report.makespan_ns / 1e9
    assert p["hqflow_workflow_throughput"][()] == pytest.approx(1 / makespan)
    alloc = {(dict(k)["node"], dict(k)["resource"]): v for k, v in p["hqflow_node_allocatable"].items()}
    assert alloc[("qpu-1", "iqm.com/qpu")] == 1
    assert alloc[("gpu-1", "nvidia.com/gpu")] == 4
    assert alloc[("cpu-a", "cpu")] == 4000
    assert all(v == 0 for v in p["hqflow_queue_pending"].values())
    store = poc_run.engine.runs[poc_run.run_id].store
    # no path is written twice, so committed bytes equal the final volume contents
    assert p["hqflow_artifact_written_bytes_total"][()] == store.io.bytes_written
    assert store.io.bytes_written == sum(a["size"] for a in poc_run.report.artifacts)
    assert p["hqflow_artifact_read_bytes_total"][()] == store.io.bytes_read > 0


def test_qpu_latency_single_observation():
    from hqflow.engine import PayloadResult
    from hqflow.system import build_system
    from hqflow.workflow import parse_workflow

    sysm = build_system()
    sysm.engine.register("noop", lambda ctx: PayloadResult(0.0))
    doc = """
apiVersion: argoproj.io/v1alpha1
kind: Workflow
metadata: {name: q, namespace: quantum-workflows}
spec:
  entrypoint: q
  templates:
    - name: q
      metadata: {labels: {kueue.x-k8s.io/queue-name: queue-qpu}}
      container:
        image: noop
        resources: {deviceClaims: [{className: iqm.com/qpu, count: 1}]}
"""
    rid = sysm.engine.submit(parse_workflow(doc))
    sysm.engine.run_to_completion(rid)
    p = parse(sysm.metrics.registry.export_text())
    assert p["hqflow_qpu_latency_seconds_sum"][()] == 2.0
    lat = {dict(k)["le"]: v for k, v in p["hqflow_qpu_latency_seconds_bucket"].items()}
    assert lat["1.0"] == 0 and lat["2.0"] == 1


def test_grammar_oracle_rejects_malformed_text():
    from oracles import exposition_problems

    assert exposition_problems(b"# TYPE a gauge\na 1\n") == []
    assert exposition_problems(b"a 1\n")
    assert exposition_problems(b"# TYPE a gauge\na{x=1} 1\n")
    assert exposition_problems(b"# TYPE a gauge\na one\n")
    assert exposition_problems(b"# TYPE a gauge\n# TYPE b gauge\na 1\nb 1\na 2\n")
    assert exposition_problems(b"# TYPE a gauge\na 1")
