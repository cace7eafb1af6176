from __future__ import annotations

import json

import pytest

from hqflow import records
from hqflow.system import build_system


def test_round_trip_and_no_secret_material(poc_run, tmp_path):
    run = poc_run.engine.runs[poc_run.run_id]
    d = records.write_run(tmp_path, run, poc_run.report, poc_run.metrics_text, {"value": 1.0})
    assert sorted(p.name for p in d.iterdir()) == [
        "artifacts.json", "events.jsonl", "metrics.prom", "report.json", "result.json", "spec.yaml"
    ]
    assert records.list_runs(tmp_path) == [poc_run.run_id]
    assert records.load_report(tmp_path, poc_run.run_id) == poc_run.report
    assert records.load_events(tmp_path, poc_run.run_id) == run.events
    assert records.load_result(tmp_path, poc_run.run_id) == {"value": 1.0}
    token = json.loads(build_system().engine.secrets.get("iqm-tokens")["tokens.json"])["token"].encode()
    for p in d.iterdir():
        assert token not in p.read_bytes()
    # rewriting without a result removes the stale one
    records.write_run(tmp_path, run, poc_run.report, poc_run.metrics_text)
    assert records.load_result(tmp_path, poc_run.run_id) is None


def test_missing_run(tmp_path):
    assert records.list_runs(tmp_path / "nothing") == []
    with pytest.raises(records.RecordError):
        records.load_report(tmp_path, "nope")


def test_replayed_queue_counts_match_live_scheduler(poc_spec):
    system = build_system(seed=0)
    eng = system.engine
    rid = eng.submit(poc_spec)
    run = eng.runs[rid]
    checked = 0
    while not (run.terminal and run.active == 0):
        assert eng.step()
        live = {s.name: (s.pending, s.admitted) for s in eng.scheduler.status()}
        replay = {c.queue: (c.pending, c.admitted) for c in records.replay_queue_counts(run.events)}
        for q, counts in live.items():
            assert replay.get(q, (0, 0)) == counts
        checked += 1
    assert checked > 600


def test_replay_at_time_and_census(poc_run):
    run = poc_run.engine.runs[poc_run.run_id]
    events = [records.Event.from_dict(json.loads(json.dumps(e.to_dict()))) for e in run.events]
    first_qpu_done = min(t["finished"] for t in poc_run.report.tasks if t["node"] == "qpu-1")
    counts = {c.queue: c for c in records.replay_queue_counts(events, first_qpu_done - 1)}
    assert counts["queue-qpu"].admitted == 1
    assert counts["queue-qpu"].pending == 215
    census = records.replay_census(events, 650)
    assert all(sum(c.values()) == 650 for _, c in census)
    assert census[-1][1] == {"Pending": 0, "Active": 0, "Succeeded": 650, "Failed": 0}
