from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import quota_violations

from hqflow.cluster import load_cluster
from hqflow.resources import DeviceClaim, ResourceRequest
from hqflow.scheduler import (
    QueueConfigError,
    SchedulerError,
    UnknownQueue,
    UnknownWorkload,
    load_scheduler,
)
from hqflow.system import sample_path

CPU = ResourceRequest({"cpu": 500, "memory": 500 * 2**20}, {"cpu": 1000, "memory": 2**30})
GPU = ResourceRequest({"nvidia.com/gpu": 1}, {"nvidia.com/gpu": 1})
QPU = ResourceRequest({}, {}, (DeviceClaim("iqm.com/qpu", 1),))
BIG = ResourceRequest({"cpu": 1000, "memory": 2**30})


def sample_scheduler(queues: str | None = None):
    cluster = load_cluster(sample_path("cluster.yaml").read_bytes())
    return load_scheduler(queues or sample_path("queues.yaml").read_bytes(), cluster)


def test_sample_queues():
    s = sample_scheduler()
    assert sorted(s.local_queues) == ["queue-cpu", "queue-gpu", "queue-qpu"]
    cq = s.cluster_queues["cluster-queue"]
    assert cq.quotas == {
        "cpu-flavor": {"cpu": 8000, "memory": 16 * 2**30},
        "gpu-flavor": {"nvidia.com/gpu": 4},
        "qpu-flavor": {"iqm.com/qpu": 1},
    }


def test_cpu_quota_caps_admissions():
    s = sample_scheduler()
    for i in range(20):
        s.enqueue(f"c{i}", "queue-cpu", CPU)
    adm = s.admit_cycle()
    # 8 CPUs of quota at 500m each, but only 8 CPUs of node capacity across cpu-a/cpu-b
    assert len(adm) == 16
    assert {a.flavor for a in adm} == {"cpu-flavor"}
    assert {a.binding.node for a in adm} == {"cpu-a", "cpu-b"}
    assert [a.task_id for a in adm] == [f"c{i}" for i in range(16)]
    assert not quota_violations(s)
    assert s.complete("c0")[0].task_id == "c16"


def test_qpu_is_exclusive_and_fifo():
    s = sample_scheduler()
    for i in range(3):
        s.enqueue(f"q{i}", "queue-qpu", QPU)
    assert [a.task_id for a in s.admit_cycle()] == ["q0"]
    assert [a.task_id for a in s.complete("q0")] == ["q1"]
    assert [a.task_id for a in s.complete("q1")] == ["q2"]
    assert [(q.name, q.pending, q.admitted) for q in s.status()][2] == ("queue-qpu", 0, 1)


def test_priority_then_enqueue_order():
    s = sample_scheduler()
    s.enqueue("a", "queue-qpu", QPU)
    s.enqueue("b", "queue-qpu", QPU, priority=5)
    s.enqueue("c", "queue-qpu", QPU, priority=5)
    assert [w.task_id for w in s.pending()] == ["b", "c", "a"]


def test_blocked_head_does_not_block_others():
    s = sample_scheduler()
    s.enqueue("q0", "queue-qpu", QPU)
    s.enqueue("q1", "queue-qpu", QPU)
    s.enqueue("g0", "queue-gpu", GPU)
    assert [a.task_id for a in s.admit_cycle()] == ["q0", "g0"]


def test_unlabelled_workload_bypasses_quota():
    s = sample_scheduler()
    s.enqueue("create", None, BIG, {"resource_type": "cpu"})
    (adm,) = s.admit_cycle()
    assert adm.flavor is None and adm.binding.node == "cpu-a"
    assert s.usage_snapshot()["cluster-queue"]["cpu-flavor"]["cpu"] == 0


def test_conflicting_selector_never_admitted():
    s = sample_scheduler()
    s.enqueue("x", "queue-cpu", CPU, {"resource_type": "gpu"})
    assert s.admit_cycle() == []


def test_errors():
    s = sample_scheduler()
    with pytest.raises(UnknownQueue):
        s.enqueue("x", "nope", CPU)
    with pytest.raises(UnknownQueue):
        s.enqueue("x", "queue-cpu", CPU, namespace="elsewhere")
    s.enqueue("x", "queue-cpu", CPU)
    with pytest.raises(SchedulerError):
        s.enqueue("x", "queue-cpu", CPU)
    with pytest.raises(UnknownWorkload):
        s.complete("x")
    s.withdraw("x")
    with pytest.raises(UnknownWorkload):
        s.withdraw("x")
    with pytest.raises(QueueConfigError):
        sample_scheduler("kind: LocalQueue\nmetadata: {name: q}\nspec: {clusterQueue: missing}\n")
    with pytest.raises(QueueConfigError):
        sample_scheduler("kind: Widget\nmetadata: {name: w}\n")


def fuzz(s, n_events: int, rng: random.Random) -> int:
    """Random enqueue/complete/withdraw traffic; returns how many invariant checks ran."""
    shapes = [("queue-cpu", CPU, {}), ("queue-gpu", GPU, {}), ("queue-qpu", QPU, {}), (None, BIG, {"resource_type": "cpu"})]
    admitted: list[str] = []
    checks = 0
    for i in range(n_events):
        r = rng.random()
        pending = [w.task_id for w in s.pending()]
        if r < 0.5 or not (admitted or pending):
            q, req, sel = rng.choice(shapes)
            s.enqueue(f"w{i}", q, req, sel, priority=rng.randrange(3))
            new = s.admit_cycle()
        elif r < 0.9 and admitted:
            new = s.complete(admitted.pop(rng.randrange(len(admitted))))
        elif pending:
            s.withdraw(rng.choice(pending))
            new = []
        else:
            new = []
        admitted += [a.task_id for a in new]
        assert quota_violations(s) == []
        checks += 1
    return checks


def test_fuzz_invariants_and_drain():
    s = sample_scheduler()
    before = s.cluster.snapshot()
    assert fuzz(s, 3000, random.Random(11)) == 3000
    for w in list(s.pending()):
        s.withdraw(w.task_id)
    for tid in [w.task_id for w in s.workloads.values()]:
        s.release(tid)
    assert s.cluster.snapshot() == before
    assert all(v == 0 for f in s.usage_snapshot()["cluster-queue"].values() for v in f.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fuzz_property(seed):
    s = sample_scheduler()
    fuzz(s, 200, random.Random(seed))
