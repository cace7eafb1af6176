from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hqflow.cluster import (
    Cluster,
    ClusterConfigError,
    Device,
    DeviceClass,
    DoubleRelease,
    InsufficientCapacity,
    Node,
    NoMatchingDevice,
    VirtualClock,
    load_cluster,
)
from hqflow.resources import AttributePredicate, DeviceClaim, ResourceRequest
from hqflow.system import sample_path


def sample() -> Cluster:
    return load_cluster(sample_path("cluster.yaml").read_bytes())


def test_sample_cluster_shape():
    c = sample()
    assert sorted(c.nodes) == ["cpu-a", "cpu-b", "gpu-1", "master", "qpu-1"]
    assert [n.name for n in c.match_nodes({"resource_type": "cpu"})] == ["cpu-a", "cpu-b"]
    gpu = c.nodes["gpu-1"]
    assert gpu.capacity["nvidia.com/gpu"] == 4 and gpu.speed_factor == 0.1
    qpu = c.nodes["qpu-1"]
    assert qpu.queue_delay_ns == 2_000_000_000 and qpu.speed_factor == 1.0
    assert c.nodes["cpu-a"].queue_delay_ns == 0


def test_exclusive_qpu_claim():
    c = sample()
    req = ResourceRequest({}, {}, (DeviceClaim("iqm.com/qpu", 1),))
    node = c.first_fit({"resource_type": "qpu"}, req)
    b = c.bind_task(node, req, "t1")
    assert b.devices == ("iqm-0",)
    assert c.nodes["qpu-1"].devices[0].allocated_to == "t1"
    assert c.first_fit({"resource_type": "qpu"}, req) is None
    with pytest.raises(InsufficientCapacity):
        c.bind_task("qpu-1", req, "t2")
    c.release(b)
    assert c.nodes["qpu-1"].devices[0].free
    with pytest.raises(DoubleRelease):
        c.release(b)


def test_claim_constraints_and_class_selector():
    c = sample()
    too_big = ResourceRequest({}, {}, (DeviceClaim("iqm.com/qpu", 1, (AttributePredicate("qubits", ">=", 50),)),))
    with pytest.raises(NoMatchingDevice):
        c.bind_task("qpu-1", too_big)
    doc = sample_path("cluster.yaml").read_text().replace("shot_budget: 100000", "shot_budget: 1000")
    c2 = load_cluster(doc)
    with pytest.raises(NoMatchingDevice):
        c2.bind_task("qpu-1", ResourceRequest({}, {}, (DeviceClaim("iqm.com/qpu", 1),)))


def test_gpu_count_request_takes_devices():
    c = sample()
    req = ResourceRequest({"nvidia.com/gpu": 3})
    b = c.bind_task("gpu-1", req, "g")
    assert len(b.devices) == 3
    assert c.nodes["gpu-1"].allocatable["nvidia.com/gpu"] == 1
    assert not c.fits(c.nodes["gpu-1"], req)


def test_config_errors():
    with pytest.raises(ClusterConfigError):
        load_cluster("kind: Other\n")
    with pytest.raises(ClusterConfigError):
        load_cluster("kind: Cluster\nspec: {bogus: 1}\n")
    with pytest.raises(ClusterConfigError):
        Node("n", {}, {"x": 2}, devices=[Device("d", "x")])
    with pytest.raises(ClusterConfigError):
        Node("n", {}, {"cpu": 1}, {"cpu": 2})
    with pytest.raises(ClusterConfigError):
        Cluster([Node("a", {}, {}), Node("a", {}, {})])


def test_clock():
    clk = VirtualClock()
    clk.advance(1_500_000_000)
    assert clk.now == 1_500_000_000 and clk.seconds == 1.5
    with pytest.raises(ValueError):
        clk.advance_to(0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3000), st.integers(0, 2), st.integers(0, 10)), max_size=60))
def test_bind_release_conserves_capacity(ops):
    c = Cluster(
        [
            Node("a", {"resource_type": "cpu"}, {"cpu": 4000, "memory": 8 * 2**30}),
            Node("g", {"resource_type": "gpu"}, {"cpu": 4000}, devices=[Device(f"d{i}", "gpu") for i in range(3)]),
        ],
        [DeviceClass("gpu")],
    )
    before = c.snapshot()
    live = []
    for bind, cpu, gpus, pick in ops:
        if bind or not live:
            req = ResourceRequest({"cpu": cpu, "gpu": gpus})
            node = c.first_fit({}, req)
            if node is not None:
                live.append(c.bind_task(node, req, f"t{len(live)}"))
        else:
            c.release(live.pop(pick % len(live)))
        for n in c.nodes.values():
            assert all(v >= 0 for v in n.allocatable.values())
            assert n.allocatable.get("gpu", 0) == sum(d.free for d in n.devices)
    for b in live:
        c.release(b)
    assert c.snapshot() == before
    assert not c.bindings
