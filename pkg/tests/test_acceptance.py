"""End-to-end acceptance checks, one marked test per criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per
criterion in the terminal summary.
"""

from __future__ import annotations

import itertools
import math
import random
import time
import warnings

import numpy as np
import pytest
from oracles import (
    TWO_QUBIT_TARGET,
    I2,
    X,
    Y,
    Z,
    dense_expectation,
    exposition_problems,
    qpd_channel,
    quota_violations,
)
from prometheus_client.parser import text_string_to_metric_families

from hqflow.cli import main
from hqflow.cluster import load_cluster
from hqflow.cutting.pipeline import IMAGE, circuit_cutting_payload
from hqflow.cutting.plan import CutPlan, plan_cuts
from hqflow.cutting.qpd import decompose_gate
from hqflow.cutting.variants import BackendRole, generate_variants, run_cutting, select_backend
from hqflow.engine import TaskState
from hqflow.quantum import Circuit, Gate, Observable, PauliTerm, hea_circuit
from hqflow.scheduler import load_scheduler
from hqflow.system import build_system, sample_path
from hqflow.workflow import expand_dag

from test_scheduler import fuzz

EXECUTE = ("execute-subcircuits-cpu", "execute-subcircuits-gpu", "execute-subcircuits-qpu")


@pytest.mark.criterion(1, "fan-out concordance: 650 tasks, 216 variants, under 10 s")
def test_fan_out_concordance(poc_spec):
    graph = expand_dag(poc_spec)
    assert len(graph) == 1 + 3 * 216 + 1 == 650
    plan = plan_cuts(hea_circuit(11, 3, 7), 6)
    assert plan.num_cuts == 3 and len(generate_variants(plan)) == 6**3 == 216
    t0 = time.perf_counter()
    system = build_system(seed=0)
    rid = system.engine.submit(poc_spec)
    report = system.engine.run_to_completion(rid)
    elapsed = time.perf_counter() - t0
    assert report.state == "Succeeded"
    assert len(report.tasks) == 650
    assert elapsed < 10.0, f"simulation took {elapsed:.1f} s"


def random_case(rng: random.Random) -> tuple[Circuit, tuple[int, ...], Observable]:
    n = rng.randint(2, 10)
    if rng.random() < 0.5:
        c = hea_circuit(n, rng.randint(1, 2), rng.randrange(2**31))
        bound = rng.randint(max(1, math.ceil(n / 3)), n)
        try:
            cuts = plan_cuts(c, bound, max_cuts=2).cuts
        except Exception:
            cuts = ()
    else:
        gates = []
        for _ in range(rng.randint(n, 4 * n)):
            kind = rng.choice(["RX", "RY", "RZ", "H", "X", "CZ", "CNOT", "CZ", "CNOT"])
            if kind in ("CZ", "CNOT"):
                a, b = rng.sample(range(n), 2)
                gates.append(Gate(kind, (a, b)))
            elif kind in ("H", "X"):
                gates.append(Gate(kind, (rng.randrange(n),)))
            else:
                gates.append(Gate(kind, (rng.randrange(n),), (rng.uniform(-math.pi, math.pi),)))
        c = Circuit(n, tuple(gates))
        ent = c.entangling_indices()
        cuts = tuple(sorted(rng.sample(ent, min(len(ent), rng.randint(0, 2)))))
    terms = tuple(
        PauliTerm(rng.uniform(-1, 1), "".join(rng.choice("IXYZ") for _ in range(n))) for _ in range(rng.randint(1, 3))
    )
    return c, cuts, Observable(terms)


@pytest.mark.criterion(2, "exact reconstruction unbiased on 100+ random circuits within 1e-9, under 60 s")
def test_reconstruction_unbiasedness():
    rng = random.Random(2024)
    t0 = time.perf_counter()
    worst = 0.0
    cut_counts = []
    for _ in range(120):
        c, cuts, obs = random_case(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plan = CutPlan.from_cuts(c, cuts)
        rec = run_cutting(plan, obs)
        oracle = dense_expectation(c, [(t.coefficient, t.paulis) for t in obs.terms])
        worst = max(worst, abs(rec.value - oracle))
        cut_counts.append(plan.num_cuts)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9, worst
    assert {0, 1, 2} <= set(cut_counts)
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


@pytest.mark.criterion(3, "CZ and CNOT decompositions reproduce the gate channel on all 16 Pauli inputs")
@pytest.mark.parametrize("kind", ["CZ", "CNOT"])
def test_channel_equality(kind):
    terms = decompose_gate(kind)
    assert len(terms) == 6
    u = TWO_QUBIT_TARGET[kind]
    for pa, pb in itertools.product([I2, X, Y, Z], repeat=2):
        rho = np.kron(pb, pa)
        assert np.max(np.abs(qpd_channel(terms, rho) - u @ rho @ u.conj().T)) < 1e-9


@pytest.mark.criterion(4, "backend policy boundary table")
def test_backend_boundaries():
    got = [select_backend(n) for n in (1, 5, 6, 20, 21, 64)]
    q, c, g = BackendRole.QPU, BackendRole.CPU, BackendRole.GPU
    assert got == [q, q, c, c, g, g]


@pytest.mark.criterion(5, "quota safety under 10^4 random scheduler events, capacity conserved on drain")
def test_quota_safety():
    cluster = load_cluster(sample_path("cluster.yaml").read_bytes())
    sched = load_scheduler(sample_path("queues.yaml").read_bytes(), cluster)
    before = cluster.snapshot()
    assert fuzz(sched, 10_000, random.Random(5)) == 10_000
    for w in sched.pending():
        sched.withdraw(w.task_id)
    for tid in [w.task_id for w in sched.workloads.values()]:
        sched.release(tid)
        assert quota_violations(sched) == []
    assert cluster.snapshot() == before
    assert not cluster.bindings
    assert all(d.free for n in cluster.nodes.values() for d in n.devices)
    assert all(v == 0 for fl in sched.usage_snapshot()["cluster-queue"].values() for v in fl.values())


def _failing_run(poc_spec, victim: str):
    system = build_system(seed=0)

    def payload(ctx):
        if ctx.task_id == victim:
            raise RuntimeError("injected failure")
        return circuit_cutting_payload(ctx)

    system.engine.register(IMAGE, payload)
    rid = system.engine.submit(poc_spec)
    report = system.engine.run_to_completion(rid)
    return system.engine.runs[rid], report


@pytest.mark.criterion(6, "reconstruct waits for all 648 executes; any single failure leaves it Pending")
def test_barrier_semantics(poc_run, poc_spec):
    run = poc_run.engine.runs[poc_run.run_id]
    executes = [t for t in run.tasks.values() if t.spec.template in EXECUTE]
    assert len(executes) == 648
    assert run.tasks["reconstruct"].started >= max(t.finished for t in executes)
    rng = random.Random(6)
    victims = [f"{tpl}({rng.randrange(216)})" for tpl in EXECUTE] + ["execute-subcircuits-cpu(0)", "execute-subcircuits-qpu(215)"]
    for victim in victims:
        failed, report = _failing_run(poc_spec, victim)
        assert report.state == "Failed", victim
        assert failed.tasks[victim].state is TaskState.FAILED
        assert failed.tasks["reconstruct"].state is TaskState.PENDING, victim
        assert failed.tasks["reconstruct"].started is None


@pytest.mark.criterion(7, "two apply runs with the same seed give byte-identical reports and metrics")
def test_determinism(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    wf = str(sample_path("circuit_cutting_workflow.yaml"))
    outs = []
    for name in ("a", "b"):
        assert main(["--runs-dir", name, "--seed", "3", "apply", "-f", wf]) == 0
        outs.append(capsys.readouterr().out.replace(f"record: {name}/", "record: "))
    (run_a,) = [p.name for p in (tmp_path / "a").iterdir()]
    (run_b,) = [p.name for p in (tmp_path / "b").iterdir()]
    assert run_a == run_b
    for f in ("report.json", "metrics.prom", "events.jsonl", "result.json"):
        assert (tmp_path / "a" / run_a / f).read_bytes() == (tmp_path / "b" / run_b / f).read_bytes(), f
    assert outs[0] == outs[1]


@pytest.mark.criterion(8, "sampled 3-cut reconstruction within 5 sigma over 20 seeds; MAE shrinks with 4x shots")
def test_sampled_statistics():
    c = hea_circuit(11, 3, 7)
    plan = plan_cuts(c, 6)
    assert plan.num_cuts == 3
    obs = Observable.z_string(11)
    oracle = dense_expectation(c, [(1.0, "Z" * 11)])
    mae = {}
    for shots in (4096, 16384):
        errs = []
        for seed in range(20):
            rec = run_cutting(plan, obs, "sampled", seed=seed, shots=shots)
            assert rec.mode == "sampled" and rec.uncertainty > 0
            err = abs(rec.value - oracle)
            assert err < 5 * rec.uncertainty, (shots, seed, err, rec.uncertainty)
            errs.append(err)
        mae[shots] = sum(errs) / len(errs)
    assert mae[16384] < mae[4096], mae


@pytest.mark.criterion(9, "every metrics export parses and the task census always sums to 650")
def test_metrics_validity(poc_run):
    assert len(poc_run.exports) > 1300
    for text in poc_run.exports:
        assert exposition_problems(text) == []
        tasks = {}
        for fam in text_string_to_metric_families(text.decode()):
            for s in fam.samples:
                if s.name == "hqflow_tasks":
                    tasks[s.labels["state"]] = s.value
        assert sum(tasks.values()) == 650
    assert set(poc_run.census_sums) == {650}
