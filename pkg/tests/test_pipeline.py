from __future__ import annotations

import json

import pytest

from hqflow.artifacts import ArtifactStore, Mount, SecretStore, TaskFS
from hqflow.cutting.pipeline import QPUAuthError, circuit_cutting_payload, load_plan_circuit, load_reconstruction
from hqflow.engine import TaskContext
from hqflow.quantum import expectation, simulate

ROOT = "/mnt/shared"


def ctx(store, args, *, command=("python",), secrets=None, env=None, role="cpu", seed=0):
    secrets = secrets if secrets is not None else SecretStore({"tok": {"tokens.json": '{"token": "t"}'}})
    mounts = [Mount(ROOT, claim="pvc")]
    if "tok" in secrets:
        mounts.append(Mount(ROOT + "/iqm", secret="tok", read_only=True))
    return TaskContext(
        "t", "r", "tmpl", {}, tuple(command), tuple(args), dict(env or {}), TaskFS(store, secrets, mounts), "n", role, seed
    )


def run(store, *a, **kw):
    c = ctx(store, *a, **kw)
    res = circuit_cutting_payload(c)
    store.commit(c.fs.staged())
    return res


SMALL = ["/app/create_subcircuits.py", ROOT, "--qubits", "5", "--layers", "2", "--max-fragment-qubits", "3", "--max-cuts", "2"]


def test_stage_by_stage_pipeline_matches_oracle():
    store = ArtifactStore()
    res = run(store, SMALL + ["--mode", "exact"])
    manifest = json.loads(store.volumes["pvc"]["manifest.json"])
    n = manifest["variants"]
    assert n == 6 ** res.metrics["cuts"] and manifest["mode"] == "exact"
    for role in ("cpu", "gpu", "qpu"):
        for i in range(n):
            run(store, [f"/app/execute_subcircuits_{role}.py", str(i), ROOT],
                env={"IQM_TOKENS_FILE": ROOT + "/iqm/tokens.json"}, role=role)
    run(store, ["/app/reconstruct.py", ROOT])
    rec = load_reconstruction(store, "pvc")
    circuit, obs, plan = load_plan_circuit(store, "pvc")
    assert plan["plan"] == "hea-n5-l2-s7"
    assert abs(rec["value"] - expectation(simulate(circuit), obs)) < 1e-9
    assert rec["uncertainty"] == 0.0
    assert float.fromhex(rec["value_hex"]) == rec["value"]


def test_out_of_range_index_is_noop():
    store = ArtifactStore()
    run(store, SMALL)
    before = dict(store.volumes["pvc"])
    run(store, ["/app/execute_subcircuits_cpu.py", "9999", ROOT])
    assert store.volumes["pvc"] == before


@pytest.mark.parametrize(
    "env,secrets",
    [
        ({}, None),
        ({"IQM_TOKENS_FILE": ROOT + "/iqm/missing.json"}, None),
        ({"IQM_TOKENS_FILE": ROOT + "/iqm/tokens.json"}, SecretStore({"tok": {"tokens.json": "not json"}})),
        ({"IQM_TOKENS_FILE": ROOT + "/iqm/tokens.json"}, SecretStore({"tok": {"tokens.json": '{"token": ""}'}})),
        ({"IQM_TOKENS_FILE": ROOT + "/iqm/tokens.json"}, SecretStore()),
    ],
)
def test_qpu_login_failures(env, secrets):
    store = ArtifactStore()
    run(store, SMALL)
    with pytest.raises(QPUAuthError):
        run(store, ["/app/execute_subcircuits_qpu.py", "0", ROOT], env=env, secrets=secrets, role="qpu")


def test_unknown_or_missing_script():
    store = ArtifactStore()
    with pytest.raises(ValueError, match="unknown script"):
        run(store, ["/app/train.py"])
    with pytest.raises(ValueError, match="no script"):
        run(store, ["--help"])
    with pytest.raises(ValueError, match="usage"):
        run(store, ["/app/reconstruct.py"])
