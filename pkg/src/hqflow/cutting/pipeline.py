"""Task payloads for the circuit-cutting workflow image.

The image runs one of five scripts, selected by the last ``command`` token:

    create_subcircuits.py ROOT [options]   plan cuts, write every fragment
    execute_subcircuits_{cpu,gpu,qpu}.py INDEX ROOT
    reconstruct.py ROOT

Shared-volume layout under ROOT::

    manifest.json                          plan id and execution settings
    plans/<plan>/plan.json                 circuit, cuts, fragments, observable
    variants/<plan>/<variant>/<frag>.frag  fragment documents
    results/<plan>/<variant>/<frag>.json   fragment results
    results/<plan>/reconstruction.json     final estimate
"""

from __future__ import annotations

import argparse
import json
import posixpath
import shlex

from ..engine import PayloadResult, TaskContext
from ..quantum import Observable, circuit_from_dict, circuit_to_dict, hea_circuit
from .plan import CutPlan, plan_cuts
from .variants import (
    BackendRole,
    ExecutionMode,
    FragmentResult,
    SubcircuitVariant,
    execute_fragment,
    fragment_key,
    generate_variants,
    loads_fragment,
    reconstruct,
    result_key,
    dumps_fragment,
)

IMAGE = "docker.io/martejedor/quantum-workflow:latest"
TOKENS_ENV = "IQM_TOKENS_FILE"

# virtual compute-cost model (seconds); simulation knobs only
COST_PER_AMPLITUDE_GATE = 2e-8
COST_PER_SHOT = 2e-6
COST_TASK_OVERHEAD = 0.05
COST_PER_FRAGMENT_WRITE = 1e-4


class QPUAuthError(Exception):
    pass


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _root(path: str) -> str:
    return posixpath.normpath(path)


def _create_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="create_subcircuits.py", exit_on_error=False)
    p.add_argument("root")
    p.add_argument("--qubits", type=int, default=11)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--circuit-seed", type=int, default=7)
    p.add_argument("--max-fragment-qubits", type=int, default=6)
    p.add_argument("--max-cuts", type=int, default=4)
    p.add_argument("--cuts", default=None, help="comma-separated gate indices; skips the planner")
    p.add_argument("--plan-id", default=None)
    p.add_argument("--observable", default=None, help="Pauli sum, default all-Z")
    p.add_argument("--mode", choices=["auto", "exact", "sampled"], default="auto")
    p.add_argument("--shots", type=int, default=4096)
    return p


def create_subcircuits(ctx: TaskContext, argv: list[str]) -> PayloadResult:
    a = _create_parser().parse_args(argv)
    root = _root(a.root)
    circuit = hea_circuit(a.qubits, a.layers, a.circuit_seed)
    plan_id = a.plan_id or f"hea-n{a.qubits}-l{a.layers}-s{a.circuit_seed}"
    if a.cuts:
        plan = CutPlan.from_cuts(circuit, [int(x) for x in a.cuts.split(",")], plan_id)
    else:
        plan = plan_cuts(circuit, a.max_fragment_qubits, max_cuts=a.max_cuts, plan_id=plan_id)
    observable = Observable.parse(a.observable) if a.observable else Observable.z_string(a.qubits)
    variants = generate_variants(plan)
    ctx.fs.write(
        f"{root}/plans/{plan_id}/plan.json",
        _dumps(
            {
                "plan": plan_id,
                "circuit": circuit_to_dict(circuit),
                "cuts": list(plan.cuts),
                "fragments": [list(f) for f in plan.fragments],
                "observable": str(observable),
                "variants": len(variants),
            }
        ),
    )
    for v in variants:
        for f in v.fragments:
            ctx.fs.write(fragment_key(plan_id, v.index, f.fragment_id, root), dumps_fragment(v, f))
    ctx.fs.write(
        f"{root}/manifest.json",
        _dumps({"plan": plan_id, "variants": len(variants), "mode": a.mode, "shots": a.shots}),
    )
    cost = COST_TASK_OVERHEAD + COST_PER_FRAGMENT_WRITE * len(variants) * len(plan.fragments)
    return PayloadResult(cost, {"variants": len(variants), "cuts": plan.num_cuts})


def _load_plan(ctx: TaskContext, root: str) -> tuple[dict, dict]:
    manifest = json.loads(ctx.fs.read(f"{root}/manifest.json"))
    plan = json.loads(ctx.fs.read(f"{root}/plans/{manifest['plan']}/plan.json"))
    return manifest, plan


def _load_variant(ctx: TaskContext, root: str, plan: dict, index: int) -> SubcircuitVariant:
    frags = []
    head = None
    for fid in range(len(plan["fragments"])):
        head, frag = loads_fragment(ctx.fs.read(fragment_key(plan["plan"], index, fid, root)))
        frags.append(frag)
    return SubcircuitVariant(plan["plan"], index, tuple(head["terms"]), head["coefficient"], tuple(frags))


def _qpu_client_login(ctx: TaskContext) -> str:
    """Stub cloud client: needs a readable tokens file holding a non-empty ``token``."""
    path = ctx.env.get(TOKENS_ENV)
    if not path:
        raise QPUAuthError(f"{TOKENS_ENV} is not set")
    try:
        tokens = json.loads(ctx.fs.read(path))
    except FileNotFoundError:
        raise QPUAuthError(f"token file {path} is not mounted") from None
    except ValueError:
        raise QPUAuthError(f"token file {path} is not valid JSON") from None
    token = tokens.get("token") if isinstance(tokens, dict) else None
    if not token:
        raise QPUAuthError(f"token file {path} has no token")
    return "authenticated"


def execute_subcircuits(ctx: TaskContext, role: BackendRole, argv: list[str]) -> PayloadResult:
    if len(argv) != 2:
        raise ValueError(f"usage: execute_subcircuits_{role.value.lower()}.py INDEX ROOT")
    index, root = int(argv[0]), _root(argv[1])
    manifest, plan = _load_plan(ctx, root)
    if role is BackendRole.QPU:
        _qpu_client_login(ctx)
    if index >= manifest["variants"]:
        return PayloadResult(COST_TASK_OVERHEAD, {"fragments": 0})
    variant = _load_variant(ctx, root, plan, index)
    observable = Observable.parse(plan["observable"])
    mode = manifest["mode"]
    if mode == "auto":
        mode = ExecutionMode.SAMPLED if role is BackendRole.QPU else ExecutionMode.EXACT
    cost = COST_TASK_OVERHEAD
    done = 0
    for frag in variant.fragments:
        if frag.backend is not role:
            continue
        res = execute_fragment(variant, frag, observable, mode, seed=ctx.seed, shots=manifest["shots"], role=role)
        ctx.fs.write(result_key(plan["plan"], index, frag.fragment_id, root), res.to_bytes())
        branches = 2 ** frag.circuit.num_measurements
        cost += COST_PER_AMPLITUDE_GATE * branches * len(frag.circuit.ops) * 2**frag.circuit.num_qubits
        cost += COST_PER_SHOT * res.shots * len(observable.terms)
        done += 1
    return PayloadResult(cost, {"fragments": done})


def reconstruct_stage(ctx: TaskContext, argv: list[str]) -> PayloadResult:
    if len(argv) != 1:
        raise ValueError("usage: reconstruct.py ROOT")
    root = _root(argv[0])
    manifest, plan = _load_plan(ctx, root)
    observable = Observable.parse(plan["observable"])
    variants = [_load_variant(ctx, root, plan, i) for i in range(manifest["variants"])]
    results = {}
    for v in variants:
        for f in v.fragments:
            key = result_key(plan["plan"], v.index, f.fragment_id, root)
            if ctx.fs.exists(key):
                results[(v.index, f.fragment_id)] = FragmentResult.from_bytes(ctx.fs.read(key))
    rec = reconstruct(variants, results, observable)
    out = {
        "plan": plan["plan"],
        "value": rec.value,
        "value_hex": float(rec.value).hex(),
        "uncertainty": rec.uncertainty,
        "mode": rec.mode,
        "variants": rec.num_variants,
        "observable": plan["observable"],
    }
    ctx.fs.write(f"{root}/results/{plan['plan']}/reconstruction.json", _dumps(out))
    return PayloadResult(COST_TASK_OVERHEAD + 1e-4 * len(results), {"value": rec.value})


def circuit_cutting_payload(ctx: TaskContext) -> PayloadResult:
    """Entry point registered for :data:`IMAGE`; dispatches on the script name."""
    tokens = list(ctx.command) + list(ctx.args)
    script_at = next((i for i, t in enumerate(tokens) if t.endswith(".py")), None)
    if script_at is None:
        raise ValueError(f"no script in command {shlex.join(tokens)!r}")
    script = posixpath.basename(tokens[script_at])
    argv = tokens[script_at + 1 :]
    if script == "create_subcircuits.py":
        return create_subcircuits(ctx, argv)
    if script == "reconstruct.py":
        return reconstruct_stage(ctx, argv)
    for role in BackendRole:
        if script == f"execute_subcircuits_{role.value.lower()}.py":
            return execute_subcircuits(ctx, role, argv)
    raise ValueError(f"unknown script {script!r}")


def load_reconstruction(store, claim: str, plan_id: str | None = None) -> dict | None:
    """Read the reconstruction document from a finished run's artifact store."""
    vol = store.volumes.get(claim, {})
    if plan_id is None:
        if "manifest.json" not in vol:
            return None
        plan_id = json.loads(vol["manifest.json"])["plan"]
    data = vol.get(f"results/{plan_id}/reconstruction.json")
    return json.loads(data) if data else None


def load_plan_circuit(store, claim: str):
    vol = store.volumes.get(claim, {})
    manifest = json.loads(vol["manifest.json"])
    plan = json.loads(vol[f"plans/{manifest['plan']}/plan.json"])
    return circuit_from_dict(plan["circuit"]), Observable.parse(plan["observable"]), plan
