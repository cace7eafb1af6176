"""Subcircuit variants, backend routing, fragment execution and reconstruction."""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..quantum import (
    MAX_QUBITS,
    CapacityExceeded,
    Circuit,
    Estimate,
    Gate,
    Observable,
    apply_gate,
    estimate_from_distribution,
    gate_from_dict,
    gate_to_dict,
    parity_eigenvalues,
    pauli_expectation,
    rotate_to_z_basis,
    zero_state,
)
from .plan import CutPlan
from .qpd import MEASURE, decompose_gate, local_gates


class BackendRole(str, enum.Enum):
    QPU = "QPU"
    CPU = "CPU"
    GPU = "GPU"

    def __str__(self) -> str:
        return self.value


def select_backend(num_qubits: int) -> BackendRole:
    """Default routing: small fragments to the QPU, medium to CPU, large to GPU."""
    if num_qubits < 1:
        raise ValueError("num_qubits must be >= 1")
    if num_qubits <= 5:
        return BackendRole.QPU
    if num_qubits <= 20:
        return BackendRole.CPU
    return BackendRole.GPU


BackendPolicy = Callable[[int], BackendRole]

# largest fragment each role accepts (simulation knob)
BACKEND_CAPACITY = {BackendRole.QPU: 20, BackendRole.CPU: MAX_QUBITS, BackendRole.GPU: MAX_QUBITS}


class MissingArtifact(Exception):
    def __init__(self, keys: Sequence[str]):
        self.keys = list(keys)
        shown = ", ".join(self.keys[:5])
        more = f" (+{len(self.keys) - 5} more)" if len(self.keys) > 5 else ""
        super().__init__(f"missing artifacts: {shown}{more}")


class ExecutionMode(str, enum.Enum):
    EXACT = "exact"
    SAMPLED = "sampled"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class FragmentCircuit:
    """Local circuit whose ops are gates or ``"MZ"`` signed measurements."""

    num_qubits: int
    ops: tuple[Gate | tuple[str, int], ...]

    @property
    def num_measurements(self) -> int:
        return sum(1 for op in self.ops if isinstance(op, tuple))

    def to_dict(self) -> dict:
        ops = []
        for op in self.ops:
            if isinstance(op, tuple):
                ops.append({"kind": op[0], "qubits": [op[1]]})
            else:
                ops.append(gate_to_dict(op))
        return {"num_qubits": self.num_qubits, "ops": ops}

    @classmethod
    def from_dict(cls, d: dict) -> "FragmentCircuit":
        ops: list = []
        for o in d["ops"]:
            if o["kind"] == MEASURE:
                ops.append((MEASURE, int(o["qubits"][0])))
            else:
                ops.append(gate_from_dict(o))
        return cls(int(d["num_qubits"]), tuple(ops))


@dataclass(frozen=True)
class Fragment:
    fragment_id: int
    qubits: tuple[int, ...]
    circuit: FragmentCircuit
    backend: BackendRole


@dataclass(frozen=True)
class SubcircuitVariant:
    plan_id: str
    index: int
    term_choice: tuple[int, ...]
    coefficient: float
    fragments: tuple[Fragment, ...]

    def to_dict(self, fragment: Fragment) -> dict:
        return {
            "format": "hqflow.fragment",
            "version": 1,
            "plan": self.plan_id,
            "variant": self.index,
            "terms": list(self.term_choice),
            "coefficient": self.coefficient,
            "fragment": fragment.fragment_id,
            "qubits": list(fragment.qubits),
            "backend": fragment.backend.value,
            "circuit": fragment.circuit.to_dict(),
        }


def fragment_key(plan_id: str, variant: int, fragment: int, root: str = "/mnt/shared") -> str:
    return f"{root.rstrip('/')}/variants/{plan_id}/{variant}/{fragment}.frag"


def result_key(plan_id: str, variant: int, fragment: int, root: str = "/mnt/shared") -> str:
    return f"{root.rstrip('/')}/results/{plan_id}/{variant}/{fragment}.json"


def dumps_fragment(variant: SubcircuitVariant, fragment: Fragment) -> bytes:
    return json.dumps(variant.to_dict(fragment), sort_keys=True, separators=(",", ":")).encode()


def loads_fragment(data: bytes) -> tuple[dict, Fragment]:
    d = json.loads(data)
    if d.get("format") != "hqflow.fragment" or d.get("version") != 1:
        raise ValueError("not a version-1 fragment document")
    frag = Fragment(
        d["fragment"], tuple(d["qubits"]), FragmentCircuit.from_dict(d["circuit"]), BackendRole(d["backend"])
    )
    return d, frag


def _build_fragment_circuit(plan: CutPlan, qubits: tuple[int, ...], choice: Sequence[int]) -> FragmentCircuit:
    local = {q: i for i, q in enumerate(qubits)}
    cut_pos = {g: i for i, g in enumerate(plan.cuts)}
    ops: list = []
    for gi, g in enumerate(plan.circuit.gates):
        if gi in cut_pos:
            term = decompose_gate(g.kind)[choice[cut_pos[gi]]]
            for side_ops, q in ((term.op_a, g.qubits[0]), (term.op_b, g.qubits[1])):
                if q in local:
                    for op in local_gates(side_ops, local[q]):
                        ops.append((MEASURE, local[q]) if op == MEASURE else op)
        elif all(q in local for q in g.qubits):
            ops.append(g.remap(local))
    return FragmentCircuit(len(qubits), tuple(ops))


def generate_variants(plan: CutPlan, policy: BackendPolicy = select_backend) -> list[SubcircuitVariant]:
    """Cartesian product over per-cut QPD terms, first cut most significant."""
    per_cut = [decompose_gate(plan.circuit.gates[c].kind) for c in plan.cuts]
    variants = []
    for index, choice in enumerate(itertools.product(*(range(len(t)) for t in per_cut))):
        coeff = 1.0
        for terms, k in zip(per_cut, choice):
            coeff *= terms[k].coefficient
        frags = tuple(
            Fragment(fi, qubits, _build_fragment_circuit(plan, qubits, choice), policy(len(qubits)))
            for fi, qubits in enumerate(plan.fragments)
        )
        variants.append(SubcircuitVariant(plan.plan_id, index, tuple(choice), coeff, frags))
    return variants


def restrict_observable(observable: Observable, qubits: Sequence[int]) -> list[str]:
    """Per-term Pauli substrings on ``qubits`` (local order)."""
    return ["".join(t.paulis[q] for q in qubits) for t in observable.terms]


def _branches(circuit: FragmentCircuit) -> list[tuple[float, np.ndarray]]:
    n = circuit.num_qubits
    branches = [(1.0, zero_state(n))]
    k = np.arange(1 << n, dtype=np.int64)
    for op in circuit.ops:
        if isinstance(op, tuple):
            bit = ((k >> op[1]) & 1).astype(bool)
            nxt = []
            for sign, psi in branches:
                nxt.append((sign, np.where(bit, 0, psi)))
                nxt.append((-sign, np.where(bit, psi, 0)))
            branches = nxt
        else:
            branches = [(s, apply_gate(psi, op, n)) for s, psi in branches]
    return branches


def fragment_expectation(circuit: FragmentCircuit, paulis: str) -> float:
    """Quasi-expectation with measurement branches weighted by their Born probabilities."""
    total = 0.0
    for sign, psi in _branches(circuit):
        total += sign * pauli_expectation(psi, paulis)
    return total


def fragment_sample(circuit: FragmentCircuit, paulis: str, shots: int, rng: np.random.Generator) -> Estimate:
    """Shot estimate; each shot picks a measurement branch and a final outcome jointly."""
    n = circuit.num_qubits
    support = [q for q, c in enumerate(paulis) if c != "I"]
    parity = parity_eigenvalues(n, support)
    probs, values = [], []
    for sign, psi in _branches(circuit):
        rotated = rotate_to_z_basis(psi, paulis)
        probs.append(np.abs(rotated) ** 2)
        values.append(sign * parity)
    return estimate_from_distribution(np.concatenate(probs), np.concatenate(values), shots, rng)


@dataclass(frozen=True)
class FragmentResult:
    plan_id: str
    variant: int
    fragment: int
    backend: str
    mode: str
    values: tuple[float, ...]
    stderrs: tuple[float, ...]
    shots: int = 0

    def to_bytes(self) -> bytes:
        d = {
            "format": "hqflow.result",
            "version": 1,
            "plan": self.plan_id,
            "variant": self.variant,
            "fragment": self.fragment,
            "backend": self.backend,
            "mode": self.mode,
            "values": [float(v).hex() for v in self.values],
            "stderrs": [float(v).hex() for v in self.stderrs],
            "shots": self.shots,
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FragmentResult":
        d = json.loads(data)
        return cls(
            d["plan"],
            d["variant"],
            d["fragment"],
            d["backend"],
            d["mode"],
            tuple(float.fromhex(v) for v in d["values"]),
            tuple(float.fromhex(v) for v in d["stderrs"]),
            d["shots"],
        )


def fragment_seed(seed: int, plan_id: str, variant: int, fragment: int) -> np.random.SeedSequence:
    salt = int.from_bytes(plan_id.encode()[:16].ljust(16, b"\0"), "little")
    return np.random.SeedSequence([seed, salt, variant, fragment])


def execute_fragment(
    variant: SubcircuitVariant,
    fragment: Fragment,
    observable: Observable,
    mode: ExecutionMode | str = ExecutionMode.EXACT,
    *,
    seed: int = 0,
    shots: int = 4096,
    role: BackendRole | None = None,
) -> FragmentResult:
    role = fragment.backend if role is None else BackendRole(role)
    if fragment.circuit.num_qubits > BACKEND_CAPACITY[role]:
        raise CapacityExceeded(
            f"fragment {fragment.fragment_id} has {fragment.circuit.num_qubits} qubits, "
            f"{role} accepts {BACKEND_CAPACITY[role]}"
        )
    mode = ExecutionMode(mode)
    pieces = restrict_observable(observable, fragment.qubits)
    if mode is ExecutionMode.EXACT:
        values = tuple(fragment_expectation(fragment.circuit, p) for p in pieces)
        stderrs = tuple(0.0 for _ in pieces)
        used = 0
    else:
        rng = np.random.default_rng(fragment_seed(seed, variant.plan_id, variant.index, fragment.fragment_id))
        ests = [fragment_sample(fragment.circuit, p, shots, rng) for p in pieces]
        values = tuple(e.value for e in ests)
        stderrs = tuple(e.stderr for e in ests)
        used = shots
    return FragmentResult(
        variant.plan_id, variant.index, fragment.fragment_id, role.value, mode.value, values, stderrs, used
    )


def execute_variant(
    variant: SubcircuitVariant,
    backend_role: BackendRole | str | None,
    observable: Observable,
    mode: ExecutionMode | str = ExecutionMode.EXACT,
    *,
    seed: int = 0,
    shots: int = 4096,
) -> dict[int, FragmentResult]:
    """Run the fragments of ``variant`` assigned to ``backend_role`` (all when None).

    Fragments routed elsewhere are skipped, so a role with nothing assigned
    returns an empty mapping.
    """
    role = None if backend_role is None else BackendRole(backend_role)
    out = {}
    for frag in variant.fragments:
        if role is not None and frag.backend is not role:
            continue
        out[frag.fragment_id] = execute_fragment(
            variant, frag, observable, mode, seed=seed, shots=shots, role=frag.backend
        )
    return out


@dataclass(frozen=True)
class ReconstructionResult:
    value: float
    contributions: dict[int, float] = field(repr=False)
    mode: str
    uncertainty: float
    num_variants: int


def reconstruct(
    variants: Sequence[SubcircuitVariant],
    results: Mapping[tuple[int, int], FragmentResult],
    observable: Observable,
) -> ReconstructionResult:
    """Sum of coefficient-weighted products of fragment expectations.

    ``results`` is keyed by ``(variant index, fragment id)``. Uncertainty is
    the propagated standard error treating fragment estimates as independent.
    """
    missing = [
        f"{v.plan_id}/{v.index}/{f.fragment_id}"
        for v in variants
        for f in v.fragments
        if (v.index, f.fragment_id) not in results
    ]
    if missing:
        raise MissingArtifact(missing)
    coeffs = [t.coefficient for t in observable.terms]
    contributions: dict[int, float] = {}
    variance = 0.0
    sampled = False
    for v in variants:
        rs = [results[(v.index, f.fragment_id)] for f in v.fragments]
        sampled = sampled or any(r.mode == ExecutionMode.SAMPLED.value for r in rs)
        contrib = 0.0
        var_v = 0.0
        for t, c in enumerate(coeffs):
            prod = 1.0
            second = 1.0
            for r in rs:
                prod *= r.values[t]
                second *= r.values[t] ** 2 + r.stderrs[t] ** 2
            contrib += c * (v.coefficient * prod)
            if any(r.stderrs[t] for r in rs):
                var_v += c**2 * max(second - prod**2, 0.0)
        contributions[v.index] = contrib
        variance += v.coefficient**2 * var_v
    value = sum(contributions[v.index] for v in variants)
    mode = ExecutionMode.SAMPLED if sampled else ExecutionMode.EXACT
    return ReconstructionResult(value, contributions, mode.value, math.sqrt(variance), len(variants))


def run_cutting(
    plan: CutPlan,
    observable: Observable,
    mode: ExecutionMode | str = ExecutionMode.EXACT,
    *,
    seed: int = 0,
    shots: int = 4096,
    policy: BackendPolicy = select_backend,
) -> ReconstructionResult:
    """In-process pipeline: generate, execute every fragment, reconstruct."""
    variants = generate_variants(plan, policy)
    results: dict[tuple[int, int], FragmentResult] = {}
    for v in variants:
        for fid, r in execute_variant(v, None, observable, mode, seed=seed, shots=shots).items():
            results[(v.index, fid)] = r
    return reconstruct(variants, results, observable)


def variants_in(variants: Iterable[SubcircuitVariant], role: BackendRole) -> list[int]:
    return [v.index for v in variants if any(f.backend is role for f in v.fragments)]
