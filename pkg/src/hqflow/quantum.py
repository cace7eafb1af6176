"""Statevector kernel: circuit IR, exact simulation, Pauli expectations and shot sampling.

Basis ordering: qubit 0 is the least-significant bit of the amplitude index.
Pauli strings are written with character ``i`` acting on qubit ``i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 24
CIRCUIT_FORMAT = "hqflow.circuit"
CIRCUIT_FORMAT_VERSION = 1

ONE_QUBIT_FIXED = {"H", "X", "Z"}
ONE_QUBIT_ROTATIONS = {"RX", "RY", "RZ"}
TWO_QUBIT = {"CZ", "CNOT"}
GATE_KINDS = ONE_QUBIT_FIXED | ONE_QUBIT_ROTATIONS | TWO_QUBIT | {"U1Q"}

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_FIXED_MATRICES = {
    "H": np.array([[_SQRT_HALF, _SQRT_HALF], [_SQRT_HALF, -_SQRT_HALF]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class QuantumError(Exception):
    pass


class CapacityExceeded(QuantumError):
    pass


class DimensionMismatch(QuantumError):
    pass


class InvalidCircuit(QuantumError):
    pass


def _rotation(kind: str, theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[complex(c, -s), 0], [0, complex(c, s)]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    # row-major 2x2 entries, only for U1Q
    matrix: tuple[complex, ...] | None = None

    def __post_init__(self) -> None:
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if kind not in GATE_KINDS:
            raise InvalidCircuit(f"unknown gate kind {self.kind!r}")
        arity = 2 if kind in TWO_QUBIT else 1
        if len(self.qubits) != arity:
            raise InvalidCircuit(f"{kind} acts on {arity} qubit(s), got {self.qubits}")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise InvalidCircuit(f"{kind} needs distinct qubits, got {self.qubits}")
        n_params = 1 if kind in ONE_QUBIT_ROTATIONS else 0
        if len(self.params) != n_params:
            raise InvalidCircuit(f"{kind} takes {n_params} angle(s), got {len(self.params)}")
        if kind == "U1Q":
            if self.matrix is None or len(self.matrix) != 4:
                raise InvalidCircuit("U1Q needs a 2x2 matrix")
            u = np.array(self.matrix, dtype=complex).reshape(2, 2)
            if not np.allclose(u @ u.conj().T, np.eye(2), atol=1e-12, rtol=0):
                raise InvalidCircuit("U1Q matrix is not unitary within 1e-12")
            object.__setattr__(self, "matrix", tuple(complex(x) for x in self.matrix))
        elif self.matrix is not None:
            raise InvalidCircuit(f"{kind} does not take a matrix")

    @classmethod
    def u1q(cls, qubit: int, matrix: np.ndarray | Sequence[Sequence[complex]]) -> "Gate":
        return cls("U1Q", (qubit,), matrix=tuple(np.asarray(matrix, dtype=complex).ravel()))

    @property
    def is_entangling(self) -> bool:
        return self.kind in TWO_QUBIT

    def unitary(self) -> np.ndarray:
        """Matrix of a single-qubit gate."""
        if self.kind in _FIXED_MATRICES:
            return _FIXED_MATRICES[self.kind]
        if self.kind in ONE_QUBIT_ROTATIONS:
            return _rotation(self.kind, self.params[0])
        if self.kind == "U1Q":
            return np.array(self.matrix, dtype=complex).reshape(2, 2)
        raise InvalidCircuit(f"{self.kind} is not a single-qubit gate")

    def remap(self, mapping: dict[int, int]) -> "Gate":
        return Gate(self.kind, tuple(mapping[q] for q in self.qubits), self.params, self.matrix)


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...] = ()

    def __post_init__(self) -> None:
        if self.num_qubits < 1:
            raise InvalidCircuit("a circuit needs at least one qubit")
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if any(q < 0 or q >= self.num_qubits for q in g.qubits):
                raise InvalidCircuit(f"{g.kind}{g.qubits} out of range for {self.num_qubits} qubits")

    def __len__(self) -> int:
        return len(self.gates)

    def entangling_indices(self) -> list[int]:
        return [i for i, g in enumerate(self.gates) if g.is_entangling]


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    paulis: str

    def __post_init__(self) -> None:
        p = self.paulis.upper()
        if set(p) - set("IXYZ"):
            raise ValueError(f"invalid Pauli string {self.paulis!r}")
        if not math.isfinite(self.coefficient):
            raise ValueError("Pauli coefficient must be finite")
        object.__setattr__(self, "paulis", p)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.paulis) if c != "I")


@dataclass(frozen=True)
class Observable:
    terms: tuple[PauliTerm, ...]
    num_qubits: int = field(init=False)

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("observable needs at least one term")
        widths = {len(t.paulis) for t in terms}
        if len(widths) != 1:
            raise ValueError("all Pauli strings must have the same length")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "num_qubits", widths.pop())

    @classmethod
    def pauli(cls, paulis: str, coefficient: float = 1.0) -> "Observable":
        return cls((PauliTerm(coefficient, paulis),))

    @classmethod
    def z_string(cls, n: int) -> "Observable":
        return cls.pauli("Z" * n)

    @classmethod
    def parse(cls, text: str) -> "Observable":
        """Parse ``"0.5*ZZI + -1*XXI"`` or a bare ``"ZZZ"``."""
        terms = []
        for chunk in text.split("+"):
            chunk = chunk.strip()
            if "*" in chunk:
                coeff, paulis = chunk.split("*", 1)
                terms.append(PauliTerm(float(coeff), paulis.strip()))
            else:
                terms.append(PauliTerm(1.0, chunk))
        return cls(tuple(terms))

    def __str__(self) -> str:
        return " + ".join(f"{t.coefficient!r}*{t.paulis}" for t in self.terms)


def zero_state(n: int) -> np.ndarray:
    if n > MAX_QUBITS:
        raise CapacityExceeded(f"{n} qubits exceeds the simulator cap of {MAX_QUBITS}")
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    return psi


def _axis(q: int, n: int) -> int:
    return n - 1 - q


def apply_matrix_1q(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    t = psi.reshape((2,) * n)
    ax = _axis(q, n)
    t = np.moveaxis(np.tensordot(u, t, axes=([1], [ax])), 0, ax)
    return np.ascontiguousarray(t).reshape(-1)


def apply_gate(psi: np.ndarray, gate: Gate, n: int) -> np.ndarray:
    """Return the state after ``gate``; the input array is not modified."""
    if gate.kind == "CZ":
        out = psi.copy()
        t = out.reshape((2,) * n)
        idx = [slice(None)] * n
        idx[_axis(gate.qubits[0], n)] = 1
        idx[_axis(gate.qubits[1], n)] = 1
        t[tuple(idx)] *= -1
        return out
    if gate.kind == "CNOT":
        out = psi.copy()
        t = out.reshape((2,) * n)
        ctrl, tgt = gate.qubits
        idx = [slice(None)] * n
        idx[_axis(ctrl, n)] = 1
        sub = t[tuple(idx)]
        tgt_ax = _axis(tgt, n) - (1 if _axis(tgt, n) > _axis(ctrl, n) else 0)
        t[tuple(idx)] = np.flip(sub, axis=tgt_ax)
        return out
    return apply_matrix_1q(psi, gate.unitary(), gate.qubits[0], n)


def simulate(circuit: Circuit, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Exact final state of ``circuit`` started from |0...0>."""
    n = circuit.num_qubits
    if n > max_qubits:
        raise CapacityExceeded(f"{n} qubits exceeds the simulator cap of {max_qubits}")
    psi = zero_state(n)
    for g in circuit.gates:
        psi = apply_gate(psi, g, n)
    return psi


def _pauli_masks(paulis: str) -> tuple[int, int, int]:
    xmask = zmask = 0
    n_y = 0
    for q, c in enumerate(paulis):
        if c in "XY":
            xmask |= 1 << q
        if c in "ZY":
            zmask |= 1 << q
        if c == "Y":
            n_y += 1
    return xmask, zmask, n_y


def pauli_expectation(psi: np.ndarray, paulis: str) -> float:
    """<psi|P|psi> for one Pauli string (no coefficient). ``psi`` may be unnormalised."""
    n = len(paulis)
    if psi.shape != (1 << n,):
        raise DimensionMismatch(f"state has {psi.size} amplitudes, Pauli string spans {n} qubits")
    xmask, zmask, n_y = _pauli_masks(paulis)
    k = np.arange(psi.size, dtype=np.int64)
    signs = 1 - 2 * (np.bitwise_count(k & zmask) & 1).astype(np.int64)
    val = np.vdot(psi[k ^ xmask], signs * psi) * (1j ** n_y)
    return float(val.real)


def expectation(psi: np.ndarray, observable: Observable) -> float:
    n = observable.num_qubits
    if psi.shape != (1 << n,):
        raise DimensionMismatch(
            f"state has {psi.size} amplitudes, observable spans {n} qubits"
        )
    total = 0.0
    for term in observable.terms:
        total += term.coefficient * pauli_expectation(psi, term.paulis)
    return total


_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)


def rotate_to_z_basis(psi: np.ndarray, paulis: str) -> np.ndarray:
    """Map the Pauli eigenbasis onto the computational basis, qubit by qubit."""
    n = len(paulis)
    for q, c in enumerate(paulis):
        if c == "X":
            psi = apply_matrix_1q(psi, _FIXED_MATRICES["H"], q, n)
        elif c == "Y":
            psi = apply_matrix_1q(psi, _FIXED_MATRICES["H"] @ _SDG, q, n)
    return psi


def parity_eigenvalues(n: int, support: Iterable[int]) -> np.ndarray:
    mask = 0
    for q in support:
        mask |= 1 << q
    k = np.arange(1 << n, dtype=np.int64)
    return 1.0 - 2.0 * (np.bitwise_count(k & mask) & 1)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    shots: int


def estimate_from_distribution(
    probs: np.ndarray, outcome_values: np.ndarray, shots: int, rng: np.random.Generator
) -> Estimate:
    """Draw ``shots`` outcomes and average their values.

    ``probs`` must sum to 1 up to rounding; tiny negative/denormal entries are clipped.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.where(probs < 1e-15, 0.0, probs)
    p = p / p.sum()
    counts = rng.multinomial(shots, p)
    mean = float(np.dot(counts, outcome_values) / shots)
    if shots > 1:
        sq = float(np.dot(counts, (outcome_values - mean) ** 2))
        std = math.sqrt(max(sq, 0.0) / (shots - 1))
    else:
        std = 0.0
    return Estimate(mean, std / math.sqrt(shots), shots)


def sample_shots(psi: np.ndarray, observable: Observable, shots: int, seed: int | np.random.SeedSequence) -> Estimate:
    """Shot-based estimate of <psi|O|psi>; each Pauli term is measured with ``shots`` shots."""
    n = observable.num_qubits
    if psi.shape != (1 << n,):
        raise DimensionMismatch(f"state has {psi.size} amplitudes, observable spans {n} qubits")
    rng = np.random.default_rng(seed)
    value = 0.0
    var = 0.0
    for term in observable.terms:
        rotated = rotate_to_z_basis(psi, term.paulis)
        probs = np.abs(rotated) ** 2
        est = estimate_from_distribution(probs, parity_eigenvalues(n, term.support), shots, rng)
        value += term.coefficient * est.value
        var += (term.coefficient * est.stderr) ** 2
    return Estimate(value, math.sqrt(var), shots)


# -- serialization -----------------------------------------------------------------


def gate_to_dict(g: Gate) -> dict:
    d: dict = {"kind": g.kind, "qubits": list(g.qubits)}
    if g.params:
        d["params"] = list(g.params)
    if g.matrix is not None:
        d["matrix"] = [[z.real, z.imag] for z in g.matrix]
    return d


def gate_from_dict(d: dict) -> Gate:
    matrix = None
    if "matrix" in d:
        matrix = tuple(complex(re, im) for re, im in d["matrix"])
    return Gate(d["kind"], tuple(d["qubits"]), tuple(d.get("params", ())), matrix)


def circuit_to_dict(c: Circuit) -> dict:
    return {
        "format": CIRCUIT_FORMAT,
        "version": CIRCUIT_FORMAT_VERSION,
        "num_qubits": c.num_qubits,
        "gates": [gate_to_dict(g) for g in c.gates],
    }


def circuit_from_dict(d: dict) -> Circuit:
    if d.get("format") != CIRCUIT_FORMAT:
        raise InvalidCircuit(f"not a circuit document: format={d.get('format')!r}")
    if d.get("version") != CIRCUIT_FORMAT_VERSION:
        raise InvalidCircuit(f"unsupported circuit format version {d.get('version')!r}")
    return Circuit(int(d["num_qubits"]), tuple(gate_from_dict(g) for g in d["gates"]))


def dumps_circuit(c: Circuit) -> bytes:
    return json.dumps(circuit_to_dict(c), sort_keys=True, separators=(",", ":")).encode()


def loads_circuit(data: bytes) -> Circuit:
    return circuit_from_dict(json.loads(data))


def hea_circuit(num_qubits: int, layers: int, seed: int) -> Circuit:
    """Hardware-efficient ansatz used by the reference workload.

    Each layer applies RY(a) then RZ(b) on every qubit, followed by a linear
    chain CZ(0,1), CZ(1,2), ..., CZ(n-2,n-1). A final RY layer closes the circuit.
    Angles are drawn uniformly from [0, 2*pi) with ``numpy.random.default_rng(seed)``
    in gate order.
    """
    rng = np.random.default_rng(seed)
    gates: list[Gate] = []
    for _ in range(layers):
        for q in range(num_qubits):
            gates.append(Gate("RY", (q,), (rng.uniform(0, 2 * math.pi),)))
            gates.append(Gate("RZ", (q,), (rng.uniform(0, 2 * math.pi),)))
        for q in range(num_qubits - 1):
            gates.append(Gate("CZ", (q, q + 1)))
    for q in range(num_qubits):
        gates.append(Gate("RY", (q,), (rng.uniform(0, 2 * math.pi),)))
    return Circuit(num_qubits, tuple(gates))
