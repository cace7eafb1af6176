"""Quasiprobability decompositions of CZ and CNOT into local operations.

Local operations are short op-name sequences applied to one qubit:
``"S"``, ``"SDG"``, ``"Z"``, ``"X"``, ``"H"`` (unitaries) and ``"MZ"``, a
computational-basis measurement whose outcome sign (+1 for 0, -1 for 1)
multiplies the branch weight.

Both decompositions come from

    e^{i t A(x)B} rho e^{-i t A(x)B}
        = cos^2 t rho + sin^2 t (AB) rho (AB) + cos t sin t * i[AB, rho]

with ``i[AB, rho] = M_A (x) (R+_B - R-_B) + (R+_A - R-_A) (x) M_B``, where
``M`` is the signed measurement channel and ``R+-`` conjugation by
``exp(+-i pi/4 P)``. CZ is that rotation at t = pi/4 followed by S on both
qubits (up to global phase); CNOT conjugates the target side by H.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..quantum import Gate


class UnsupportedGate(Exception):
    pass


class DecompositionError(Exception):
    pass


LOCAL_UNITARIES = {
    "S": np.diag([1, 1j]).astype(complex),
    "SDG": np.diag([1, -1j]).astype(complex),
    "Z": np.diag([1, -1]).astype(complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
}
MEASURE = "MZ"


@dataclass(frozen=True)
class QPDTerm:
    coefficient: float
    op_a: tuple[str, ...]
    op_b: tuple[str, ...]


_CZ_TERMS = (
    QPDTerm(0.5, ("S",), ("S",)),
    QPDTerm(0.5, ("SDG",), ("SDG",)),
    QPDTerm(0.5, (MEASURE,), ()),
    QPDTerm(-0.5, (MEASURE,), ("Z",)),
    QPDTerm(0.5, (), (MEASURE,)),
    QPDTerm(-0.5, ("Z",), (MEASURE,)),
)


def _conjugate_target(term: QPDTerm) -> QPDTerm:
    b = term.op_b
    if b == ():
        new_b: tuple[str, ...] = ()
    elif b == ("Z",):
        new_b = ("X",)
    else:
        new_b = ("H", *b, "H")
    return QPDTerm(term.coefficient, term.op_a, new_b)


_CNOT_TERMS = tuple(_conjugate_target(t) for t in _CZ_TERMS)

_TARGET_UNITARIES = {
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    # index = a + 2b with a the control (least significant)
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex
    ),
}
_TERMS = {"CZ": _CZ_TERMS, "CNOT": _CNOT_TERMS}


def local_instrument(ops: tuple[str, ...]) -> list[tuple[float, np.ndarray]]:
    """Signed Kraus branches ``(sign, K)`` realising an op sequence on one qubit."""
    branches = [(1.0, np.eye(2, dtype=complex))]
    p0 = np.diag([1, 0]).astype(complex)
    p1 = np.diag([0, 1]).astype(complex)
    for op in ops:
        if op == MEASURE:
            branches = [b for s, k in branches for b in ((s, p0 @ k), (-s, p1 @ k))]
        else:
            u = LOCAL_UNITARIES[op]
            branches = [(s, u @ k) for s, k in branches]
    return branches


def _term_channel(term: QPDTerm, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for (sa, ka), (sb, kb) in itertools.product(
        local_instrument(term.op_a), local_instrument(term.op_b)
    ):
        k = np.kron(kb, ka)
        out += sa * sb * (k @ rho @ k.conj().T)
    return out


def channel_error(kind: str, terms: tuple[QPDTerm, ...] | None = None) -> float:
    """Max deviation between the QPD and the gate channel over the 16 Pauli inputs."""
    u = _TARGET_UNITARIES[kind]
    terms = _TERMS[kind] if terms is None else terms
    paulis = [np.eye(2), LOCAL_UNITARIES["X"], np.array([[0, -1j], [1j, 0]]), LOCAL_UNITARIES["Z"]]
    worst = 0.0
    for pa, pb in itertools.product(paulis, repeat=2):
        rho = np.kron(pb, pa).astype(complex)
        target = u @ rho @ u.conj().T
        approx = sum(t.coefficient * _term_channel(t, rho) for t in terms)
        worst = max(worst, float(np.max(np.abs(approx - target))))
    return worst


@lru_cache(maxsize=None)
def decompose_gate(kind: str) -> tuple[QPDTerm, ...]:
    kind = kind.upper()
    if kind not in _TERMS:
        raise UnsupportedGate(f"no quasiprobability decomposition for {kind}")
    err = channel_error(kind)
    if err > 1e-9:
        raise DecompositionError(f"{kind} decomposition fails channel check (error {err:.3g})")
    return _TERMS[kind]


def gamma(kind: str) -> float:
    return float(sum(abs(t.coefficient) for t in decompose_gate(kind)))


def local_gates(ops: tuple[str, ...], qubit: int) -> list[Gate | str]:
    """Lower an op sequence onto ``qubit``: unitaries become U1Q gates, measurements stay ``"MZ"``."""
    out: list[Gate | str] = []
    for op in ops:
        if op == MEASURE:
            out.append(MEASURE)
        else:
            out.append(Gate.u1q(qubit, LOCAL_UNITARIES[op]))
    return out
