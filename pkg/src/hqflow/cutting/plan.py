"""Cut planning: choose entangling gates to cut so every fragment fits a qubit budget."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

from ..quantum import Circuit


class Infeasible(Exception):
    pass


class InvalidPlan(Exception):
    pass


class VacuousCutWarning(UserWarning):
    pass


def fragment_partition(circuit: Circuit, cuts: frozenset[int] | set[int] | tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    """Connected components of the qubit-interaction graph once ``cuts`` are removed.

    Components are returned as sorted qubit tuples ordered by their smallest qubit.
    """
    parent = list(range(circuit.num_qubits))

    def find(q: int) -> int:
        while parent[q] != q:
            parent[q] = parent[parent[q]]
            q = parent[q]
        return q

    cut_set = set(cuts)
    for i, g in enumerate(circuit.gates):
        if g.is_entangling and i not in cut_set:
            ra, rb = find(g.qubits[0]), find(g.qubits[1])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for q in range(circuit.num_qubits):
        groups.setdefault(find(q), []).append(q)
    return tuple(sorted((tuple(v) for v in groups.values()), key=lambda f: f[0]))


@dataclass(frozen=True)
class CutPlan:
    circuit: Circuit
    cuts: tuple[int, ...]
    fragments: tuple[tuple[int, ...], ...]
    plan_id: str = "plan"

    @classmethod
    def from_cuts(cls, circuit: Circuit, cuts, plan_id: str = "plan") -> "CutPlan":
        cuts = tuple(sorted(set(int(c) for c in cuts)))
        for c in cuts:
            if c < 0 or c >= len(circuit.gates) or not circuit.gates[c].is_entangling:
                raise InvalidPlan(f"gate index {c} is not an entangling gate")
        fragments = fragment_partition(circuit, cuts)
        if cuts and len(fragments) < 2:
            warnings.warn(
                f"cutting gates {list(cuts)} leaves a single fragment", VacuousCutWarning, stacklevel=2
            )
        return cls(circuit, cuts, fragments, plan_id)

    @property
    def num_cuts(self) -> int:
        return len(self.cuts)

    def fragment_of(self, qubit: int) -> int:
        for i, f in enumerate(self.fragments):
            if qubit in f:
                return i
        raise KeyError(qubit)


def _largest(circuit: Circuit, cuts) -> int:
    return max(len(f) for f in fragment_partition(circuit, cuts))


def _greedy_cuts(circuit: Circuit, bound: int) -> set[int]:
    cuts: set[int] = set()
    while True:
        oversized = [f for f in fragment_partition(circuit, cuts) if len(f) > bound]
        if not oversized:
            break
        comp = set(oversized[0])
        # grow a block of at most `bound` qubits by BFS from the lowest qubit
        adj: dict[int, set[int]] = {q: set() for q in comp}
        for i, g in enumerate(circuit.gates):
            if g.is_entangling and i not in cuts and g.qubits[0] in comp:
                a, b = g.qubits
                adj[a].add(b)
                adj[b].add(a)
        start = min(comp)
        block, frontier = [start], [start]
        while frontier and len(block) < bound:
            nxt = []
            for q in frontier:
                for r in sorted(adj[q]):
                    if r not in block and len(block) < bound:
                        block.append(r)
                        nxt.append(r)
            frontier = nxt
        inside = set(block)
        for i, g in enumerate(circuit.gates):
            if g.is_entangling and i not in cuts:
                a, b = g.qubits
                if (a in inside) != (b in inside) and a in comp:
                    cuts.add(i)
    # drop cuts that turned out unnecessary
    for c in sorted(cuts, reverse=True):
        trial = cuts - {c}
        if _largest(circuit, trial) <= bound:
            cuts = trial
    return cuts


def plan_cuts(
    circuit: Circuit,
    max_fragment_qubits: int,
    *,
    max_cuts: int = 4,
    search_cap: int = 200_000,
    plan_id: str = "plan",
) -> CutPlan:
    """Fewest cuts such that every fragment has at most ``max_fragment_qubits`` qubits.

    Cut sets are searched exhaustively in increasing size, each size in
    lexicographic order of gate indices, so the first hit is minimal and
    breaks ties towards the lowest indices. Once more than ``search_cap``
    subsets would have to be examined the search falls back to a greedy
    block partition.
    """
    if max_fragment_qubits < 1:
        raise ValueError("max_fragment_qubits must be >= 1")
    candidates = circuit.entangling_indices()
    examined = 0
    for k in range(0, min(max_cuts, len(candidates)) + 1):
        n_subsets = math.comb(len(candidates), k)
        if examined + n_subsets > search_cap:
            cuts = _greedy_cuts(circuit, max_fragment_qubits)
            if len(cuts) > max_cuts:
                raise Infeasible(
                    f"greedy plan needs {len(cuts)} cuts, above the limit of {max_cuts}"
                )
            return CutPlan.from_cuts(circuit, cuts, plan_id)
        for subset in itertools.combinations(candidates, k):
            if _largest(circuit, subset) <= max_fragment_qubits:
                return CutPlan.from_cuts(circuit, subset, plan_id)
        examined += n_subsets
    raise Infeasible(
        f"no set of at most {max_cuts} cuts keeps fragments within {max_fragment_qubits} qubits"
    )
