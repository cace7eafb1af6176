"""Simulated heterogeneous cluster: labelled nodes, exclusive devices, claims and a virtual clock."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import yaml

from .resources import (
    AttributePredicate,
    QuantityError,
    ResourceRequest,
    matches_all,
    parse_quantity,
)

RESOURCE_TYPE = "resource_type"
NS_PER_SECOND = 1_000_000_000
DEFAULT_SPEED = {"cpu": 1.0, "gpu": 0.1, "qpu": 1.0}
DEFAULT_QPU_DELAY_S = 2.0


class ClusterError(Exception):
    pass


class InsufficientCapacity(ClusterError):
    pass


class NoMatchingDevice(ClusterError):
    pass


class DoubleRelease(ClusterError):
    pass


class ClusterConfigError(ClusterError):
    pass


class VirtualClock:
    """Nanosecond clock that only moves forward."""

    def __init__(self, now: int = 0):
        self._now = int(now)

    @property
    def now(self) -> int:
        return self._now

    @property
    def seconds(self) -> float:
        return self._now / NS_PER_SECOND

    def advance_to(self, t: int) -> None:
        if t < self._now:
            raise ValueError(f"clock cannot move backwards ({t} < {self._now})")
        self._now = int(t)

    def advance(self, dt: int) -> None:
        self.advance_to(self._now + dt)


@dataclass
class Device:
    id: str
    class_name: str
    attributes: dict[str, Any] = field(default_factory=dict)
    allocated_to: str | None = None

    @property
    def free(self) -> bool:
        return self.allocated_to is None


@dataclass(frozen=True)
class DeviceClass:
    name: str
    selector: tuple[AttributePredicate, ...] = ()


@dataclass
class Node:
    name: str
    labels: dict[str, str]
    capacity: dict[str, int]
    allocatable: dict[str, int] = field(default_factory=dict)
    devices: list[Device] = field(default_factory=list)
    speed_factor: float = 1.0
    queue_delay_ns: int = 0

    def __post_init__(self) -> None:
        self.devices.sort(key=lambda d: d.id)
        counts: dict[str, int] = {}
        for d in self.devices:
            counts[d.class_name] = counts.get(d.class_name, 0) + 1
        for cls, n in counts.items():
            if self.capacity.setdefault(cls, n) != n:
                raise ClusterConfigError(
                    f"node {self.name}: capacity for {cls} is {self.capacity[cls]} but {n} devices are listed"
                )
        if not self.allocatable:
            self.allocatable = dict(self.capacity)
        for k, v in self.allocatable.items():
            if v > self.capacity.get(k, 0):
                raise ClusterConfigError(f"node {self.name}: allocatable {k} exceeds capacity")

    @property
    def role(self) -> str | None:
        return self.labels.get(RESOURCE_TYPE)


@dataclass(frozen=True)
class Binding:
    id: int
    task_id: str
    node: str
    resources: tuple[tuple[str, int], ...]
    devices: tuple[str, ...]


def match_nodes(selector: Mapping[str, str], pool: Iterable[Node]) -> list[Node]:
    """Nodes whose labels include every selector entry."""
    return [n for n in pool if all(n.labels.get(k) == v for k, v in selector.items())]


class Cluster:
    """Node pool plus the ledger of active bindings.

    All mutations go through :meth:`bind_task` and :meth:`release`.
    """

    def __init__(self, nodes: Iterable[Node], device_classes: Iterable[DeviceClass] = ()):
        self.nodes: dict[str, Node] = {}
        for n in sorted(nodes, key=lambda n: n.name):
            if n.name in self.nodes:
                raise ClusterConfigError(f"duplicate node name {n.name!r}")
            self.nodes[n.name] = n
        self.device_classes = {c.name: c for c in device_classes}
        self.bindings: dict[int, Binding] = {}
        self._next_binding = 0

    def pool(self) -> list[Node]:
        return list(self.nodes.values())

    def match_nodes(self, selector: Mapping[str, str]) -> list[Node]:
        return match_nodes(selector, self.pool())

    def _device_ok(self, dev: Device, cls_name: str, constraints) -> bool:
        if dev.class_name != cls_name:
            return False
        cls = self.device_classes.get(cls_name)
        if cls is not None and not matches_all(cls.selector, dev.attributes):
            return False
        return matches_all(constraints, dev.attributes)

    def _plan(self, node: Node, request: ResourceRequest) -> tuple[dict[str, int], list[str]]:
        """Resources and device ids a binding would take; raises when it cannot fit."""
        taken: list[str] = []
        charge = request.charge()
        claim_classes = set()
        for claim in request.device_claims:
            claim_classes.add(claim.class_name)
            eligible = [d for d in node.devices if self._device_ok(d, claim.class_name, claim.constraints)]
            if claim.count and not eligible:
                raise NoMatchingDevice(f"node {node.name}: no {claim.class_name} device satisfies the claim")
            free = [d.id for d in eligible if d.free and d.id not in taken]
            if len(free) < claim.count:
                raise InsufficientCapacity(f"node {node.name}: {claim.class_name} devices are busy")
            taken += free[: claim.count]
        device_classes = {d.class_name for d in node.devices}
        for res, amount in request.requests.items():
            if res in device_classes and res not in claim_classes and amount:
                free = [d.id for d in node.devices if d.class_name == res and d.free and d.id not in taken]
                if len(free) < amount:
                    raise InsufficientCapacity(f"node {node.name}: {res} devices are busy")
                taken += free[:amount]
        for res, amount in charge.items():
            if node.allocatable.get(res, 0) < amount:
                raise InsufficientCapacity(
                    f"node {node.name}: needs {amount} {res}, {node.allocatable.get(res, 0)} free"
                )
        return charge, taken

    def fits(self, node: Node, request: ResourceRequest) -> bool:
        try:
            self._plan(node, request)
        except (InsufficientCapacity, NoMatchingDevice):
            return False
        return True

    def bind_task(self, node: Node | str, request: ResourceRequest, task_id: str = "") -> Binding:
        node = self.nodes[node] if isinstance(node, str) else node
        charge, devices = self._plan(node, request)
        for res, amount in charge.items():
            node.allocatable[res] -= amount
        for dev in node.devices:
            if dev.id in devices:
                dev.allocated_to = task_id
        b = Binding(self._next_binding, task_id, node.name, tuple(sorted(charge.items())), tuple(devices))
        self._next_binding += 1
        self.bindings[b.id] = b
        return b

    def release(self, binding: Binding) -> None:
        if self.bindings.pop(binding.id, None) is None:
            raise DoubleRelease(f"binding {binding.id} for {binding.task_id!r} is not active")
        node = self.nodes[binding.node]
        for res, amount in binding.resources:
            node.allocatable[res] += amount
        for dev in node.devices:
            if dev.id in binding.devices:
                dev.allocated_to = None

    def first_fit(self, selector: Mapping[str, str], request: ResourceRequest) -> Node | None:
        for node in self.match_nodes(selector):
            if self.fits(node, request):
                return node
        return None

    def snapshot(self) -> dict[str, dict[str, int]]:
        return {name: dict(n.allocatable) for name, n in self.nodes.items()}

    def clone(self) -> "Cluster":
        return copy.deepcopy(self)


# -- configuration -------------------------------------------------------------------


def _predicates(items) -> tuple[AttributePredicate, ...]:
    return tuple(AttributePredicate(p["attribute"], p["operator"], p["value"]) for p in items or ())


def cluster_from_dict(doc: Mapping[str, Any]) -> Cluster:
    if doc.get("kind") != "Cluster":
        raise ClusterConfigError("cluster document must have kind: Cluster")
    spec = doc.get("spec") or {}
    allowed = {"speedFactors", "qpuQueueDelaySeconds", "deviceClasses", "nodes"}
    unknown = set(spec) - allowed
    if unknown:
        raise ClusterConfigError(f"unknown cluster fields: {sorted(unknown)}")
    speeds = {**DEFAULT_SPEED, **(spec.get("speedFactors") or {})}
    qpu_delay = float(spec.get("qpuQueueDelaySeconds", DEFAULT_QPU_DELAY_S))
    classes = [DeviceClass(c["name"], _predicates(c.get("selector"))) for c in spec.get("deviceClasses") or ()]
    nodes = []
    for nd in spec.get("nodes") or ():
        unknown = set(nd) - {"name", "labels", "capacity", "allocatable", "devices", "speedFactor", "queueDelaySeconds"}
        if unknown:
            raise ClusterConfigError(f"node {nd.get('name')!r}: unknown fields {sorted(unknown)}")
        labels = {str(k): str(v) for k, v in (nd.get("labels") or {}).items()}
        try:
            capacity = {k: parse_quantity(k, v) for k, v in (nd.get("capacity") or {}).items()}
            allocatable = {k: parse_quantity(k, v) for k, v in (nd.get("allocatable") or {}).items()}
        except QuantityError as exc:
            raise ClusterConfigError(f"node {nd.get('name')!r}: {exc}") from None
        devices = [
            Device(str(d["id"]), str(d["className"]), dict(d.get("attributes") or {}))
            for d in nd.get("devices") or ()
        ]
        role = labels.get(RESOURCE_TYPE)
        speed = float(nd.get("speedFactor", speeds.get(role, 1.0)))
        delay_s = float(nd.get("queueDelaySeconds", qpu_delay if role == "qpu" else 0.0))
        nodes.append(
            Node(
                str(nd["name"]),
                labels,
                capacity,
                allocatable,
                devices,
                speed_factor=speed,
                queue_delay_ns=round(delay_s * NS_PER_SECOND),
            )
        )
    return Cluster(nodes, classes)


def load_cluster(text: str | bytes) -> Cluster:
    return cluster_from_dict(yaml.safe_load(text))
