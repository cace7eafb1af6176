"""Queue-based admission control over ClusterQueue quotas and ResourceFlavors."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import yaml

from .cluster import Binding, Cluster
from .resources import QuantityError, ResourceRequest, parse_quantity

log = logging.getLogger(__name__)

KUEUE_API = "kueue.x-k8s.io/v1beta1"


class SchedulerError(Exception):
    pass


class UnknownQueue(SchedulerError):
    pass


class UnknownWorkload(SchedulerError):
    pass


class QueueConfigError(SchedulerError):
    pass


@dataclass(frozen=True)
class ResourceFlavor:
    name: str
    node_selector: dict[str, str] = field(default_factory=dict)


@dataclass
class ClusterQueue:
    name: str
    # flavor name -> resource -> nominal quota, flavors in declaration order
    quotas: dict[str, dict[str, int]]
    usage: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for f, res in self.quotas.items():
            self.usage.setdefault(f, {r: 0 for r in res})

    def remaining(self, flavor: str, resource: str) -> int:
        return self.quotas[flavor].get(resource, 0) - self.usage[flavor].get(resource, 0)

    def fits(self, flavor: str, charge: Mapping[str, int]) -> bool:
        q = self.quotas[flavor]
        return all(r in q and self.remaining(flavor, r) >= a for r, a in charge.items())


@dataclass(frozen=True)
class LocalQueue:
    namespace: str
    name: str
    cluster_queue: str


class WorkloadState(str, enum.Enum):
    PENDING = "Pending"
    ADMITTED = "Admitted"


@dataclass
class QueuedWorkload:
    task_id: str
    local_queue: str | None
    request: ResourceRequest
    node_selector: dict[str, str]
    enqueue_seq: int
    priority: int = 0
    state: WorkloadState = WorkloadState.PENDING
    flavor: str | None = None
    binding: Binding | None = None


@dataclass(frozen=True)
class Admission:
    task_id: str
    flavor: str | None
    binding: Binding


@dataclass(frozen=True)
class QueueStatus:
    name: str
    pending: int
    admitted: int


class Scheduler:
    """Single-threaded admission controller.

    Workloads without a queue label skip quota accounting and only need a
    node with capacity. Labelled workloads are admitted in (priority desc,
    enqueue order) as long as some flavor of their ClusterQueue has quota
    and a matching node has room; one that does not fit is skipped rather
    than blocking the queue.
    """

    def __init__(
        self,
        cluster: Cluster,
        flavors: Iterable[ResourceFlavor] = (),
        cluster_queues: Iterable[ClusterQueue] = (),
        local_queues: Iterable[LocalQueue] = (),
    ):
        self.cluster = cluster
        self.flavors = {f.name: f for f in flavors}
        self.cluster_queues = {c.name: c for c in cluster_queues}
        self.local_queues = {q.name: q for q in local_queues}
        for q in self.local_queues.values():
            if q.cluster_queue not in self.cluster_queues:
                raise QueueConfigError(f"LocalQueue {q.name} references unknown ClusterQueue {q.cluster_queue}")
        for cq in self.cluster_queues.values():
            for f in cq.quotas:
                if f not in self.flavors:
                    raise QueueConfigError(f"ClusterQueue {cq.name} references unknown flavor {f}")
        for f in self.flavors.values():
            if not cluster.match_nodes(f.node_selector):
                log.warning("ResourceFlavor %s matches no nodes", f.name)
        self.workloads: dict[str, QueuedWorkload] = {}
        self._seq = 0

    def enqueue(
        self,
        task_id: str,
        queue: str | None,
        request: ResourceRequest,
        node_selector: Mapping[str, str] | None = None,
        priority: int = 0,
        namespace: str | None = None,
    ) -> QueuedWorkload:
        if queue is not None:
            lq = self.local_queues.get(queue)
            if lq is None or (namespace is not None and lq.namespace != namespace):
                raise UnknownQueue(f"no LocalQueue named {queue!r}")
        if task_id in self.workloads:
            raise SchedulerError(f"workload {task_id!r} already enqueued")
        wl = QueuedWorkload(task_id, queue, request, dict(node_selector or {}), self._seq, priority)
        self._seq += 1
        self.workloads[task_id] = wl
        return wl

    def _candidate_flavors(self, wl: QueuedWorkload) -> list[tuple[str | None, dict[str, str]]]:
        if wl.local_queue is None:
            return [(None, wl.node_selector)]
        cq = self.cluster_queues[self.local_queues[wl.local_queue].cluster_queue]
        charge = wl.request.charge()
        out = []
        for fname in cq.quotas:
            fsel = self.flavors[fname].node_selector
            if any(k in wl.node_selector and wl.node_selector[k] != v for k, v in fsel.items()):
                continue
            if cq.fits(fname, charge):
                out.append((fname, {**wl.node_selector, **fsel}))
        return out

    def _try_admit(self, wl: QueuedWorkload) -> Admission | None:
        for flavor, selector in self._candidate_flavors(wl):
            node = self.cluster.first_fit(selector, wl.request)
            if node is None:
                continue
            binding = self.cluster.bind_task(node, wl.request, wl.task_id)
            if flavor is not None:
                cq = self._cq_of(wl)
                for r, a in wl.request.charge().items():
                    cq.usage[flavor][r] = cq.usage[flavor].get(r, 0) + a
            wl.state = WorkloadState.ADMITTED
            wl.flavor = flavor
            wl.binding = binding
            return Admission(wl.task_id, flavor, binding)
        return None

    def _cq_of(self, wl: QueuedWorkload) -> ClusterQueue:
        return self.cluster_queues[self.local_queues[wl.local_queue].cluster_queue]

    def pending(self) -> list[QueuedWorkload]:
        p = [w for w in self.workloads.values() if w.state is WorkloadState.PENDING]
        return sorted(p, key=lambda w: (-w.priority, w.enqueue_seq))

    def admit_cycle(self) -> list[Admission]:
        admissions = []
        # admitting only consumes capacity, so a shape that failed once fails for the rest of the cycle
        failed: set[tuple] = set()
        for wl in self.pending():
            shape = (wl.local_queue, id(wl.request), tuple(sorted(wl.node_selector.items())))
            if shape in failed:
                continue
            adm = self._try_admit(wl)
            if adm is not None:
                admissions.append(adm)
            else:
                failed.add(shape)
        return admissions

    def complete(self, task_id: str) -> list[Admission]:
        """Refund quota, release the node binding and run another admission cycle."""
        self.release(task_id)
        return self.admit_cycle()

    def release(self, task_id: str) -> None:
        """Refund quota and free the node binding of an admitted workload."""
        wl = self.workloads.get(task_id)
        if wl is None or wl.state is not WorkloadState.ADMITTED:
            raise UnknownWorkload(f"no admitted workload {task_id!r}")
        if wl.flavor is not None:
            cq = self._cq_of(wl)
            for r, a in wl.request.charge().items():
                cq.usage[wl.flavor][r] -= a
        self.cluster.release(wl.binding)
        del self.workloads[task_id]

    def withdraw(self, task_id: str) -> None:
        wl = self.workloads.get(task_id)
        if wl is None or wl.state is not WorkloadState.PENDING:
            raise UnknownWorkload(f"no pending workload {task_id!r}")
        del self.workloads[task_id]

    def status(self) -> list[QueueStatus]:
        counts = {name: [0, 0] for name in self.local_queues}
        for w in self.workloads.values():
            if w.local_queue is None:
                continue
            counts[w.local_queue][0 if w.state is WorkloadState.PENDING else 1] += 1
        return [QueueStatus(n, p, a) for n, (p, a) in counts.items()]

    def usage_snapshot(self) -> dict[str, dict[str, dict[str, int]]]:
        return {
            name: {f: dict(u) for f, u in cq.usage.items()} for name, cq in self.cluster_queues.items()
        }


# -- configuration -------------------------------------------------------------------


def _quota(resource: str, value: Any) -> int:
    try:
        return parse_quantity(resource, value)
    except QuantityError as exc:
        raise QueueConfigError(str(exc)) from None


def scheduler_from_documents(docs: Iterable[Mapping[str, Any]], cluster: Cluster) -> Scheduler:
    """Build a scheduler from Kueue-style documents (ResourceFlavor, ClusterQueue, LocalQueue)."""
    flavors, cqs, lqs = [], [], []
    for doc in docs:
        if not doc:
            continue
        kind = doc.get("kind")
        md = doc.get("metadata") or {}
        spec = doc.get("spec") or {}
        name = md.get("name")
        if not name:
            raise QueueConfigError(f"{kind} without metadata.name")
        if kind == "ResourceFlavor":
            flavors.append(ResourceFlavor(name, {str(k): str(v) for k, v in (spec.get("nodeSelector") or {}).items()}))
        elif kind == "ClusterQueue":
            quotas: dict[str, dict[str, int]] = {}
            for group in spec.get("resourceGroups") or ():
                covered = set(group.get("coveredResources") or ())
                for fl in group.get("flavors") or ():
                    q = quotas.setdefault(fl["name"], {})
                    for res in fl.get("resources") or ():
                        if covered and res["name"] not in covered:
                            raise QueueConfigError(f"{name}: {res['name']} is not in coveredResources")
                        q[res["name"]] = _quota(res["name"], res["nominalQuota"])
            cqs.append(ClusterQueue(name, quotas))
        elif kind == "LocalQueue":
            if "clusterQueue" not in spec:
                raise QueueConfigError(f"LocalQueue {name} needs spec.clusterQueue")
            lqs.append(LocalQueue(md.get("namespace", "default"), name, spec["clusterQueue"]))
        else:
            raise QueueConfigError(f"unsupported kind {kind!r}")
    return Scheduler(cluster, flavors, cqs, lqs)


def load_scheduler(text: str | bytes, cluster: Cluster) -> Scheduler:
    return scheduler_from_documents(yaml.safe_load_all(text), cluster)
