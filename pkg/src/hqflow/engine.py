"""Discrete-event workflow engine driving task graphs through the scheduler and cluster."""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .artifacts import ArtifactError, ArtifactStore, Mount, SecretStore, TaskFS
from .cluster import NS_PER_SECOND, Cluster, VirtualClock
from .scheduler import Admission, Scheduler, UnknownQueue
from .workflow import TaskGraph, TaskNode, WorkflowSpec, expand_dag, render_workflow

log = logging.getLogger(__name__)


class TaskState(str, enum.Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"

    def __str__(self) -> str:
        return self.value


LEGAL_TRANSITIONS = {
    TaskState.PENDING: {TaskState.ACTIVE},
    TaskState.ACTIVE: {TaskState.SUCCEEDED, TaskState.FAILED},
    TaskState.SUCCEEDED: set(),
    TaskState.FAILED: set(),
}
STATES = tuple(TaskState)


class RunState(str, enum.Enum):
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"

    def __str__(self) -> str:
        return self.value


class EngineError(Exception):
    pass


class Deadlock(EngineError):
    pass


class IllegalTransition(EngineError):
    pass


class ImageNotFound(EngineError):
    pass


@dataclass
class TaskContext:
    """Everything a payload may look at while it runs."""

    task_id: str
    run_id: str
    template: str
    params: dict[str, str]
    command: tuple[str, ...]
    args: tuple[str, ...]
    env: dict[str, str]
    fs: TaskFS
    node: str
    role: str | None
    seed: int


@dataclass
class PayloadResult:
    compute_cost_s: float = 0.0
    metrics: dict[str, float] = field(default_factory=dict)


Payload = Callable[[TaskContext], PayloadResult | None]


@dataclass
class TaskInstance:
    id: str
    run_id: str
    spec: TaskNode
    state: TaskState = TaskState.PENDING
    attempt: int = 0
    enqueued: int | None = None
    started: int | None = None
    finished: int | None = None
    node: str | None = None
    flavor: str | None = None
    error: str | None = None

    @property
    def key(self) -> str:
        return f"{self.run_id}/{self.id}"


@dataclass(frozen=True)
class Event:
    seq: int
    time: int
    kind: str
    run_id: str
    task_id: str | None = None
    from_state: str | None = None
    to_state: str | None = None
    node: str | None = None
    queue: str | None = None
    flavor: str | None = None
    detail: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(**d)


@dataclass
class WorkflowRun:
    run_id: str
    spec: WorkflowSpec
    spec_hash: str
    graph: TaskGraph
    tasks: dict[str, TaskInstance]
    store: ArtifactStore
    state: RunState = RunState.RUNNING
    submitted: int = 0
    completed: int | None = None
    dispatched: set[str] = field(default_factory=set)
    census: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)

    def counts(self) -> dict[TaskState, int]:
        c = {s: 0 for s in STATES}
        for t in self.tasks.values():
            c[t.state] += 1
        return c

    @property
    def terminal(self) -> bool:
        return self.state is not RunState.RUNNING

    @property
    def active(self) -> int:
        return sum(1 for t in self.tasks.values() if t.state is TaskState.ACTIVE)


@dataclass
class RunReport:
    run_id: str
    workflow: str
    spec_hash: str
    state: str
    submitted: int
    completed: int | None
    makespan_ns: int
    tasks: list[dict]
    census: list[list[int]]
    artifacts: list[dict]
    io: dict[str, int]

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1).encode() + b"\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    def state_counts(self) -> dict[str, int]:
        c = {str(s): 0 for s in STATES}
        for t in self.tasks:
            c[t["state"]] += 1
        return c


@dataclass(order=True)
class _Completion:
    time: int
    seq: int
    task_key: str = field(compare=False)
    ok: bool = field(compare=False)
    error: str | None = field(compare=False, default=None)
    fs: TaskFS | None = field(compare=False, default=None)


class Engine:
    """Deterministic single-threaded event loop.

    Payloads run when their task starts; their artifact writes are committed
    only when the task's virtual duration has elapsed and it succeeds.
    """

    def __init__(
        self,
        cluster: Cluster,
        scheduler: Scheduler,
        payloads: dict[str, Payload] | None = None,
        secrets: SecretStore | None = None,
        *,
        clock: VirtualClock | None = None,
        seed: int = 0,
        max_retries: int = 0,
    ):
        if max_retries != 0:
            raise NotImplementedError("retries are not supported; max_retries must be 0")
        self.cluster = cluster
        self.scheduler = scheduler
        self.payloads = dict(payloads or {})
        self.secrets = secrets or SecretStore()
        self.clock = clock or VirtualClock()
        self.seed = seed
        self.runs: dict[str, WorkflowRun] = {}
        self.listeners: list[Callable[[Event], None]] = []
        self._seq = 0
        self._completions: list[_Completion] = []
        self._by_key: dict[str, TaskInstance] = {}
        self._run_counter = 0

    # -- plumbing ------------------------------------------------------------------

    def register(self, image: str, payload: Payload) -> None:
        self.payloads[image] = payload

    def _emit(self, run: WorkflowRun, kind: str, **kw: Any) -> Event:
        ev = Event(self._seq, self.clock.now, kind, run.run_id, **kw)
        self._seq += 1
        run.events.append(ev)
        for fn in self.listeners:
            fn(ev)
        return ev

    def _transition(self, task: TaskInstance, to: TaskState, **kw: Any) -> Event:
        if to not in LEGAL_TRANSITIONS[task.state]:
            raise IllegalTransition(f"{task.id}: {task.state} -> {to}")
        frm = task.state
        task.state = to
        now = self.clock.now
        if to is TaskState.ACTIVE:
            task.started = now
            task.attempt += 1
        else:
            task.finished = now
        run = self.runs[task.run_id]
        return self._emit(run, "task_transition", task_id=task.id, from_state=frm.value, to_state=to.value, **kw)

    def _record_census(self, run: WorkflowRun) -> None:
        c = run.counts()
        row = (self.clock.now, *(c[s] for s in STATES))
        if run.census and run.census[-1][0] == row[0]:
            run.census[-1] = row
        elif not run.census or run.census[-1][1:] != row[1:]:
            run.census.append(row)

    # -- public API ----------------------------------------------------------------

    def submit(self, spec: WorkflowSpec) -> str:
        graph = expand_dag(spec)
        spec_hash = hashlib.sha256(render_workflow(spec)).hexdigest()
        run_id = f"{spec.name}-{spec_hash[:8]}-{self._run_counter}"
        self._run_counter += 1
        tasks = {nid: TaskInstance(nid, run_id, node) for nid, node in graph.nodes.items()}
        run = WorkflowRun(run_id, spec, spec_hash, graph, tasks, ArtifactStore(), submitted=self.clock.now)
        self.runs[run_id] = run
        for t in tasks.values():
            self._by_key[t.key] = t
        self._emit(run, "run_submitted", detail=f"tasks={len(tasks)} spec={spec_hash}")
        self._record_census(run)
        if not tasks:
            self._finish_run(run, RunState.SUCCEEDED)
        return run_id

    def _ready(self, run: WorkflowRun) -> list[TaskInstance]:
        out = []
        for nid in run.graph.nodes:
            if nid in run.dispatched:
                continue
            if all(run.tasks[p].state is TaskState.SUCCEEDED for p in run.graph.preds[nid]):
                out.append(run.tasks[nid])
        return out

    def _dispatch(self) -> list[Event]:
        events = []
        for run in self.runs.values():
            if run.terminal:
                continue
            for task in self._ready(run):
                run.dispatched.add(task.id)
                task.enqueued = self.clock.now
                try:
                    self.scheduler.enqueue(
                        task.key,
                        task.spec.queue_label,
                        task.spec.resources,
                        task.spec.node_selector,
                        namespace=run.spec.namespace,
                    )
                except UnknownQueue as exc:
                    events.append(self._emit(run, "task_error", task_id=task.id, detail=str(exc)))
                    self._transition(task, TaskState.ACTIVE)
                    task.error = str(exc)
                    events.append(self._transition(task, TaskState.FAILED, detail=str(exc)))
                    self._fail_run(run)
                    break
                events.append(self._emit(run, "task_enqueued", task_id=task.id, queue=task.spec.queue_label))
        return events

    def _mounts(self, run: WorkflowRun, node: TaskNode) -> list[Mount]:
        mounts = []
        for vm in node.volume_mounts:
            vol = run.spec.volume(vm.name)
            if vol.secret is not None:
                mounts.append(Mount(vm.mount_path, secret=vol.secret.secret_name, read_only=True))
            else:
                mounts.append(Mount(vm.mount_path, claim=vol.claim_name, read_only=vm.read_only))
        return mounts

    def _start(self, adm: Admission) -> list[Event]:
        task = self._by_key[adm.task_id]
        run = self.runs[task.run_id]
        node = self.cluster.nodes[adm.binding.node]
        task.node = node.name
        task.flavor = adm.flavor
        events = [self._transition(task, TaskState.ACTIVE, node=node.name, queue=task.spec.queue_label, flavor=adm.flavor)]
        ok, error, cost, fs = True, None, 0.0, None
        payload = self.payloads.get(task.spec.image)
        try:
            if payload is None:
                raise ImageNotFound(f"no payload registered for image {task.spec.image!r}")
            fs = TaskFS(run.store, self.secrets, self._mounts(run, task.spec))
            ctx = TaskContext(
                task_id=task.id,
                run_id=run.run_id,
                template=task.spec.template,
                params=dict(task.spec.params),
                command=task.spec.command,
                args=task.spec.args,
                env={e.name: e.value for e in task.spec.env},
                fs=fs,
                node=node.name,
                role=node.role,
                seed=self.seed,
            )
            result = payload(ctx) or PayloadResult()
            cost = max(0.0, float(result.compute_cost_s))
        except Exception as exc:  # payload errors become task failures
            ok, error = False, f"{type(exc).__name__}: {exc}"
            log.debug("task %s failed: %s", task.id, error)
        duration = round(cost * node.speed_factor * NS_PER_SECOND) + node.queue_delay_ns if ok else 0
        heapq.heappush(
            self._completions, _Completion(self.clock.now + duration, self._seq, task.key, ok, error, fs)
        )
        return events

    def _admit(self, admissions: Iterable[Admission]) -> list[Event]:
        events = []
        for adm in admissions:
            events += self._start(adm)
        return events

    def _fail_run(self, run: WorkflowRun) -> None:
        for t in run.tasks.values():
            if t.state is TaskState.PENDING and t.key in self.scheduler.workloads:
                self.scheduler.withdraw(t.key)
                self._emit(run, "task_withdrawn", task_id=t.id, queue=t.spec.queue_label)
        self._finish_run(run, RunState.FAILED)

    def _finish_run(self, run: WorkflowRun, state: RunState) -> None:
        if run.terminal:
            return
        run.state = state
        run.completed = self.clock.now
        self._emit(run, "run_completed", detail=state.value)

    def _complete(self, c: _Completion) -> list[Event]:
        task = self._by_key[c.task_key]
        run = self.runs[task.run_id]
        self.scheduler.release(task.key)
        if c.ok:
            run.store.commit(c.fs.staged() if c.fs else {})
            events = [self._transition(task, TaskState.SUCCEEDED, node=task.node)]
        else:
            task.error = c.error
            events = [self._transition(task, TaskState.FAILED, node=task.node, detail=c.error)]
        if not c.ok:
            self._fail_run(run)
        elif all(t.state is TaskState.SUCCEEDED for t in run.tasks.values()):
            self._finish_run(run, RunState.SUCCEEDED)
        return events

    def _zero_time_work(self) -> list[Event]:
        events = self._dispatch()
        events += self._admit(self.scheduler.admit_cycle())
        return events

    def step(self) -> list[Event]:
        """Advance by one event: pending dispatch/admission work, else the next completion."""
        events = self._zero_time_work()
        if not events and self._completions:
            c = heapq.heappop(self._completions)
            self.clock.advance_to(c.time)
            events = self._complete(c)
            events += self._zero_time_work()
        for run in self.runs.values():
            if events and any(e.run_id == run.run_id for e in events):
                self._record_census(run)
        return events

    def run_to_completion(self, run_id: str) -> RunReport:
        run = self.runs[run_id]
        while not (run.terminal and run.active == 0):
            if not self.step():
                stuck = [t.id for t in run.tasks.values() if t.state is TaskState.PENDING][:5]
                raise Deadlock(f"run {run_id}: no event possible; pending tasks include {stuck}")
        return self.report(run_id)

    def report(self, run_id: str) -> RunReport:
        run = self.runs[run_id]
        tasks = []
        for nid in run.graph.nodes:
            t = run.tasks[nid]
            tasks.append(
                {
                    "id": t.id,
                    "template": t.spec.template,
                    "state": t.state.value,
                    "node": t.node,
                    "queue": t.spec.queue_label,
                    "flavor": t.flavor,
                    "enqueued": t.enqueued,
                    "started": t.started,
                    "finished": t.finished,
                    "attempt": t.attempt,
                    "error": t.error,
                }
            )
        finished = [t.finished for t in run.tasks.values() if t.finished is not None]
        makespan = (max(finished) - run.submitted) if finished else 0
        io = run.store.io
        return RunReport(
            run_id=run.run_id,
            workflow=run.spec.name,
            spec_hash=run.spec_hash,
            state=run.state.value,
            submitted=run.submitted,
            completed=run.completed,
            makespan_ns=makespan,
            tasks=tasks,
            census=[list(r) for r in run.census],
            artifacts=run.store.index(),
            io={"bytes_read": io.bytes_read, "bytes_written": io.bytes_written, "reads": io.reads, "writes": io.writes},
        )
