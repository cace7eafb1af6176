"""Assemble an engine from cluster, queue and secret configs plus the shipped payloads."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .artifacts import SecretStore, load_secrets
from .cluster import load_cluster
from .cutting.pipeline import IMAGE, circuit_cutting_payload
from .engine import Engine
from .metrics import EngineMetrics
from .scheduler import load_scheduler

SAMPLE_FILES = ("circuit_cutting_workflow.yaml", "cluster.yaml", "queues.yaml", "secrets.yaml")


def sample_path(name: str) -> Path:
    """Filesystem path of a shipped sample document."""
    if name not in SAMPLE_FILES:
        raise KeyError(f"no shipped sample named {name!r}")
    return Path(str(resources.files("hqflow") / "data" / name))


def _read(path: str | Path | None, default: str) -> bytes:
    return Path(path).read_bytes() if path else sample_path(default).read_bytes()


@dataclass
class System:
    engine: Engine
    metrics: EngineMetrics


def build_system(
    cluster: str | Path | None = None,
    queues: str | Path | None = None,
    secrets: str | Path | None = None,
    *,
    seed: int = 0,
) -> System:
    """Fresh engine over the given configs; ``None`` picks the shipped sample."""
    c = load_cluster(_read(cluster, "cluster.yaml"))
    sched = load_scheduler(_read(queues, "queues.yaml"), c)
    store: SecretStore = load_secrets(_read(secrets, "secrets.yaml"))
    engine = Engine(c, sched, {IMAGE: circuit_cutting_payload}, store, seed=seed)
    return System(engine, EngineMetrics(engine))
