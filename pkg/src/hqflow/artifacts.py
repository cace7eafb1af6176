"""Shared-volume stand-in and secret store, seen by tasks through their volume mounts."""

from __future__ import annotations

import hashlib
import posixpath
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import yaml


class ArtifactError(Exception):
    pass


class MissingPath(ArtifactError, FileNotFoundError):
    pass


class ReadOnlyMount(ArtifactError, PermissionError):
    pass


class NotMounted(ArtifactError):
    pass


class SecretNotFound(ArtifactError):
    pass


class SecretStore:
    """secretName -> key -> bytes. Values are never rendered by ``repr``."""

    def __init__(self, secrets: Mapping[str, Mapping[str, bytes]] | None = None):
        self._data: dict[str, dict[str, bytes]] = {}
        for name, kv in (secrets or {}).items():
            self.put(name, kv)

    def put(self, name: str, values: Mapping[str, bytes | str]) -> None:
        self._data[name] = {k: v.encode() if isinstance(v, str) else bytes(v) for k, v in values.items()}

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def names(self) -> list[str]:
        return sorted(self._data)

    def get(self, name: str) -> dict[str, bytes]:
        if name not in self._data:
            raise SecretNotFound(f"secret {name!r} does not exist")
        return self._data[name]

    def __repr__(self) -> str:
        return f"SecretStore(names={self.names()})"


def load_secrets(text: str | bytes) -> SecretStore:
    """Read Kubernetes-style ``kind: Secret`` documents (``stringData`` only)."""
    store = SecretStore()
    for doc in yaml.safe_load_all(text):
        if not doc:
            continue
        if doc.get("kind") != "Secret":
            raise ArtifactError(f"expected kind: Secret, got {doc.get('kind')!r}")
        store.put(doc["metadata"]["name"], {str(k): str(v) for k, v in (doc.get("stringData") or {}).items()})
    return store


@dataclass
class IOCounters:
    bytes_read: int = 0
    bytes_written: int = 0
    reads: int = 0
    writes: int = 0


class ArtifactStore:
    """Persistent-volume contents: claimName -> relative path -> bytes."""

    def __init__(self) -> None:
        self.volumes: dict[str, dict[str, bytes]] = {}
        self.io = IOCounters()

    def read(self, claim: str, rel: str) -> bytes:
        try:
            data = self.volumes[claim][rel]
        except KeyError:
            raise MissingPath(f"{claim}:{rel} does not exist") from None
        self.io.bytes_read += len(data)
        self.io.reads += 1
        return data

    def exists(self, claim: str, rel: str) -> bool:
        return rel in self.volumes.get(claim, {})

    def commit(self, writes: Mapping[tuple[str, str], bytes]) -> None:
        for (claim, rel), data in writes.items():
            self.volumes.setdefault(claim, {})[rel] = data
            self.io.bytes_written += len(data)
            self.io.writes += 1

    def index(self) -> list[dict]:
        out = []
        for claim in sorted(self.volumes):
            for rel in sorted(self.volumes[claim]):
                data = self.volumes[claim][rel]
                out.append(
                    {"claim": claim, "path": rel, "size": len(data), "sha256": hashlib.sha256(data).hexdigest()}
                )
        return out


@dataclass(frozen=True)
class Mount:
    path: str
    claim: str | None = None
    secret: str | None = None
    read_only: bool = False


def _norm(path: str) -> str:
    p = posixpath.normpath("/" + path.lstrip("/"))
    return p


@dataclass
class TaskFS:
    """A task's view of its mounts. Writes stay staged until :meth:`staged` is committed."""

    store: ArtifactStore
    secrets: SecretStore
    mounts: list[Mount]
    _staged: dict[tuple[str, str], bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.mounts = sorted(self.mounts, key=lambda m: len(_norm(m.path)), reverse=True)
        for m in self.mounts:
            if m.secret is not None:
                self.secrets.get(m.secret)

    def _resolve(self, path: str) -> tuple[Mount, str]:
        p = _norm(path)
        for m in self.mounts:
            root = _norm(m.path)
            if p == root or p.startswith(root.rstrip("/") + "/"):
                return m, p[len(root):].lstrip("/")
        raise NotMounted(f"{path} is not under any volume mount")

    def read(self, path: str) -> bytes:
        m, rel = self._resolve(path)
        if m.secret is not None:
            values = self.secrets.get(m.secret)
            if rel not in values:
                raise MissingPath(f"{path} does not exist")
            return values[rel]
        if (m.claim, rel) in self._staged:
            return self._staged[(m.claim, rel)]
        try:
            return self.store.read(m.claim, rel)
        except MissingPath:
            raise MissingPath(f"{path} does not exist") from None

    def exists(self, path: str) -> bool:
        try:
            m, rel = self._resolve(path)
        except NotMounted:
            return False
        if m.secret is not None:
            return rel in self.secrets.get(m.secret)
        return (m.claim, rel) in self._staged or self.store.exists(m.claim, rel)

    def write(self, path: str, data: bytes) -> None:
        m, rel = self._resolve(path)
        if m.read_only or m.secret is not None:
            raise ReadOnlyMount(f"{path} is on a read-only mount")
        self._staged[(m.claim, rel)] = bytes(data)

    def staged(self) -> dict[tuple[str, str], bytes]:
        return dict(self._staged)

    def listdir(self, path: str) -> list[str]:
        m, rel = self._resolve(path)
        prefix = rel.rstrip("/") + "/" if rel else ""
        if m.secret is not None:
            keys: Iterable[str] = self.secrets.get(m.secret)
        else:
            keys = list(self.store.volumes.get(m.claim, {})) + [r for c, r in self._staged if c == m.claim]
        return sorted({k[len(prefix):].split("/")[0] for k in keys if k.startswith(prefix)})
