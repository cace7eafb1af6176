"""Workflow documents: parsing, validation, rendering and DAG expansion.

Documents follow a strict subset of the Argo ``Workflow`` schema. Unknown
fields are rejected so that a document either parses completely or yields a
list of positioned diagnostics.
"""

from __future__ import annotations

import graphlib
import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import yaml

from .resources import (
    AttributePredicate,
    DeviceClaim,
    QuantityError,
    ResourceRequest,
    format_quantity,
    parse_quantity,
)

API_VERSION = "argoproj.io/v1alpha1"
QUEUE_LABEL = "kueue.x-k8s.io/queue-name"

PLACEHOLDER = re.compile(r"\{\{\s*inputs\.parameters\.([A-Za-z0-9_.-]+)\s*\}\}")
ITEM = re.compile(r"\{\{\s*item\s*\}\}")
NAME = re.compile(r"^[a-z0-9]([-a-z0-9.]*[a-z0-9])?$")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int | None = None
    column: int | None = None
    path: str = ""

    def __str__(self) -> str:
        where = f"{self.line}:{self.column}" if self.line is not None else "-"
        loc = f" at {self.path}" if self.path else ""
        return f"{where}: {self.code}: {self.message}{loc}"

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "line": self.line,
            "column": self.column,
            "path": self.path,
        }


class WorkflowError(Exception):
    def __init__(self, diagnostics: Iterable[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


class DocumentSyntaxError(WorkflowError):
    """The document is not well-formed YAML."""


class ValidationError(WorkflowError):
    """The document is YAML but violates the workflow schema or its invariants."""


class ExpansionError(Exception):
    pass


# -- model ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretRef:
    secret_name: str


@dataclass(frozen=True)
class VolumeDecl:
    name: str
    claim_name: str | None = None
    secret: SecretRef | None = None

    @property
    def is_secret(self) -> bool:
        return self.secret is not None


@dataclass(frozen=True)
class VolumeMount:
    name: str
    mount_path: str
    read_only: bool = False


@dataclass(frozen=True)
class EnvVar:
    name: str
    value: str


@dataclass(frozen=True)
class ContainerTemplate:
    name: str
    image: str
    command: tuple[str, ...] = ()
    args: tuple[str, ...] = ()
    env: tuple[EnvVar, ...] = ()
    volume_mounts: tuple[VolumeMount, ...] = ()
    resources: ResourceRequest = field(default_factory=ResourceRequest)
    node_selector: dict[str, str] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)
    input_params: tuple[str, ...] = ()

    @property
    def queue_label(self) -> str | None:
        return self.labels.get(QUEUE_LABEL)


@dataclass(frozen=True)
class StepRef:
    name: str
    template: str
    arguments: tuple[tuple[str, str], ...] = ()
    with_sequence: int | None = None


@dataclass(frozen=True)
class StepsTemplate:
    name: str
    groups: tuple[tuple[StepRef, ...], ...]
    input_params: tuple[str, ...] = ()


Template = ContainerTemplate | StepsTemplate


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    entrypoint: str
    templates: tuple[Template, ...]
    volumes: tuple[VolumeDecl, ...] = ()
    namespace: str | None = None

    def template(self, name: str) -> Template:
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(name)

    def volume(self, name: str) -> VolumeDecl:
        for v in self.volumes:
            if v.name == name:
                return v
        raise KeyError(name)

    def content_hash(self) -> str:
        return hashlib.sha256(render_workflow(self)).hexdigest()


# -- parsing -------------------------------------------------------------------------


class _Reader:
    """Walks composed YAML nodes, accumulating diagnostics instead of stopping."""

    def __init__(self) -> None:
        self.diags: list[Diagnostic] = []

    def error(self, code: str, message: str, node: yaml.Node | None, path: str) -> None:
        line = col = None
        if node is not None:
            line, col = node.start_mark.line + 1, node.start_mark.column + 1
        self.diags.append(Diagnostic(code, message, line, col, path))

    def mapping(
        self, node: yaml.Node, path: str, allowed: Iterable[str], required: Iterable[str] = ()
    ) -> dict[str, yaml.Node] | None:
        if not isinstance(node, yaml.MappingNode):
            self.error("E_TYPE", "expected a mapping", node, path)
            return None
        out: dict[str, yaml.Node] = {}
        allowed = set(allowed)
        for k, v in node.value:
            key = k.value if isinstance(k, yaml.ScalarNode) else None
            if key is None:
                self.error("E_TYPE", "mapping keys must be scalars", k, path)
                continue
            if key in out:
                self.error("E_DUPLICATE_KEY", f"duplicate key {key!r}", k, path)
                continue
            if key not in allowed:
                self.error("E_UNKNOWN_FIELD", f"unknown field {key!r}", k, f"{path}.{key}")
                continue
            out[key] = v
        for key in required:
            if key not in out:
                self.error("E_MISSING_FIELD", f"missing required field {key!r}", node, path)
        return out

    def free_mapping(self, node: yaml.Node, path: str) -> dict[str, str]:
        """String-to-string map such as labels or nodeSelector."""
        m = self.mapping_any(node, path)
        return {k: self.string(v, f"{path}.{k}") or "" for k, v in m.items()}

    def mapping_any(self, node: yaml.Node, path: str) -> dict[str, yaml.Node]:
        if not isinstance(node, yaml.MappingNode):
            self.error("E_TYPE", "expected a mapping", node, path)
            return {}
        out: dict[str, yaml.Node] = {}
        for k, v in node.value:
            if not isinstance(k, yaml.ScalarNode):
                self.error("E_TYPE", "mapping keys must be scalars", k, path)
            elif k.value in out:
                self.error("E_DUPLICATE_KEY", f"duplicate key {k.value!r}", k, path)
            else:
                out[k.value] = v
        return out

    def sequence(self, node: yaml.Node, path: str) -> list[yaml.Node]:
        if not isinstance(node, yaml.SequenceNode):
            self.error("E_TYPE", "expected a list", node, path)
            return []
        return list(node.value)

    def string(self, node: yaml.Node, path: str) -> str | None:
        if not isinstance(node, yaml.ScalarNode):
            self.error("E_TYPE", "expected a scalar", node, path)
            return None
        return node.value

    def strings(self, node: yaml.Node, path: str) -> tuple[str, ...]:
        return tuple(
            s for i, n in enumerate(self.sequence(node, path)) if (s := self.string(n, f"{path}[{i}]")) is not None
        )

    def boolean(self, node: yaml.Node, path: str) -> bool:
        s = self.string(node, path)
        if s is None:
            return False
        low = s.lower()
        if low in ("true", "yes", "on"):
            return True
        if low in ("false", "no", "off"):
            return False
        self.error("E_TYPE", f"expected a boolean, got {s!r}", node, path)
        return False

    def integer(self, node: yaml.Node, path: str) -> int | None:
        s = self.string(node, path)
        if s is None:
            return None
        try:
            return int(s)
        except ValueError:
            self.error("E_TYPE", f"expected an integer, got {s!r}", node, path)
            return None

    def scalar_value(self, node: yaml.Node, path: str) -> Any:
        if not isinstance(node, yaml.ScalarNode):
            self.error("E_TYPE", "expected a scalar", node, path)
            return None
        return yaml.safe_load(yaml.serialize(node))


def _compose(document: bytes | str) -> yaml.Node:
    try:
        node = yaml.compose(document, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise DocumentSyntaxError([Diagnostic("E_SYNTAX", exc.problem or str(exc), line, col)]) from None
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError([Diagnostic("E_SYNTAX", str(exc))]) from None
    if node is None:
        raise DocumentSyntaxError([Diagnostic("E_SYNTAX", "empty document", 1, 1)])
    return node


def _parse_resources(r: _Reader, node: yaml.Node, path: str) -> ResourceRequest:
    m = r.mapping(node, path, ("requests", "limits", "deviceClaims")) or {}
    parsed: dict[str, dict[str, int]] = {"requests": {}, "limits": {}}
    for section in ("requests", "limits"):
        if section not in m:
            continue
        for key, val in r.mapping_any(m[section], f"{path}.{section}").items():
            v = r.scalar_value(val, f"{path}.{section}.{key}")
            if v is None:
                continue
            try:
                parsed[section][key] = parse_quantity(key, v)
            except QuantityError as exc:
                r.error("E_BAD_QUANTITY", str(exc), val, f"{path}.{section}.{key}")
    claims = []
    for i, cn in enumerate(r.sequence(m["deviceClaims"], f"{path}.deviceClaims") if "deviceClaims" in m else []):
        cp = f"{path}.deviceClaims[{i}]"
        cm = r.mapping(cn, cp, ("className", "count", "constraints"), ("className",))
        if cm is None:
            continue
        cls = r.string(cm["className"], f"{cp}.className") if "className" in cm else None
        count = r.integer(cm["count"], f"{cp}.count") if "count" in cm else 1
        preds = []
        for j, pn in enumerate(r.sequence(cm["constraints"], f"{cp}.constraints") if "constraints" in cm else []):
            pp = f"{cp}.constraints[{j}]"
            pm = r.mapping(pn, pp, ("attribute", "operator", "value"), ("attribute", "operator", "value"))
            if pm is None or len(pm) < 3:
                continue
            try:
                preds.append(
                    AttributePredicate(
                        r.string(pm["attribute"], pp) or "",
                        r.string(pm["operator"], pp) or "",
                        r.scalar_value(pm["value"], pp),
                    )
                )
            except ValueError as exc:
                r.error("E_BAD_VALUE", str(exc), pn, pp)
        if cls is not None and count is not None:
            claims.append(DeviceClaim(cls, count, tuple(preds)))
    req = ResourceRequest(parsed["requests"], parsed["limits"], tuple(claims))
    for problem in req.problems():
        r.error("E_BAD_RESOURCES", problem, node, path)
    return req


def _parse_inputs(r: _Reader, node: yaml.Node, path: str) -> tuple[str, ...]:
    m = r.mapping(node, path, ("parameters",)) or {}
    names = []
    for i, pn in enumerate(r.sequence(m["parameters"], f"{path}.parameters") if "parameters" in m else []):
        pm = r.mapping(pn, f"{path}.parameters[{i}]", ("name",), ("name",))
        if pm and "name" in pm:
            s = r.string(pm["name"], f"{path}.parameters[{i}].name")
            if s is not None:
                names.append(s)
    return tuple(names)


def _parse_container_template(r: _Reader, name: str, m: dict[str, yaml.Node], path: str) -> ContainerTemplate:
    labels: dict[str, str] = {}
    if "metadata" in m:
        mm = r.mapping(m["metadata"], f"{path}.metadata", ("labels",)) or {}
        if "labels" in mm:
            labels = r.free_mapping(mm["labels"], f"{path}.metadata.labels")
    inputs = _parse_inputs(r, m["inputs"], f"{path}.inputs") if "inputs" in m else ()
    node_selector = r.free_mapping(m["nodeSelector"], f"{path}.nodeSelector") if "nodeSelector" in m else {}
    cp = f"{path}.container"
    c = r.mapping(m["container"], cp, ("image", "command", "args", "env", "volumeMounts", "resources"), ("image",)) or {}
    image = r.string(c["image"], f"{cp}.image") if "image" in c else None
    command = r.strings(c["command"], f"{cp}.command") if "command" in c else ()
    args = r.strings(c["args"], f"{cp}.args") if "args" in c else ()
    env = []
    for i, en in enumerate(r.sequence(c["env"], f"{cp}.env") if "env" in c else []):
        em = r.mapping(en, f"{cp}.env[{i}]", ("name", "value"), ("name", "value"))
        if em and len(em) == 2:
            env.append(EnvVar(r.string(em["name"], cp) or "", r.string(em["value"], cp) or ""))
    mounts = []
    for i, vn in enumerate(r.sequence(c["volumeMounts"], f"{cp}.volumeMounts") if "volumeMounts" in c else []):
        vp = f"{cp}.volumeMounts[{i}]"
        vm = r.mapping(vn, vp, ("name", "mountPath", "readOnly"), ("name", "mountPath"))
        if vm and "name" in vm and "mountPath" in vm:
            ro = r.boolean(vm["readOnly"], f"{vp}.readOnly") if "readOnly" in vm else False
            mounts.append(VolumeMount(r.string(vm["name"], vp) or "", r.string(vm["mountPath"], vp) or "", ro))
    resources = _parse_resources(r, c["resources"], f"{cp}.resources") if "resources" in c else ResourceRequest()
    return ContainerTemplate(
        name,
        image or "",
        command,
        args,
        tuple(env),
        tuple(mounts),
        resources,
        node_selector,
        labels,
        inputs,
    )


def _parse_step(r: _Reader, node: yaml.Node, path: str) -> StepRef | None:
    m = r.mapping(node, path, ("name", "template", "arguments", "withSequence"), ("name", "template"))
    if m is None or "name" not in m or "template" not in m:
        return None
    name = r.string(m["name"], f"{path}.name") or ""
    tmpl = r.string(m["template"], f"{path}.template") or ""
    arguments = []
    if "arguments" in m:
        am = r.mapping(m["arguments"], f"{path}.arguments", ("parameters",)) or {}
        for i, pn in enumerate(r.sequence(am["parameters"], f"{path}.arguments.parameters") if "parameters" in am else []):
            pp = f"{path}.arguments.parameters[{i}]"
            pm = r.mapping(pn, pp, ("name", "value"), ("name", "value"))
            if pm and len(pm) == 2:
                arguments.append((r.string(pm["name"], pp) or "", r.string(pm["value"], pp) or ""))
    count = None
    if "withSequence" in m:
        sm = r.mapping(m["withSequence"], f"{path}.withSequence", ("count",), ("count",)) or {}
        if "count" in sm:
            count = r.integer(sm["count"], f"{path}.withSequence.count")
            if count is not None and count < 0:
                r.error("E_BAD_VALUE", "withSequence.count must be >= 0", sm["count"], f"{path}.withSequence.count")
                count = None
    return StepRef(name, tmpl, tuple(arguments), count)


def _parse_template(r: _Reader, node: yaml.Node, path: str) -> tuple[Template | None, yaml.Node]:
    m = r.mapping(node, path, ("name", "steps", "container", "inputs", "metadata", "nodeSelector"), ("name",))
    if m is None or "name" not in m:
        return None, node
    name = r.string(m["name"], f"{path}.name") or ""
    path = f"templates[{name}]"
    if ("steps" in m) == ("container" in m):
        r.error("E_TEMPLATE_KIND", "a template needs exactly one of 'steps' or 'container'", node, path)
        return None, node
    if "steps" in m:
        for extra in ("metadata", "nodeSelector"):
            if extra in m:
                r.error("E_UNKNOWN_FIELD", f"{extra!r} is only valid on container templates", m[extra], path)
        groups = []
        for gi, gn in enumerate(r.sequence(m["steps"], f"{path}.steps")):
            group = []
            for si, sn in enumerate(r.sequence(gn, f"{path}.steps[{gi}]")):
                s = _parse_step(r, sn, f"{path}.steps[{gi}][{si}]")
                if s is not None:
                    group.append(s)
            groups.append(tuple(group))
        inputs = _parse_inputs(r, m["inputs"], f"{path}.inputs") if "inputs" in m else ()
        return StepsTemplate(name, tuple(groups), inputs), node
    return _parse_container_template(r, name, m, path), node


def _parse_volume(r: _Reader, node: yaml.Node, path: str) -> VolumeDecl | None:
    m = r.mapping(node, path, ("name", "persistentVolumeClaim", "secret"), ("name",))
    if m is None or "name" not in m:
        return None
    name = r.string(m["name"], f"{path}.name") or ""
    if ("persistentVolumeClaim" in m) == ("secret" in m):
        r.error("E_VOLUME_SOURCE", "volume needs exactly one of 'persistentVolumeClaim' or 'secret'", node, path)
        return None
    if "secret" in m:
        sm = r.mapping(m["secret"], f"{path}.secret", ("secretName",), ("secretName",)) or {}
        sname = r.string(sm["secretName"], f"{path}.secret.secretName") if "secretName" in sm else None
        return VolumeDecl(name, secret=SecretRef(sname or ""))
    pm = r.mapping(m["persistentVolumeClaim"], f"{path}.persistentVolumeClaim", ("claimName",), ("claimName",)) or {}
    claim = r.string(pm["claimName"], f"{path}.persistentVolumeClaim.claimName") if "claimName" in pm else None
    return VolumeDecl(name, claim_name=claim or "")


def _check_semantics(r: _Reader, spec: WorkflowSpec, nodes: dict[str, yaml.Node], entry_node: yaml.Node | None) -> None:
    names: dict[str, Template] = {}
    for t in spec.templates:
        if t.name in names:
            r.error("E_DUPLICATE_TEMPLATE", f"template {t.name!r} is defined more than once", nodes.get(t.name), f"templates[{t.name}]")
        else:
            names[t.name] = t
    if spec.entrypoint not in names:
        r.error("E_DANGLING_REF", f"entrypoint {spec.entrypoint!r} names no template", entry_node, "spec.entrypoint")
    vols = {v.name: v for v in spec.volumes}
    if len(vols) != len(spec.volumes):
        r.error("E_DUPLICATE_VOLUME", "volume names must be unique", None, "spec.volumes")
    graph: dict[str, set[str]] = {}
    for t in spec.templates:
        node = nodes.get(t.name)
        path = f"templates[{t.name}]"
        graph[t.name] = set()
        if isinstance(t, StepsTemplate):
            for g in t.groups:
                for s in g:
                    if s.template not in names:
                        r.error("E_DANGLING_REF", f"step {s.name!r} references unknown template {s.template!r}", node, path)
                        continue
                    graph[t.name].add(s.template)
                    target = names[s.template]
                    for arg, value in s.arguments:
                        if arg not in target.input_params:
                            r.error("E_UNKNOWN_PARAM", f"step {s.name!r} binds {arg!r}, which {s.template!r} does not declare", node, path)
                        for ref in PLACEHOLDER.findall(value):
                            if ref not in t.input_params:
                                r.error("E_UNKNOWN_PARAM", f"{{{{inputs.parameters.{ref}}}}} is not an input of {t.name!r}", node, path)
                        if ITEM.search(value) and s.with_sequence is None:
                            r.error("E_UNKNOWN_PARAM", f"step {s.name!r} uses {{{{item}}}} without withSequence", node, path)
            continue
        if not t.image:
            r.error("E_MISSING_FIELD", "container image must not be empty", node, path)
        for tok in (*t.command, *t.args, *(e.value for e in t.env)):
            for ref in PLACEHOLDER.findall(tok):
                if ref not in t.input_params:
                    r.error("E_UNKNOWN_PARAM", f"placeholder {{{{inputs.parameters.{ref}}}}} has no declared input", node, path)
        for vm in t.volume_mounts:
            if vm.name not in vols:
                r.error("E_UNKNOWN_VOLUME", f"volumeMount {vm.name!r} names no declared volume", node, path)
            elif vols[vm.name].is_secret and not vm.read_only:
                r.error("E_SECRET_WRITABLE", f"secret volume {vm.name!r} must be mounted readOnly", node, path)
    try:
        graphlib.TopologicalSorter(graph).prepare()
    except graphlib.CycleError as exc:
        cycle = " -> ".join(exc.args[1])
        r.error("E_CYCLE", f"template references form a cycle: {cycle}", nodes.get(exc.args[1][0]), "spec.templates")


def parse_workflow(document: bytes | str) -> WorkflowSpec:
    """Parse and validate a workflow document, reporting every violation found."""
    root = _compose(document)
    r = _Reader()
    top = r.mapping(root, "", ("apiVersion", "kind", "metadata", "spec"), ("apiVersion", "kind", "metadata", "spec"))
    if top is None:
        raise ValidationError(r.diags)
    if "apiVersion" in top and r.string(top["apiVersion"], "apiVersion") != API_VERSION:
        r.error("E_BAD_VALUE", f"apiVersion must be {API_VERSION!r}", top["apiVersion"], "apiVersion")
    if "kind" in top and r.string(top["kind"], "kind") != "Workflow":
        r.error("E_BAD_VALUE", "kind must be 'Workflow'", top["kind"], "kind")
    name, namespace = "", None
    if "metadata" in top:
        md = r.mapping(top["metadata"], "metadata", ("name", "namespace"), ("name",)) or {}
        if "name" in md:
            name = r.string(md["name"], "metadata.name") or ""
            if not NAME.match(name):
                r.error("E_BAD_VALUE", f"workflow name {name!r} is not a DNS-1123 name", md["name"], "metadata.name")
        if "namespace" in md:
            namespace = r.string(md["namespace"], "metadata.namespace")
    entrypoint, volumes, templates = "", [], []
    entry_node = None
    tnodes: dict[str, yaml.Node] = {}
    if "spec" in top:
        sp = r.mapping(top["spec"], "spec", ("entrypoint", "volumes", "templates"), ("entrypoint", "templates")) or {}
        if "entrypoint" in sp:
            entry_node = sp["entrypoint"]
            entrypoint = r.string(entry_node, "spec.entrypoint") or ""
        for i, vn in enumerate(r.sequence(sp["volumes"], "spec.volumes") if "volumes" in sp else []):
            v = _parse_volume(r, vn, f"spec.volumes[{i}]")
            if v is not None:
                volumes.append(v)
        for i, tn in enumerate(r.sequence(sp["templates"], "spec.templates") if "templates" in sp else []):
            t, node = _parse_template(r, tn, f"spec.templates[{i}]")
            if t is not None:
                templates.append(t)
                tnodes.setdefault(t.name, node)
    spec = WorkflowSpec(name, entrypoint, tuple(templates), tuple(volumes), namespace)
    if not r.diags:
        _check_semantics(r, spec, tnodes, entry_node)
    if r.diags:
        raise ValidationError(r.diags)
    return spec


# -- rendering -----------------------------------------------------------------------


def _render_resources(req: ResourceRequest) -> dict:
    out: dict[str, Any] = {}
    if req.requests:
        out["requests"] = {k: format_quantity(k, v) for k, v in req.requests.items()}
    if req.limits:
        out["limits"] = {k: format_quantity(k, v) for k, v in req.limits.items()}
    if req.device_claims:
        claims = []
        for c in req.device_claims:
            d: dict[str, Any] = {"className": c.class_name, "count": c.count}
            if c.constraints:
                d["constraints"] = [p.to_dict() for p in c.constraints]
            claims.append(d)
        out["deviceClaims"] = claims
    return out


def _render_template(t: Template) -> dict:
    if isinstance(t, StepsTemplate):
        d: dict[str, Any] = {"name": t.name}
        if t.input_params:
            d["inputs"] = {"parameters": [{"name": p} for p in t.input_params]}
        groups = []
        for g in t.groups:
            steps = []
            for s in g:
                sd: dict[str, Any] = {"name": s.name, "template": s.template}
                if s.arguments:
                    sd["arguments"] = {"parameters": [{"name": k, "value": v} for k, v in s.arguments]}
                if s.with_sequence is not None:
                    sd["withSequence"] = {"count": s.with_sequence}
                steps.append(sd)
            groups.append(steps)
        d["steps"] = groups
        return d
    d = {"name": t.name}
    if t.labels:
        d["metadata"] = {"labels": dict(t.labels)}
    if t.input_params:
        d["inputs"] = {"parameters": [{"name": p} for p in t.input_params]}
    if t.node_selector:
        d["nodeSelector"] = dict(t.node_selector)
    c: dict[str, Any] = {"image": t.image}
    if t.command:
        c["command"] = list(t.command)
    if t.args:
        c["args"] = list(t.args)
    if t.env:
        c["env"] = [{"name": e.name, "value": e.value} for e in t.env]
    if t.volume_mounts:
        c["volumeMounts"] = [
            {"name": m.name, "mountPath": m.mount_path, **({"readOnly": True} if m.read_only else {})}
            for m in t.volume_mounts
        ]
    res = _render_resources(t.resources)
    if res:
        c["resources"] = res
    d["container"] = c
    return d


def workflow_to_dict(spec: WorkflowSpec) -> dict:
    md: dict[str, Any] = {"name": spec.name}
    if spec.namespace is not None:
        md["namespace"] = spec.namespace
    body: dict[str, Any] = {"entrypoint": spec.entrypoint}
    if spec.volumes:
        vols = []
        for v in spec.volumes:
            if v.secret is not None:
                vols.append({"name": v.name, "secret": {"secretName": v.secret.secret_name}})
            else:
                vols.append({"name": v.name, "persistentVolumeClaim": {"claimName": v.claim_name}})
        body["volumes"] = vols
    body["templates"] = [_render_template(t) for t in spec.templates]
    return {"apiVersion": API_VERSION, "kind": "Workflow", "metadata": md, "spec": body}


class _QuotedDumper(yaml.SafeDumper):
    pass


def _str_presenter(dumper: yaml.SafeDumper, data: str) -> yaml.Node:
    # always quote so "1", "true", "" and friends survive as strings
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style='"')


_QuotedDumper.add_representer(str, _str_presenter)


def render_workflow(spec: WorkflowSpec) -> bytes:
    return yaml.dump(workflow_to_dict(spec), Dumper=_QuotedDumper, sort_keys=False, width=4096).encode()


# -- expansion -----------------------------------------------------------------------


def substitute_params(tokens: Iterable[str], bindings: Mapping[str, str]) -> list[str]:
    """Replace every ``{{inputs.parameters.X}}`` with ``bindings[X]``."""

    def repl(m: re.Match) -> str:
        key = m.group(1)
        if key not in bindings:
            raise ExpansionError(f"no binding for {{{{inputs.parameters.{key}}}}}")
        return bindings[key]

    out = []
    for tok in tokens:
        out.append(PLACEHOLDER.sub(repl, tok) if "{{" in tok else tok)
    return out


@dataclass(frozen=True)
class TaskNode:
    id: str
    template: str
    params: tuple[tuple[str, str], ...]
    image: str
    command: tuple[str, ...]
    args: tuple[str, ...]
    env: tuple[EnvVar, ...]
    volume_mounts: tuple[VolumeMount, ...]
    resources: ResourceRequest
    node_selector: dict[str, str]
    queue_label: str | None


@dataclass
class TaskGraph:
    nodes: dict[str, TaskNode] = field(default_factory=dict)
    preds: dict[str, list[str]] = field(default_factory=dict)
    succs: dict[str, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return sum(len(p) for p in self.preds.values())

    def add_node(self, node: TaskNode) -> None:
        if node.id in self.nodes:
            raise ExpansionError(f"duplicate task id {node.id!r}")
        self.nodes[node.id] = node
        self.preds[node.id] = []
        self.succs[node.id] = []

    def add_edge(self, a: str, b: str) -> None:
        self.preds[b].append(a)
        self.succs[a].append(b)

    def roots(self) -> list[str]:
        return [n for n, p in self.preds.items() if not p]

    def topological_order(self) -> list[str]:
        ts = graphlib.TopologicalSorter({n: p for n, p in self.preds.items()})
        return list(ts.static_order())


def _instantiate(t: ContainerTemplate, node_id: str, bindings: Mapping[str, str]) -> TaskNode:
    missing = [p for p in t.input_params if p not in bindings]
    if missing:
        raise ExpansionError(f"task {node_id!r}: no value for input parameter(s) {missing}")
    params = tuple((p, bindings[p]) for p in t.input_params)
    b = dict(params)
    return TaskNode(
        id=node_id,
        template=t.name,
        params=params,
        image=t.image,
        command=tuple(substitute_params(t.command, b)),
        args=tuple(substitute_params(t.args, b)),
        env=tuple(EnvVar(e.name, substitute_params([e.value], b)[0]) for e in t.env),
        volume_mounts=t.volume_mounts,
        resources=t.resources,
        node_selector=dict(t.node_selector),
        queue_label=t.queue_label,
    )


def _expand(
    spec: WorkflowSpec, graph: TaskGraph, name: str, bindings: Mapping[str, str], node_id: str
) -> tuple[list[str], list[str]]:
    """Add the subgraph for template ``name``; return its (sources, sinks)."""
    t = spec.template(name)
    if isinstance(t, ContainerTemplate):
        graph.add_node(_instantiate(t, node_id, bindings))
        return [node_id], [node_id]
    prefix = f"{node_id}." if node_id else ""
    sources: list[str] = []
    prev_sinks: list[str] = []
    for group in t.groups:
        g_sources: list[str] = []
        g_sinks: list[str] = []
        for step in group:
            target = spec.template(step.template)
            items: list[int | None] = list(range(step.with_sequence)) if step.with_sequence is not None else [None]
            for item in items:
                args: dict[str, str] = {}
                for k, v in step.arguments:
                    if item is not None:
                        v = ITEM.sub(str(item), v)
                    elif ITEM.search(v):
                        raise ExpansionError(f"step {step.name!r} uses {{{{item}}}} without withSequence")
                    args[k] = substitute_params([v], bindings)[0]
                if item is not None and "index" in target.input_params and "index" not in args:
                    args["index"] = str(item)
                sid = f"{prefix}{step.name}" + (f"({item})" if item is not None else "")
                s_src, s_snk = _expand(spec, graph, step.template, args, sid)
                g_sources += s_src
                g_sinks += s_snk
        if not g_sources:
            continue
        for a in prev_sinks:
            for b in g_sources:
                graph.add_edge(a, b)
        if not sources:
            sources = g_sources
        prev_sinks = g_sinks
    return sources, prev_sinks


def expand_dag(spec: WorkflowSpec) -> TaskGraph:
    """Expand the entrypoint into parameter-substituted task nodes.

    Step groups are full barriers: every node of a group depends on every
    sink of the previous non-empty group.
    """
    graph = TaskGraph()
    entry = spec.template(spec.entrypoint)
    root_id = spec.entrypoint if isinstance(entry, ContainerTemplate) else ""
    _expand(spec, graph, spec.entrypoint, {}, root_id)
    try:
        graph.topological_order()
    except graphlib.CycleError as exc:
        raise ExpansionError(f"expanded graph has a cycle: {exc.args[1]}") from None
    return graph
