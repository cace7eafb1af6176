"""Operator command line: apply, status, queues, metrics, validate, report, samples."""

from __future__ import annotations

import argparse
import http.server
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import records
from .artifacts import ArtifactError
from .cluster import ClusterConfigError
from .cutting.pipeline import load_plan_circuit, load_reconstruction
from .engine import STATES, Deadlock, RunState
from .metrics import CONTENT_TYPE
from .quantum import expectation, simulate
from .report import write_report
from .scheduler import SchedulerError
from .system import SAMPLE_FILES, build_system, sample_path
from .workflow import WorkflowError, expand_dag, parse_workflow

log = logging.getLogger("hqflow")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
DEFAULT_RUNS_DIR = "hqflow-runs"
SEED_ENV = "HQFLOW_SEED"


class UsageError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read_doc(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _parse(path: str):
    try:
        return parse_workflow(_read_doc(path))
    except WorkflowError as exc:
        for d in exc.diagnostics:
            print(f"{path}:{d}", file=sys.stderr)
        raise UsageError(f"{path}: {len(exc.diagnostics)} problem(s)") from None


def _system(args):
    try:
        return build_system(args.cluster, args.queues, args.secrets, seed=args.seed)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except (ClusterConfigError, SchedulerError, ArtifactError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _census_line(counts: dict[str, int]) -> str:
    total = sum(counts.values())
    return f"{total} (" + ", ".join(f"{s.value} {counts[s.value]}" for s in STATES) + ")"


def _reconstruction_summary(store, claim: str) -> dict | None:
    rec = load_reconstruction(store, claim)
    if rec is None:
        return None
    circuit, observable, _ = load_plan_circuit(store, claim)
    oracle = expectation(simulate(circuit), observable)
    return {**rec, "oracle": oracle, "delta": abs(rec["value"] - oracle)}


# -- subcommands -----------------------------------------------------------------------


def cmd_apply(args) -> int:
    spec = _parse(args.file)
    system = _system(args)
    engine = system.engine
    run_id = engine.submit(spec)
    try:
        report = engine.run_to_completion(run_id)
    except Deadlock as exc:
        print(f"error: {exc}", file=sys.stderr)
        report = engine.report(run_id)
        records.write_run(args.runs_dir, engine.runs[run_id], report, system.metrics.registry.export_text(timestamps=True))
        return EXIT_FAILED
    run = engine.runs[run_id]
    result = None
    for vol in spec.volumes:
        if vol.claim_name:
            result = _reconstruction_summary(run.store, vol.claim_name)
            if result is not None:
                break
    d = records.write_run(args.runs_dir, run, report, system.metrics.registry.export_text(timestamps=True), result)
    print(f"run {run_id}: {report.state}")
    print(f"tasks: {_census_line(report.state_counts())}")
    print(f"makespan: {report.makespan_ns / 1e9:.6f} s (virtual)")
    print(f"spec: sha256 {report.spec_hash}")
    print(f"record: {d}")
    if result is not None:
        unc = f" +/- {result['uncertainty']:.6g}" if result["uncertainty"] else ""
        print(f"reconstructed: {result['value']:.12g}{unc} ({result['mode']}, {result['variants']} variants)")
        print(f"oracle: {result['oracle']:.12g}")
        print(f"delta: {result['delta']:.3e}")
    for t in report.tasks:
        if t["error"]:
            print(f"failed: {t['id']}: {t['error']}", file=sys.stderr)
    if args.report:
        for p in write_report(report, args.report):
            print(f"wrote {p}")
    return EXIT_OK if run.state is RunState.SUCCEEDED else EXIT_FAILED


def _resolve_run(args) -> str:
    if args.run_id and args.run_id != "latest":
        return args.run_id
    runs = records.list_runs(args.runs_dir)
    if not runs:
        raise UsageError(f"no runs recorded under {args.runs_dir}")
    # latest by completion in the directory listing order is not meaningful; use mtime
    return max(runs, key=lambda r: (Path(args.runs_dir) / r / records.REPORT).stat().st_mtime_ns)


def _load_report(args, run_id: str):
    try:
        return records.load_report(args.runs_dir, run_id)
    except records.RecordError as exc:
        raise UsageError(str(exc)) from None


def cmd_status(args) -> int:
    run_id = _resolve_run(args)
    report = _load_report(args, run_id)
    print(f"run {report.run_id}: {report.state}")
    print(f"workflow: {report.workflow} (sha256 {report.spec_hash[:12]})")
    print(f"tasks: {_census_line(report.state_counts())}")
    print(f"makespan: {report.makespan_ns / 1e9:.6f} s (virtual)")
    print("progress by template:")
    by_template: dict[str, dict[str, int]] = {}
    order: list[str] = []
    for t in report.tasks:
        if t["template"] not in by_template:
            by_template[t["template"]] = {s.value: 0 for s in STATES}
            order.append(t["template"])
        by_template[t["template"]][t["state"]] += 1
    width = max((len(n) for n in order), default=0)
    for name in order:
        c = by_template[name]
        done = c["Succeeded"] + c["Failed"]
        print(f"  {name:<{width}}  {done}/{sum(c.values())} done  " + " ".join(f"{k}={v}" for k, v in c.items()))
    result = records.load_result(args.runs_dir, report.run_id)
    if result is not None:
        print(f"reconstructed: {result['value']:.12g}  oracle: {result['oracle']:.12g}  delta: {result['delta']:.3e}")
    return EXIT_OK if report.state == "Succeeded" else EXIT_FAILED


def cmd_queues(args) -> int:
    if args.run_id is None and args.at is not None:
        raise UsageError("--at needs --run")
    if args.run_id is not None:
        run_id = _resolve_run(args)
        try:
            events = records.load_events(args.runs_dir, run_id)
        except records.RecordError as exc:
            raise UsageError(str(exc)) from None
        at = None if args.at is None else round(args.at * 1e9)
        rows = [(c.queue, c.pending, c.admitted) for c in records.replay_queue_counts(events, at)]
        when = "end of run" if at is None else f"t={args.at:g}s"
        print(f"queues for {run_id} at {when}:")
    else:
        sched = _system(args).engine.scheduler
        rows = [(s.name, s.pending, s.admitted) for s in sched.status()]
        print("queues (idle scheduler):")
    width = max((len(r[0]) for r in rows), default=5)
    print(f"  {'QUEUE':<{width}}  PENDING  ADMITTED")
    for name, p, a in rows:
        print(f"  {name:<{width}}  {p:>7}  {a:>8}")
    return EXIT_OK


def _metrics_text(args) -> bytes:
    if args.run_id is None and not records.list_runs(args.runs_dir):
        return _system(args).metrics.registry.export_text()
    run_id = _resolve_run(args)
    try:
        return (records.run_dir(args.runs_dir, run_id) / "metrics.prom").read_bytes()
    except records.RecordError as exc:
        raise UsageError(str(exc)) from None


def make_metrics_server(text: bytes, host: str = "127.0.0.1", port: int = 0) -> http.server.HTTPServer:
    """Read-only HTTP endpoint serving ``text`` at ``/metrics``."""

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_GET(self):
            if self.path.split("?")[0] != "/metrics":
                self.send_error(404)
                return
            self.send_response(200)
            self.send_header("Content-Type", CONTENT_TYPE)
            self.send_header("Content-Length", str(len(text)))
            self.end_headers()
            self.wfile.write(text)

        def log_message(self, format, *a):
            log.debug(format, *a)

    return http.server.HTTPServer((host, port), Handler)


def cmd_metrics(args) -> int:
    text = _metrics_text(args)
    if not args.serve:
        sys.stdout.write(text.decode())
        return EXIT_OK
    server = make_metrics_server(text, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"serving http://{host}:{port}/metrics (Ctrl-C to stop)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = _parse(args.file)
    try:
        graph = expand_dag(spec)
    except WorkflowError as exc:
        raise UsageError(f"{args.file}: {exc}") from None
    print(
        f"{args.file}: ok (workflow {spec.name}, entrypoint {spec.entrypoint}, "
        f"{len(spec.templates)} templates, {len(spec.volumes)} volumes, "
        f"{len(graph.nodes)} tasks, {graph.num_edges} edges)"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    report = _load_report(args, _resolve_run(args))
    out = args.out or str(Path(args.runs_dir) / report.run_id / "report")
    for p in write_report(report, out):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_samples(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in SAMPLE_FILES:
        dst = out / name
        if dst.exists() and not args.force:
            raise UsageError(f"{dst} exists (use --force to overwrite)")
        dst.write_bytes(sample_path(name).read_bytes())
        print(f"wrote {dst}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hqflow", description=__doc__)
    p.add_argument("--cluster", help="cluster config (default: shipped sample)")
    p.add_argument("--queues", help="queue/flavor config (default: shipped sample)")
    p.add_argument("--secrets", help="secret documents (default: shipped placeholder)")
    p.add_argument("--runs-dir", default=DEFAULT_RUNS_DIR, help="where run records live (default: %(default)s)")
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default: ${SEED_ENV} or 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("apply", help="submit a workflow and run it to completion")
    a.add_argument("-f", "--file", required=True)
    a.add_argument("--report", metavar="DIR", help="also write CSV and PNG summaries to DIR")
    a.set_defaults(func=cmd_apply)

    s = sub.add_parser("status", help="task census and per-template progress of a run")
    s.add_argument("run_id", nargs="?", default="latest")
    s.set_defaults(func=cmd_status)

    q = sub.add_parser("queues", help="pending/admitted workloads per LocalQueue")
    q.add_argument("--run", dest="run_id", help="replay a recorded run ('latest' allowed)")
    q.add_argument("--at", type=float, help="virtual time in seconds to replay up to")
    q.set_defaults(func=cmd_queues)

    m = sub.add_parser("metrics", help="print or serve the metrics export of a run")
    m.add_argument("--run", dest="run_id")
    m.add_argument("--serve", action="store_true", help="serve over HTTP at /metrics")
    m.add_argument("--host", default="127.0.0.1")
    m.add_argument("--port", type=int, default=9464)
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("validate", help="parse and expand a workflow without running it")
    v.add_argument("-f", "--file", required=True)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="write CSV tables and PNG figures for a run")
    r.add_argument("run_id", nargs="?", default="latest")
    r.add_argument("--out", help="output directory (default: <record>/report)")
    r.set_defaults(func=cmd_report)

    sm = sub.add_parser("samples", help="copy the shipped workflow and configs")
    sm.add_argument("--out", default=".")
    sm.add_argument("--force", action="store_true")
    sm.set_defaults(func=cmd_samples)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _env_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
