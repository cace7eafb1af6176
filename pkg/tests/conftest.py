from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hqflow.engine import Engine, RunReport  # noqa: E402
from hqflow.system import build_system, sample_path  # noqa: E402
from hqflow.workflow import WorkflowSpec, parse_workflow  # noqa: E402


@dataclass
class PocRun:
    engine: Engine
    run_id: str
    report: RunReport
    spec: WorkflowSpec
    exports: list[bytes]
    census_sums: list[float]
    metrics_text: bytes


@pytest.fixture(scope="session")
def poc_spec() -> WorkflowSpec:
    return parse_workflow(sample_path("circuit_cutting_workflow.yaml").read_bytes())


@pytest.fixture(scope="session")
def poc_run(poc_spec) -> PocRun:
    """The shipped workflow on the sample cluster, with a metrics export after every event."""
    system = build_system(seed=0)
    exports: list[bytes] = []
    sums: list[float] = []

    def scrape(ev):
        exports.append(system.metrics.registry.export_text(timestamps=True))
        sums.append(system.metrics.census_total())

    system.engine.listeners.append(scrape)
    run_id = system.engine.submit(poc_spec)
    report = system.engine.run_to_completion(run_id)
    return PocRun(system.engine, run_id, report, poc_spec, exports, sums, system.metrics.registry.export_text())


_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    number, title = mark.args
    outcome = "failed" if call.excinfo is not None else "passed"
    if call.when == "call" or outcome == "failed":
        _criteria.setdefault(number, (title, []))[1].append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes = _criteria[number]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
