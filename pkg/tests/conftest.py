import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenario import Scenario, generate_scenario, label_run, write_scenario

from pathproforma.pipeline import PipelineConfig, run_extraction

# ---------------------------------------------------------------------------
# Shared end-to-end mock run (50 reports x 11 fields, N_E=20, N_Va=10)
# ---------------------------------------------------------------------------

MOCK_RUN_SEED = 20240
MOCK_RUN_REPORTS = 50


@dataclass
class MockRun:
    scenario: Scenario
    input_paths: list[Path]
    script_path: Path
    run_dir: Path
    labels_path: Path
    stats: dict
    runtime_s: float
    config: PipelineConfig


@pytest.fixture(scope="session")
def mock_run(tmp_path_factory) -> MockRun:
    base = tmp_path_factory.mktemp("mock_run")
    scenario = generate_scenario(n_reports=MOCK_RUN_REPORTS, seed=MOCK_RUN_SEED)
    input_paths, script_path = write_scenario(scenario, base / "inputs")
    config = PipelineConfig(
        backend="mock",
        script_path=str(script_path),
        seed=MOCK_RUN_SEED,
        n_extractor=20,
        n_validator=10,
        canonical_output=True,
    )
    started = time.monotonic()
    run_dir = run_extraction(input_paths, config, base / "run")
    runtime_s = time.monotonic() - started
    labels_path = base / "labels.csv"
    stats = label_run(run_dir, scenario, labels_path)
    return MockRun(
        scenario=scenario,
        input_paths=input_paths,
        script_path=script_path,
        run_dir=run_dir,
        labels_path=labels_path,
        stats=stats,
        runtime_s=runtime_s,
        config=config,
    )


# ---------------------------------------------------------------------------
# Acceptance criterion reporting
# ---------------------------------------------------------------------------

_ACCEPTANCE_RESULTS: dict[str, str] = {}


@dataclass
class AcceptanceRecorder:
    results: dict[str, str] = field(default_factory=dict)

    def record(self, criterion: str):
        """Context manager marking a criterion PASS/FAIL by exception."""
        recorder = self

        class _Recording:
            def __enter__(self):
                return None

            def __exit__(self, exc_type, exc, tb):
                outcome = "PASS" if exc_type is None else "FAIL"
                recorder.results[criterion] = outcome
                _ACCEPTANCE_RESULTS[criterion] = outcome
                return False

        return _Recording()


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceRecorder:
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}  {criterion}")
