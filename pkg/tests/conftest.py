import time

import pytest

from otformation.cli import run_scenario
from otformation.scenarios import CATALOG_NAMES, get_scenario

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    def _record(name: str, passed: bool, detail: str):
        ACCEPTANCE_LINES.append((name, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


class CatalogRuns:
    """Full optimizer runs of catalog scenarios, each done once per session."""

    def __init__(self, root):
        self.root = root
        self._cache = {}

    def get(self, name: str, overrides=None, tag: str = "a"):
        key = (name, tuple(sorted((overrides or {}).items())), tag)
        if key not in self._cache:
            spec = get_scenario(name)
            if overrides:
                spec = spec.with_overrides(overrides)
            out = self.root / f"{name}-{tag}-{len(self._cache)}"
            t0 = time.perf_counter()
            run = run_scenario(spec, out)
            self._cache[key] = (spec, run, time.perf_counter() - t0)
        return self._cache[key]


@pytest.fixture(scope="session")
def catalog_runs(tmp_path_factory):
    return CatalogRuns(tmp_path_factory.mktemp("runs"))


@pytest.fixture(scope="session")
def catalog_names():
    return CATALOG_NAMES
