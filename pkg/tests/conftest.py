from pathlib import Path

import pytest

from mpbs.feeder import load_scenario, parse_feeder

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
SCRIPTS = ROOT / "scripts"

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (ok, detail)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def bench_feeder():
    return parse_feeder(FIXTURES / "bench_feeder.json")


@pytest.fixture(scope="session")
def fuse_case():
    return parse_feeder(FIXTURES / "fuse_risk_feeder.json"), load_scenario(FIXTURES / "fuse_risk_scenario.json")


@pytest.fixture(scope="session")
def recloser_case():
    return parse_feeder(FIXTURES / "recloser_feeder.json"), load_scenario(FIXTURES / "recloser_scenario.json")


@pytest.fixture(scope="session")
def ieee123():
    return parse_feeder(FIXTURES / "ieee123_feeder.json"), load_scenario(FIXTURES / "ieee123_scenario.json")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
