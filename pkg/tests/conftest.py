from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gptaudit.fixture import FixtureServer  # noqa: E402

ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.fixture
def fixture_server():
    servers = []

    def start(corpus=None) -> FixtureServer:
        srv = FixtureServer(corpus).start()
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.stop()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{ACCEPTANCE_RESULTS[name]}  {name}")
