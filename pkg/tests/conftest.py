import numpy as np
import pytest

from selftrain_lab.synth import RngSeed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def seed():
    return RngSeed(7)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "xfailed", "xpassed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "call") != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
