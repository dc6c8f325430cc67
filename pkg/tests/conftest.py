import re

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("stwave", deadline=None, max_examples=40)
settings.load_profile("stwave")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _criterion_key(line):
    ident = line.split()[1]
    return int(re.match(r"\d+", ident).group()), ident


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "xfailed", "xpassed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_key):
            terminalreporter.write_line(line)
