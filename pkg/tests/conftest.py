import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
warnings.filterwarnings("ignore", module="numba")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """Ten 64x64 synthetic samples on disk (PPM images, PGM masks)."""
    from ducknet.synthetic import write_dataset

    root = tmp_path_factory.mktemp("synth10")
    write_dataset(root, 10, seed=5)
    return root


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line for an acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
