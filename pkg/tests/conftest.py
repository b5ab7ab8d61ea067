import numpy as np
import pytest

from dynclass.baselines import SyntheticSpec, generate_synthetic
from dynclass.dataset import Dataset


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


@pytest.fixture(scope="session")
def separable():
    """One feature equal to the target: every interval is perfectly learnable."""
    rng = np.random.default_rng(3)
    y = rng.uniform(10, 20, 600)
    return Dataset(("x",), y[:, None], y)


@pytest.fixture(scope="session")
def synthetic_small():
    return generate_synthetic(SyntheticSpec(1200, 3, "normal", 0.97, 0.0, seed=11))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion; echoed in the terminal summary."""

    def _record(criterion: int, status: str, detail: str):
        line = f"criterion {criterion}: {status} | {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
