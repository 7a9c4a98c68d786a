from pathlib import Path

import numpy as np
import pytest

from crdonn.field import GridSpec

DATA = Path(__file__).parent / "data"
PITCH = 36e-6
WAVELENGTH = 532e-9


def mnist_subset_paths(split: str) -> tuple[Path, Path]:
    return (DATA / f"mnist5k-{split}-images-idx3-ubyte.gz",
            DATA / f"mnist5k-{split}-labels-idx1-ubyte.gz")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return GridSpec(8, 8, PITCH, WAVELENGTH, pad=2)


def random_field(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
