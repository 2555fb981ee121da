import pytest

from spartq.cost import Workload
from spartq.data import BBox, CellHistogram, GridSpec, Mixture, build_histogram, gen_synthetic

SKEWED = Mixture(((0.3, 0.35), (0.72, 0.7)), (0.18, 0.2), (0.8, 0.2))
SMALL_SKEW = ((0.005, 0.25), (0.01, 0.50), (0.03, 0.25))
LARGE_SKEW = ((0.005, 0.02), (0.01, 0.03), (0.03, 0.95))


@pytest.fixture
def unit_grid():
    def make(g):
        return GridSpec(BBox(0.0, 0.0, 1.0, 1.0), g)

    return make


@pytest.fixture(scope="session")
def skewed_data():
    return gen_synthetic("gaussian", 2000, 11, SKEWED)


@pytest.fixture(scope="session")
def small_skew():
    return Workload.of(SMALL_SKEW)


@pytest.fixture(scope="session")
def large_skew():
    return Workload.of(LARGE_SKEW)


def random_histogram(g, rng):
    counts = rng.integers(0, 20, size=(g, g))
    return CellHistogram(counts, int(counts.sum()))


@pytest.fixture
def hist_of():
    def make(data, g):
        grid = GridSpec(data.bbox(), g)
        return grid, build_histogram(data, grid)

    return make


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
