import numpy as np
import pytest

from polyct.geometry import detectors_for_coverage, make_geometry


def small_geometry(size=16, voxel=1.0, n_angles=24, sod=60.0, spacing=1.0):
    n = detectors_for_coverage(sod, size, size, (voxel, voxel), spacing)
    return make_geometry(sod, sod, n_angles, (0.0, 360.0), n, size, size, (voxel, voxel),
                         angular_spacing=spacing)


@pytest.fixture
def geom16():
    return small_geometry()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def record(criterion: str, ok: bool, detail: str) -> None:
    """Log one acceptance line; the terminal summary prints them in order."""
    ACCEPTANCE.append((criterion, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
