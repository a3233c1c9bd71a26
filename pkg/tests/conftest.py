import numpy as np
import pytest

from cbcsim.array import FibreArrayConfig, GridSpec
from cbcsim.configio import SimSetup
from cbcsim.imaging import ImagingSpec

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        terminalreporter.write_line(
            f"{name}: {'PASS' if outcome == 'passed' else outcome.upper()}")


@pytest.fixture(scope="session")
def cfg19():
    """Default 19-fibre array on the full-resolution grid."""
    return FibreArrayConfig()


@pytest.fixture(scope="session")
def cfg7():
    """7-fibre array on a smaller grid; same physics, quicker transforms."""
    return FibreArrayConfig(rings=1, grid=GridSpec(n=256, pitch=20e-6))


@pytest.fixture(scope="session")
def setup19():
    return SimSetup()


@pytest.fixture(scope="session")
def setup7(cfg7):
    return SimSetup(config=cfg7,
                    imaging=ImagingSpec(intensity_crop=64, phase_crop=192,
                                        out_size=128))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, setup7):
    """Session-wide 8-pair dataset on the small setup."""
    from cbcsim.dataset import generate_pairs

    out = tmp_path_factory.mktemp("ds8")
    manifest = generate_pairs(setup7, count=8, base_seed=31337, out_dir=out)
    return out, manifest, setup7


def rotate_map(values: np.ndarray, degrees: float,
               centre: tuple[float, float]) -> np.ndarray:
    """Bilinear map rotation used by the symmetry checks."""
    from cbcsim.imaging import bilinear_sample

    cy, cx = centre
    th = np.radians(degrees)
    yy, xx = np.indices(values.shape, dtype=float)
    rows = cy + np.cos(th) * (yy - cy) - np.sin(th) * (xx - cx)
    cols = cx + np.sin(th) * (yy - cy) + np.cos(th) * (xx - cx)
    return bilinear_sample(values, rows, cols)
