import numpy as np
import pytest

from canopy.raster import CANONICAL_BANDS, Raster

_acceptance_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion; reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_results.append((marker.args[0], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, duration in _acceptance_results:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {label} ({duration:.2f}s)")


def make_raster(values, names=None, **kwargs):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        values = values[np.newaxis]
    names = names or [f"X{i}" for i in range(values.shape[0])]
    return Raster(values, names, **kwargs)


def band_raster(rng, height=16, width=16, low=0.0, high=1.0):
    """Random raster holding the eight canonical bands."""
    return Raster(rng.uniform(low, high, size=(len(CANONICAL_BANDS), height, width)), CANONICAL_BANDS)


def pixel_raster(**bands):
    """1x1 raster with the given band values, e.g. pixel_raster(B8=0.6, B4=0.2)."""
    names = list(bands)
    return Raster(np.array([[[bands[n]]] for n in names], dtype=np.float32), names)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
