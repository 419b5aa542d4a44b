import numpy as np
import pytest

from fishermask.data import Dataset
from fishermask.model import ModelSpec, init_params

_acceptance = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    ok = _acceptance.setdefault(crit, [True, ""])
    if report.failed:
        ok[0] = False
    if report.skipped:
        ok[1] = "skipped: " + str(report.longrepr[-1]).removeprefix("Skipped: ")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), (ok, skip) in sorted(_acceptance.items()):
        status = "PASS" if ok else "FAIL"
        details = "; ".join(_notes.get(num, []) + ([skip] if skip else []))
        terminalreporter.write_line(f"[{status}] {num}. {title}" + (f" | {details}" if details else ""))


@pytest.fixture
def note(request):
    """Attach a measured value to the summary line of this test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    return lambda text: _notes.setdefault(marker.args[0], []).append(text)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(kind, d, n, hidden=5, seed=0, scale=1.0):
    """Model with every parameter (biases included) drawn at random."""
    spec = ModelSpec(kind, d, n, hidden if kind == "mlp1" else None, 0.1, seed)
    m = init_params(spec)
    theta = np.random.default_rng(seed + 1000).normal(0.0, scale, m.layout.total)
    return m.with_theta(theta)


def random_pool(n_rows, d, n_classes, seed=0):
    r = np.random.default_rng(seed)
    return Dataset(r.normal(size=(n_rows, d)), r.integers(0, n_classes, n_rows), n_classes)
