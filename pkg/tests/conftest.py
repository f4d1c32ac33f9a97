import numpy as np
import pytest

from rrt import engine, model
from rrt.data import Dataset
from rrt.optim import TrainConfig


def blobs(n=600, dim=6, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 2.0, size=(classes, dim))
    y = rng.integers(0, classes, size=n)
    x = centers[y] + rng.normal(size=(n, dim))
    return Dataset(x.astype(np.float32), y.astype(np.int64), classes)


@pytest.fixture(scope="session")
def toy():
    """A small trained ReLU MLP and its data: (net, data)."""
    data = blobs()
    layers = [engine.dense(6, 16), engine.activation(), engine.dense(16, 12), engine.activation(),
              engine.dense(12, 8), engine.activation(), engine.dense(8, 3)]
    net = model.Network(layers, model.init_params(layers, (6,), 0), (6,), 3, "toy")
    net = model.train_baseline(net, data, TrainConfig(epochs=10, batch_size=32))
    return net, data


# ---------------------------------------------------------------- acceptance reporting

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker
    detail = dict(report.user_properties).get("measured", "")
    prev = _criteria.get(number)
    if prev is None or prev[1] == "PASS":
        _criteria[number] = (title, "PASS" if report.passed else "FAIL", detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
