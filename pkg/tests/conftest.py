import numpy as np
import pytest

from stochl96 import dataset, dynamics, models, pod


@pytest.fixture(scope="session")
def c4_data():
    """Full-length c=4 truth run (1500 MTU spin-up, 500 MTU stored)."""
    return dataset.generate_truth(dynamics.preset("c4"), seed=1)


@pytest.fixture(scope="session")
def c10_data():
    return dataset.generate_truth(dynamics.preset("c10"), seed=1)


@pytest.fixture(scope="session")
def c4_fit(c4_data):
    return models.fit_derivative_models(c4_data)


@pytest.fixture(scope="session")
def c4_basis(c4_fit):
    return c4_fit.basis


@pytest.fixture(scope="session")
def small_data():
    """Short c=4 run for plumbing tests."""
    return dataset.generate_truth(dynamics.preset("c4"), seed=7, spinup_mtu=20.0, production_mtu=40.0)


@pytest.fixture(scope="session")
def small_basis(small_data):
    return pod.compute_pod(dataset.measure_subgrid_tendency(small_data))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one line per criterion -----------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if not name.startswith("test_criterion_"):
        return
    number, _, title = name[len("test_criterion_"):].partition("_")
    entry = _CRITERIA.setdefault(int(number), {"title": title.replace("_", " "), "ok": True, "measured": ""})
    if report.failed:
        entry["ok"] = False
    for key, val in report.user_properties:
        if key == "measured":
            entry["measured"] = val


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["measured"]:
            line += f"  [{e['measured']}]"
        terminalreporter.write_line(line)
