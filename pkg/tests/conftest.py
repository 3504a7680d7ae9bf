import numpy as np
import pytest

from lmcar.data import SyntheticSpec, make_synthetic, split, standardize, apply_standardization

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    _acceptance.setdefault(number, (title, []))[1].append(
        "FAIL" if rep.failed else "SKIP" if rep.skipped else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, results = _acceptance[number]
        status = "FAIL" if "FAIL" in results else "PASS" if "PASS" in results else "SKIP"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")


@pytest.fixture(scope="session")
def synthetic():
    """N=200, D=50, informative dims 0-2, separation 4 sigma."""
    ds, informative = make_synthetic(SyntheticSpec((100, 100), 50, (0, 1, 2), 4.0, 1.0, seed=0))
    return ds, informative


@pytest.fixture(scope="session")
def synthetic_split(synthetic):
    ds, _ = synthetic
    train_raw, test_raw = split(ds, 0, 0.7, seed=1)
    train_std, params = standardize(train_raw)
    return train_raw, train_std, apply_standardization(test_raw, params), params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
