import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _run_root(tmp_path, monkeypatch):
    """Keep every run directory a test creates inside the test's tmp dir."""
    monkeypatch.setenv("PATCHWORK_RUN_ROOT", str(tmp_path / "runs"))
    return tmp_path


def pytest_addoption(parser):
    parser.addoption("--acceptance-only", action="store_true", default=False,
                     help="run only the acceptance criteria")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--acceptance-only"):
        keep = [it for it in items if "test_acceptance" in it.nodeid]
        items[:] = keep
