import numpy as np
import pytest

from optresp.config import parse_config
from optresp.experiment import ExperimentContext
from optresp.mesh import build_grid, restrict_to_domain


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("kernel-cache")


@pytest.fixture(scope="session")
def coarse_config():
    return parse_config(overrides=["threads=1"])


@pytest.fixture(scope="session")
def coarse(coarse_config, cache_dir):
    """Symmetric experiment on the coarse profile, shared by the slow tests."""
    return ExperimentContext(coarse_config, cache_dir)


@pytest.fixture(scope="session")
def asymmetric(coarse_config, cache_dir):
    return ExperimentContext(coarse_config.replace(obs_mu=-0.5), cache_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return build_grid(1.0, 8)


@pytest.fixture
def small_domain(small_grid):
    return restrict_to_domain(small_grid, 0.5)


_ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    """``criterion(k, ok, detail)`` records a PASS/FAIL line, then asserts ``ok``."""

    def check(k, ok, detail):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
