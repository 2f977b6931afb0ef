import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from spinbath.catalog import LatticeCatalog, dipolar_diamond_catalog  # noqa: E402
from spinbath.forward import ExperimentSpec, SpinBath, coherence_signal, tau_grid_even  # noqa: E402
from spinbath.likelihood import LikelihoodConfig, ObservedSignal  # noqa: E402
from spinbath.samplers import Target  # noqa: E402

# six sites on a 2 x 3 grid, 1.5 A apart; radius 2.2 links edge neighbours only
SIX_POSITIONS = np.array([[0, 0, 0], [1.5, 0, 0], [3, 0, 0],
                          [0, 1.5, 0], [1.5, 1.5, 0], [3, 1.5, 0]], dtype=float)
SIX_COUPLINGS = np.array([[-60, 80], [20, 150], [-150, 40], [90, 30], [10, 60], [-30, 200]],
                         dtype=float)
SIX_RADIUS = 2.2


@pytest.fixture(scope="session")
def diamond():
    return dipolar_diamond_catalog()


@pytest.fixture
def six_sites():
    return LatticeCatalog(SIX_POSITIONS, SIX_COUPLINGS[:, 0], SIX_COUPLINGS[:, 1], radius=SIX_RADIUS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# the enumeration problem: lambda pinned, verbatim signal, truth = sites {0, 2}
SIX_LAMBDA = 0.01
SIX_K_MAX = 2


def six_site_target(catalog):
    spec = ExperimentSpec(tau_grid_even(20, 0.008))
    clean = coherence_signal(SpinBath(catalog.couplings([0, 2])), SIX_LAMBDA, spec)
    noisy = clean + np.random.default_rng(5).normal(0, 0.01, clean.size)
    return Target(catalog, spec, ObservedSignal(spec.tau_grid, noisy), LikelihoodConfig(sigma2=1e-2))


def six_site_table(target):
    return {c: target.loglik(c, SIX_LAMBDA)
            for c in oracles.configurations(target.catalog.n_sites, SIX_K_MAX)}


@pytest.fixture
def six_target(six_sites):
    return six_site_target(six_sites)


def pytest_configure(config):
    config.criteria_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "criteria_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.criteria_lines.append(line)
        print(line)
        return ok
    return report
