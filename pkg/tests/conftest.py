import numpy as np
import pytest

from wlsrom.basis import collect_snapshots, pod_basis
from wlsrom.core_ode import CRANK_NICOLSON, integrate_fom, uniform_grid
from wlsrom.models import (SodConfig, make_linear_model, make_sod_model, random_stable_matrix,
                           sod_initial_state)
from wlsrom.rom_classic import ReducedOperators

# desk-scale Sod setup shared by the solver and acceptance tests
SOD_CELLS = 100
SOD_DT = 0.002
SOD_T = 0.2
SOD_K = 10
SOD_SKIP = 2


class SodSetup:
    def __init__(self):
        self.config = SodConfig(n_cells=SOD_CELLS)
        self.model = make_sod_model(self.config)
        self.x0 = sod_initial_state(self.config)
        self.grid = uniform_grid(SOD_T, SOD_DT)
        self.fom = integrate_fom(self.model, CRANK_NICOLSON, self.grid, self.x0)
        self.basis = pod_basis(collect_snapshots(self.fom, SOD_SKIP), SOD_K)
        self.ops = ReducedOperators(self.basis)


@pytest.fixture(scope="session")
def sod():
    return SodSetup()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def linear10():
    """10-dimensional stable linear model, initial state and a K=4 basis."""
    r = np.random.default_rng(7)
    A = random_stable_matrix(10, r)
    model = make_linear_model(A)
    x0 = r.standard_normal(10)
    V, _ = np.linalg.qr(r.standard_normal((10, 4)))
    from wlsrom.basis import SpatialBasis
    return model, A, x0, ReducedOperators(SpatialBasis(V, np.zeros(10)))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
