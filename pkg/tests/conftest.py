import numpy as np
import pytest

from kamtori import gfmaps
from kamtori.kamcore import KamConfig, run_kam
from kamtori.models import get_model

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

# filled by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rotator():
    return get_model("twist1")


@pytest.fixture(scope="session")
def benchmark_run(rotator):
    """Rotator + eps cos q at eps=1e-3, t=0.1, golden-mean action, default schedule."""
    xi = np.array([GOLDEN])
    gf = gfmaps.from_symplectic_euler(rotator, xi, 1e-3, 0.1)
    return run_kam(gf, xi, config=KamConfig(gamma=1e-2, tau=3, K0=8))


DRIFT_STEPS = [0.2, 0.1, 0.05, 0.025]
DRIFT_XI = [0.8]


@pytest.fixture(scope="session")
def drift():
    """Scheme-vs-flow drift on the quartic twist, computed once per scheme on demand."""
    from kamtori.verify import flow_vs_algorithm
    model = get_model("quartic1")
    cache = {}

    def get(scheme):
        if scheme not in cache:
            cache[scheme] = flow_vs_algorithm(model, DRIFT_XI, 1e-3, DRIFT_STEPS, scheme, KamConfig())
        return cache[scheme]

    return get
