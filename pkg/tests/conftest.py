import functools
import warnings

import numpy as np
import pytest

from dasswipt.scenario import SystemParams, TopologyConfig, backhaul_cap, generate_scenario

TINY_GAMMA_DB = (6.0, 9.0)
TINY_CAP = backhaul_cap(TINY_GAMMA_DB)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def tiny_params(**over) -> SystemParams:
    kw = dict(L=2, K=2, M=1, Nt=2, gamma_req_db=TINY_GAMMA_DB, C_backhaul_max=TINY_CAP, sigma_est_sq=0.05)
    kw.update(over)
    return SystemParams(**kw)


@functools.lru_cache(maxsize=None)
def tiny_scenario(seed: int = 0, **over):
    return generate_scenario(TopologyConfig(), tiny_params(**over), seed)


@pytest.fixture
def tiny():
    return tiny_scenario(0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def tiny_enumeration(seed: int, **over):
    from dasswipt.gbd import enumerate_patterns

    return enumerate_patterns(tiny_scenario(seed, **over))


@functools.lru_cache(maxsize=None)
def tiny_gbd(seed: int, kappa: float = 1e-4, **over):
    from dasswipt.gbd import run_gbd

    return run_gbd(tiny_scenario(seed, **over), kappa=kappa)


@functools.lru_cache(maxsize=None)
def tiny_sca(seed: int, **over):
    from dasswipt.sca import run_sca

    return run_sca(tiny_scenario(seed, **over))

# a cap at the full per-RRH load never binds with K=2
TINY_LOOSE_CAP = backhaul_cap(TINY_GAMMA_DB, fraction=1.0)


@functools.lru_cache(maxsize=None)
def feasible_tiny_seeds(n: int = 20) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """First ``n`` tiny seeds on which GBD finds a feasible pattern, and the seeds skipped on the way."""
    from dasswipt.errors import InstanceInfeasible

    ok, skipped, seed = [], [], 0
    while len(ok) < n:
        try:
            tiny_gbd(seed)
            ok.append(seed)
        except InstanceInfeasible:
            skipped.append(seed)
        seed += 1
    return tuple(ok), tuple(skipped)
