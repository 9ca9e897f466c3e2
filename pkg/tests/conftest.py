import numpy as np
import pytest

from maskdispatch.lp import SOLVE_STATS
from maskdispatch.casefile import load_case
from importlib.resources import files


@pytest.fixture(scope="session", autouse=True)
def optimality_certificates():
    """Every optimal solve in the whole run must certify duality and
    complementary slackness within tolerance (scaled by 1 + |objective|)."""
    SOLVE_STATS.reset()
    yield
    if SOLVE_STATS.n_optimal:
        assert SOLVE_STATS.max_gap <= 1e-6, \
            f"worst duality gap {SOLVE_STATS.max_gap:.3e} over {SOLVE_STATS.n_optimal} solves"
        assert SOLVE_STATS.max_cs_violation <= 1e-6, \
            f"worst complementary slackness {SOLVE_STATS.max_cs_violation:.3e}"


@pytest.fixture(scope="session")
def threebus():
    path = files("maskdispatch").joinpath("cases/threebus.case")
    return load_case(str(path))


@pytest.fixture(scope="session")
def threebus_golden():
    return {
        "objective": 1330.0,
        "gen_totals": {"GENCO1": 110.0, "GENCO2": 80.0},
        "load_totals": {"LSE1": 190.0},
        "gen_segments": {"GENCO1": np.array([90.0, 20.0, 0.0]),
                         "GENCO2": np.array([80.0, 0.0, 0.0])},
        "load_segments": {"LSE1": np.array([150.0, 40.0, 0.0])},
        "angles": np.array([[0.0, -1.0, -10.0]]),
        "flows": np.array([[10.0, 90.0, 100.0]]),
        "lmp": np.array([[15.0, 15.5, 16.0]]),
    }
