import numpy as np
import pytest
from scipy.optimize import bisect

from catdrape.catenary import FREE, H_MIN, LocalFrame, Material, catenary_length
from catdrape.scenario import build_simulation, parse_scenario
from catdrape.simulation import simulate

TABLE1 = Material(m=0.3143, g=9.8, E=1.0e8, I=9.0e-14)


def bisection_H(span, L_set, mat, n_pt):
    fr = LocalFrame.from_anchors([0, 0, 0], [span, 0, 0])
    f = lambda H: catenary_length(fr, H, FREE, FREE, mat, n_pt) - L_set  # noqa: E731
    return bisect(f, H_MIN, 1e3, xtol=1e-15, rtol=1e-14, maxiter=400)


def random_instances(rng, n):
    """Random level spans that can take up their set length (L(H_min) > L_set)."""
    out = []
    while len(out) < n:
        span = rng.uniform(0.05, 0.15)
        L = span * rng.uniform(1.005, 1.08)
        mat = Material(rng.uniform(0.1, 1.0), 9.8, rng.uniform(5e7, 5e8), rng.uniform(1e-14, 5e-13))
        fr = LocalFrame.from_anchors([0, 0, 0], [span, 0, 0])
        if catenary_length(fr, H_MIN, FREE, FREE, mat) > L:
            out.append((span, L, mat))
    return out


@pytest.fixture
def table1():
    return TABLE1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bundled():
    """The bundled flat sheared mold scenario and its base directory."""
    return parse_scenario("flat_sheared_mold")


@pytest.fixture(scope="session")
def bundled_trace(bundled):
    scenario, base = bundled
    sim, trajectory = build_simulation(scenario, base)
    return simulate(sim, trajectory)
