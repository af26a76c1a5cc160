"""Shared fixtures.  The expensive objects (KE solve, epsilon sweep, fiber
traces) are built once per session and reused by the unit and acceptance
suites."""
import warnings

import numpy as np
import pytest

import kelab as kl
from kelab.functionals import PathOfPotentials, ding_derivatives
from kelab.geodesic import legendre_path
from kelab.geometry import fiber_geometry

warnings.filterwarnings(
    "ignore", message="weighted measure not negligible.*"
)

TAU = 0.5
EPS_SCHEDULE = (1e-1, 1e-2, 1e-3)


@pytest.fixture(scope="session")
def grid_1025():
    return kl.SGrid(-15.0, 15.0, 1025)


@pytest.fixture(scope="session")
def fs_1025(grid_1025):
    fs = kl.fubini_study_potential(grid_1025)
    return fs, fiber_geometry(fs)


@pytest.fixture(scope="session")
def ke_pair():
    """KE metric and its pullback on the production grid."""
    grid = kl.SGrid(-15.0, 15.0, 513)
    u0 = kl.solve_ke(grid)
    u1 = kl.pullback_potential(u0, TAU)
    return grid, u0, u1


@pytest.fixture(scope="session")
def geodesic_suite(ke_pair):
    """Exact geodesic, epsilon sweep and all per-path Ding reports."""
    grid, u0, u1 = ke_pair
    leg = legendre_path(u0, u1, 65)
    leg_path = PathOfPotentials.from_spacetime(leg, u0)
    leg_geoms = [fiber_geometry(f) for f in leg_path.fibers]
    sweep = kl.solve_epsilon_sweep(u0, u1, EPS_SCHEDULE, m=65)
    reports = {}
    geoms = {}
    for eps, sol in sweep.items():
        p = PathOfPotentials.from_spacetime(sol, u0)
        g = [fiber_geometry(f) for f in p.fibers]
        reports[eps] = (p, g, ding_derivatives(p, g))
        geoms[eps] = g
    return {
        "grid": grid,
        "u0": u0,
        "u1": u1,
        "legendre": leg,
        "leg_path": leg_path,
        "leg_geoms": leg_geoms,
        "leg_report": ding_derivatives(leg_path, leg_geoms),
        "sweep": sweep,
        "reports": reports,
    }


@pytest.fixture(scope="session")
def traces_all(geodesic_suite):
    """Epsilon traces on every fiber of the sweep."""
    sweep = geodesic_suite["sweep"]
    eps_desc = sorted(sweep, reverse=True)
    t_grid = np.linspace(0.0, 1.0, 65)
    traces = {}
    for t in t_grid:
        recs = [kl.fiber_decompose(sweep[e], float(t), 8) for e in eps_desc]
        traces[float(t)] = kl.EpsilonTrace(float(t), tuple(recs))
    return traces


@pytest.fixture(scope="session")
def extracted_fields(geodesic_suite, traces_all):
    """Limiting vector field extracted on every fiber."""
    fields = {}
    for j, (t, tr) in enumerate(sorted(traces_all.items())):
        rep = kl.cluster_analysis(tr)
        fields[t] = kl.extract_vector_field(
            tr, rep, geodesic_suite["leg_path"].fibers[j],
            geodesic_suite["leg_geoms"][j],
        )
    return fields
