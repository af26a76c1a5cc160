import numpy as np
import pytest

import kelab as kl
from kelab.errors import ValidationError
from kelab.functionals import time_derivatives
from kelab.geodesic import (
    ke_residual,
    legendre_geodesic,
    load_spacetime,
    monge_ampere_residual,
    save_spacetime,
    solve_epsilon_geodesic,
    solve_ke,
    verify_chen_bounds,
)
from kelab.geometry import derivative, second_derivative


def test_solve_ke_matches_round_metric():
    grid = kl.SGrid(-15.0, 15.0, 1025)
    fs = kl.fubini_study_potential(grid)
    u = solve_ke(grid)
    assert np.max(np.abs(u.values - fs.values)) < 1e-8


def test_fs_residual_before_solving():
    grid = kl.SGrid(-15.0, 15.0, 513)
    fs = kl.fubini_study_potential(grid)
    assert np.max(np.abs(ke_residual(fs))) < 10.0 * grid.ds ** 2


def test_solve_ke_basin_of_attraction():
    grid = kl.SGrid(-15.0, 15.0, 1025)
    fs = kl.fubini_study_potential(grid)
    start = kl.ReducedPotential(grid, fs.values + 0.3 / np.cosh(grid.nodes()))
    u, info = solve_ke(grid, initial=start, full_output=True)
    assert info["iterations"] <= 30
    assert np.max(np.abs(u.values - fs.values)) < 1e-8


def test_solve_ke_quadratic_tail():
    grid = kl.SGrid(-15.0, 15.0, 513)
    fs = kl.fubini_study_potential(grid)
    start = kl.ReducedPotential(grid, fs.values + 0.3 / np.cosh(grid.nodes()))
    _, info = solve_ke(grid, initial=start, full_output=True)
    hist = info["history"]
    # once below 1e-2, each step at least squares the residual (up to a
    # modest constant) until the round-off floor
    for a, b in zip(hist, hist[1:]):
        if 1e-13 < a < 1e-2:
            assert b < 30.0 * a * a


def test_solve_ke_rejects_bad_tol():
    with pytest.raises(ValidationError):
        solve_ke(kl.SGrid(-15.0, 15.0, 513), tol=-1.0)


def test_legendre_endpoints(ke_pair):
    _, u0, u1 = ke_pair
    ds2 = 10.0 * u0.grid.ds ** 2
    assert np.max(np.abs(legendre_geodesic(u0, u1, 0.0).values - u0.values)) < ds2
    assert np.max(np.abs(legendre_geodesic(u0, u1, 1.0).values - u1.values)) < ds2


def test_legendre_is_pullback_flow(ke_pair):
    # for endpoints related by z -> a z the dual potential shifts by
    # t*tau*(1-x), i.e. the geodesic is the pullback flow u0(s + t*tau) - t*tau
    _, u0, u1 = ke_pair
    for t in (0.25, 0.5, 0.75):
        fiber = legendre_geodesic(u0, u1, t)
        oracle = kl.pullback_potential(u0, t * 0.5)
        assert np.max(np.abs(fiber.values - oracle.values)) < 1e-10


def test_legendre_velocity_formula(geodesic_suite):
    # phi' = tau * (u_t' - 1) along the pullback-flow geodesic
    leg = geodesic_suite["legendre"]
    grid = geodesic_suite["grid"]
    phi_p = time_derivatives(leg.values, leg.dt)[0]
    for j in (16, 32, 48):
        up = derivative(leg.values[j], grid.ds)
        assert np.max(np.abs(phi_p[j] - 0.5 * (up - 1.0))) < 20.0 * leg.dt ** 2


def test_legendre_solves_degenerate_equation(geodesic_suite):
    leg = geodesic_suite["legendre"]
    grid = geodesic_suite["grid"]
    res = monge_ampere_residual(leg)  # epsilon = 0
    scale = np.max(np.abs(second_derivative(leg.background.values, grid.ds)))
    assert np.max(np.abs(res)) < 20.0 * (grid.ds ** 2 + leg.dt ** 2) * scale


def test_legendre_validates_inputs(ke_pair):
    _, u0, u1 = ke_pair
    with pytest.raises(ValidationError):
        legendre_geodesic(u0, u1, 1.5)


def test_epsilon_solver_residual_and_identity(geodesic_suite):
    grid = geodesic_suite["grid"]
    for eps, sol in geodesic_suite["sweep"].items():
        res = monge_ampere_residual(sol)
        assert np.max(np.abs(res)) < 1e-8
        # f det g = eps det h, with f = phi'' - |dbar phi'|^2
        U = sol.values
        dt, ds = sol.dt, grid.ds
        dtt = (U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / dt**2
        dss = (U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]) / ds**2
        dts = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4 * dt * ds)
        f = dtt - dts**2 / dss
        hpp = second_derivative(sol.background.values, ds)[1:-1]
        assert np.max(np.abs(f * dss - eps * hpp)) < 10.0 * 1e-8
        # space-time positivity at all interior nodes
        assert np.min(dtt * dss - dts**2) > 0.0


def test_epsilon_solver_endpoint_fidelity(geodesic_suite):
    u0, u1 = geodesic_suite["u0"], geodesic_suite["u1"]
    for sol in geodesic_suite["sweep"].values():
        assert np.array_equal(sol.values[0], u0.values)
        assert np.array_equal(sol.values[-1], u1.values)


def test_epsilon_fibers_remain_valid(geodesic_suite):
    sol = geodesic_suite["sweep"][1e-2]
    for j in range(0, 65, 8):
        sol.fiber(j).validate()


def test_epsilon_convergence_to_legendre(geodesic_suite):
    leg = geodesic_suite["legendre"]
    sups = {
        eps: float(np.max(np.abs(sol.values - leg.values)))
        for eps, sol in geodesic_suite["sweep"].items()
    }
    eps_desc = sorted(sups, reverse=True)
    vals = [sups[e] for e in eps_desc]
    assert vals[0] > vals[1] > vals[2]  # strictly decreasing
    slope = np.polyfit(np.log(eps_desc), np.log(vals), 1)[0]
    assert slope >= 0.9


def test_epsilon_solver_generic_endpoints():
    # endpoints need not be Einstein or related by a pullback
    grid = kl.SGrid(-15.0, 15.0, 257)
    u0 = solve_ke(grid)
    rng = np.random.default_rng(17)
    u1 = kl.random_convex_potential(grid, rng, n_bumps=4, amplitude=0.15)
    sol = solve_epsilon_geodesic(u0, u1, 1e-2, 33)
    assert np.max(np.abs(monge_ampere_residual(sol))) < 1e-8


def test_epsilon_solver_large_shear():
    # widely separated pullback endpoints exercise the geometric boundary
    # increments (a t-linear clamp breaks convexity near the ends here)
    grid = kl.SGrid(-15.0, 15.0, 257)
    u0 = solve_ke(grid)
    sol = solve_epsilon_geodesic(
        kl.pullback_potential(u0, -1.5), kl.pullback_potential(u0, 1.5), 1e-2, 33
    )
    assert np.max(np.abs(monge_ampere_residual(sol))) < 1e-8


def test_equal_endpoints_collapse():
    grid = kl.SGrid(-15.0, 15.0, 257)
    u0 = solve_ke(grid)
    for eps in (1e-2, 1e-3):
        sol = solve_epsilon_geodesic(u0, u0, eps, 33)
        dev = np.max(np.abs(sol.values - u0.values[None, :]))
        assert dev <= 0.2 * eps


def test_epsilon_solver_validates(ke_pair):
    _, u0, u1 = ke_pair
    with pytest.raises(ValidationError):
        solve_epsilon_geodesic(u0, u1, -1.0, 17)


def test_newton_quadratic_once_elliptic(ke_pair):
    _, u0, u1 = ke_pair
    _, info = solve_epsilon_geodesic(u0, u1, 1e-2, 17, full_output=True)
    hist = info["history"]
    below = [r for r in hist if r < 1e-4]
    # tail of the iteration contracts at least quadratically-ish
    for a, b in zip(below, below[1:]):
        if a > 1e-11:
            assert b < max(50.0 * a * a, 1e-12)


def test_chen_bounds_uniform(geodesic_suite):
    rep = verify_chen_bounds(geodesic_suite["sweep"])
    assert not rep.flagged
    assert np.all(rep.sup_phi_prime < 10.0)
    d = rep.to_dict()
    assert len(d["epsilons"]) == 3


def test_chen_bounds_legendre_velocity(geodesic_suite):
    # |phi'| = |tau| sup|u_t' - 1| <= |tau| on the exact geodesic
    leg = geodesic_suite["legendre"]
    phi_p = time_derivatives(leg.values, leg.dt)[0]
    assert np.max(np.abs(phi_p)) <= 0.5 + 1e-6


def test_spacetime_round_trip(geodesic_suite, tmp_path):
    sol = geodesic_suite["sweep"][1e-2]
    jp, cp = tmp_path / "st.json", tmp_path / "st.csv"
    save_spacetime(sol, jp, cp)
    back = load_spacetime(jp, cp)
    assert back.epsilon == sol.epsilon
    assert back.grid == sol.grid
    assert np.allclose(back.values, sol.values, rtol=0, atol=1e-15)


def test_sweep_requires_positive_eps(ke_pair):
    _, u0, u1 = ke_pair
    with pytest.raises(ValidationError):
        kl.solve_epsilon_sweep(u0, u1, [0.1, -0.1], m=17)
