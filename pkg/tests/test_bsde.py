import numpy as np
import pytest

from dynkingame import model as m
from dynkingame.bsde import (SolverError, barrier_fields, skorokhod_residual, solve_bsde, solve_drbsde,
                             solve_rbsde_lower, solve_rbsde_upper)
from dynkingame.chain import TimeStateGrid, build_chain
from dynkingame.oracle import enumerate_game_value
from conftest import simple_spec

GRID = TimeStateGrid(10, 21, -2, 2, 1.0)


def chain_for(spec, grid=GRID):
    return build_chain(spec, grid)


def test_zero_driver_constant_terminal():
    spec = simple_spec(g=0.7, jumps=m.JumpMeasure((1.0,), (0.4,)))
    sol = solve_bsde(chain_for(spec), spec, 0)
    assert np.all(sol.Y == 0.7)
    assert np.all(sol.A1_inc == 0) and np.all(sol.A2_inc == 0)


def test_discount_closed_form():
    spec = simple_spec(g=1.0, driver=m.DriverSpec("discount", r=0.1))
    sol = solve_bsde(chain_for(spec), spec, 0)
    assert np.max(np.abs(sol.Y[0] - (1 - 0.1 * GRID.dt) ** GRID.N)) < 1e-15


def test_kappa_abs_z_single_step():
    # sigma = 1, dt = dx^2 = 0.25: up/down 1/2 each, w = +-sqrt(dt)
    spec = simple_spec(sigma=1.0, T=0.25, driver=m.DriverSpec("z-ambiguity", kappa=0.4))
    grid = TimeStateGrid(1, 5, -1, 1, 0.25)
    ch = build_chain(spec, grid)
    term = np.array([0.0, 1.0, 0.0, -1.0, 0.0])  # up from node 2 is node 3
    term = term[::-1].copy()
    i = 2
    w_up, w_dn = ch.w[0, i, 0], ch.w[0, i, 2]
    Z = (term[i + 1] * w_up * 0.5 + term[i - 1] * w_dn * 0.5) / grid.dt
    expected = 0.0 + grid.dt * 0.4 * abs(Z)
    sol = solve_bsde(ch, spec, 0, terminal=term)
    assert sol.Y[0, i] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.4 * 0.5, abs=1e-15)


def test_lower_surrogate_minus_inf_matches_plain():
    spec = simple_spec(g=m.poly(0.1, 0.3), driver=m.DriverSpec("z-ambiguity", kappa=0.3, r=0.1),
                       jumps=m.JumpMeasure((1.0,), (0.5,)))
    ch = chain_for(spec)
    plain = solve_bsde(ch, spec, 0)
    low = solve_rbsde_lower(ch, spec, 0, np.full((GRID.N + 1, GRID.M), -1e9))
    up = solve_rbsde_upper(ch, spec, 0, np.full((GRID.N + 1, GRID.M), 1e9))
    assert np.array_equal(plain.Y, low.Y) and np.array_equal(plain.Y, up.Y)


def test_lower_clamp_forced():
    spec = simple_spec(g=0.0)
    ch = chain_for(spec)
    low = np.ones((GRID.N + 1, GRID.M))
    sol = solve_rbsde_lower(ch, spec, 0, low)
    assert np.all(sol.Y[:-1] == 1.0) and np.all(sol.Y[-1] == 0.0)
    assert np.all(sol.A1_inc[GRID.N - 1] == 1.0)


def test_upper_clamp_forced():
    spec = simple_spec(g=2.0)
    sol = solve_rbsde_upper(chain_for(spec), spec, 0, np.ones((GRID.N + 1, GRID.M)))
    assert np.all(sol.Y[:-1] == 1.0)
    assert np.all(sol.A2_inc[GRID.N - 1] == 1.0)


def test_drbsde_interior_constant():
    spec = simple_spec(h1=0.0, h2=2.0, g=1.0)
    sol = solve_drbsde(chain_for(spec), spec, 0)
    assert np.all(sol.Y == 1.0)
    assert np.all(sol.A1_inc == 0) and np.all(sol.A2_inc == 0)
    rep = skorokhod_residual(sol, *barrier_fields(spec, GRID))
    assert rep.ok and rep.flagged == []


def test_drbsde_terminal_above_upper_barrier():
    spec = simple_spec(h1=0.0, h2=2.0, g=3.0)
    sol = solve_drbsde(chain_for(spec), spec, 0)
    assert np.all(sol.Y[-1] == 3.0) and np.all(sol.Y[:-1] == 2.0)
    assert np.all(sol.A2_inc[GRID.N - 1] == 1.0)


def test_drbsde_rejects_crossed_barriers():
    spec = simple_spec(h1=0.0, h2=1.0)
    ch = chain_for(spec)
    h1 = np.zeros((GRID.N + 1, GRID.M))
    h1[3, 4] = 2.0
    with pytest.raises(SolverError, match="k=3, i=4"):
        solve_drbsde(ch, spec, 0, h1=h1)


def snell_spec():
    return simple_spec(sigma=1.0, T=0.5, h1=m.poly(0.0, 0.5), h2=None, g=m.poly(0.2, -0.3),
                       driver=m.DriverSpec("discount", r=0.2))


def test_snell_envelope_against_enumeration():
    spec = snell_spec()
    grid = TimeStateGrid(2, 9, -2, 2, 0.5)  # dx^2 = dt, binomial
    ch = build_chain(spec, grid)
    h1, _ = barrier_fields(spec, grid)
    sol = solve_rbsde_lower(ch, spec, 0, h1)
    for i0 in range(2, 7):
        assert abs(enumerate_game_value(ch, spec, 0, i0).value - sol.Y[0, i0]) < 1e-12


def test_upper_reflection_against_enumeration():
    spec = simple_spec(sigma=1.0, T=0.5, h1=None, h2=m.poly(0.3, 0.4), g=m.poly(0.1, 0.6),
                       driver=m.DriverSpec("z-ambiguity", kappa=0.2))
    grid = TimeStateGrid(2, 9, -2, 2, 0.5)
    ch = build_chain(spec, grid)
    _, h2 = barrier_fields(spec, grid)
    sol = solve_rbsde_upper(ch, spec, 0, h2)
    for i0 in range(2, 7):
        assert abs(enumerate_game_value(ch, spec, 0, i0).value - sol.Y[0, i0]) < 1e-12


def test_planted_skorokhod_violation():
    spec = simple_spec()
    sol = solve_drbsde(chain_for(spec), spec, 0)
    h1, h2 = barrier_fields(spec, GRID)
    sol.A1_inc[2, 3] = 1.0
    sol.Y[2, 3] = h1[2, 3] + 0.5
    rep = skorokhod_residual(sol, h1, h2, tol=1e-12)
    assert rep.flagged == [(2, 3, "lower", 0.5)]
    assert rep.lower_max == 0.5


def mixed_like():
    return simple_spec(h1=m.poly(0.1, 0.1), h2=m.poly(0.6, 0.05), g=m.piecewise([0.0], [(0.0, 0.2), (0.8, 0.0)]),
                       driver=m.DriverSpec("z-ambiguity", kappa=0.3, r=0.1, source=(0.05, 0.0, 0.0, 0.0)),
                       jumps=m.JumpMeasure((1.0, -1.0), (0.3, 0.5)), b=0.1)


def test_ordering_across_classes_and_sandwich():
    spec = mixed_like()
    ch = chain_for(spec)
    h1, h2 = barrier_fields(spec, GRID)
    up = solve_rbsde_upper(ch, spec, 0, h2)
    dr = solve_drbsde(ch, spec, 0)
    lo = solve_rbsde_lower(ch, spec, 0, h1)
    assert np.all(up.Y <= dr.Y) and np.all(dr.Y <= lo.Y)
    assert np.all(h1[:-1] <= dr.Y[:-1]) and np.all(dr.Y[:-1] <= h2[:-1])
    assert np.all(dr.A1_inc >= 0) and np.all(dr.A2_inc >= 0)
    rep = skorokhod_residual(dr, h1, h2)
    assert rep.lower_max == 0.0 and rep.upper_max == 0.0


def test_flow_property():
    spec = mixed_like()
    ch = chain_for(spec)
    full = solve_drbsde(ch, spec, 0)
    for k in (1, 4, 9):
        part = solve_drbsde(ch, spec, 0, terminal=full.Y[k], horizon=k)
        assert np.array_equal(part.Y[: k + 1], full.Y[: k + 1])


def test_implicit_close_to_explicit():
    spec = mixed_like().with_(driver=m.DriverSpec("discount", r=2.0, source=(0.1, 0.0, 0.0, 0.0)))
    gaps = []
    for n in (10, 20, 40):
        grid = TimeStateGrid(n, 21, -2, 2, 1.0)
        ch = build_chain(spec, grid)
        ex = solve_drbsde(ch, spec, 0)
        im = solve_drbsde(ch, spec, 0, implicit=True)
        gaps.append(np.max(np.abs(ex.Y - im.Y)))
        assert gaps[-1] <= 1.0 * grid.dt
    assert gaps[2] < gaps[0]


def test_implicit_nonconvergence_names_node():
    spec = simple_spec(driver=m.DriverSpec("discount", r=40.0), g=1.0)
    ch = chain_for(spec)
    with pytest.raises(SolverError, match=r"node \(k=9, i=0"):
        solve_bsde(ch, spec, 0, implicit=True)


def test_time_varying_source_increases_value():
    spec = mixed_like()
    ch = chain_for(spec)
    base = solve_drbsde(ch, spec, 0).Y
    d = spec.driver
    more = spec.with_(driver=m.DriverSpec("z-ambiguity", kappa=d.kappa, r=d.r, source=(0.05, 0.1, 0.0, 0.0)))
    assert np.all(solve_drbsde(ch, more, 0).Y >= base)
