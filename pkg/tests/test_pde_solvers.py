import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import FROZEN, cosine_mode, wrapped_gaussian

from pgflow.errors import CFLFailure, InvalidArgument
from pgflow.experiments import _cosine_control, duality_gap, run_order_check
from pgflow.fields import ControlField, SpaceTimeGrid
from pgflow.flow import cost_J
from pgflow.pde import (
    SolverConfig,
    collect_fp_reports,
    fundamental_solution,
    solve_fp,
    solve_hj,
    substep_schedule,
)
from pgflow.problem import TorusGeometry
from pgflow.problems import BUILTINS, DEFAULT_HORIZON, build_problem, constant_problem

TWO_PI = 2 * np.pi


def _grid(T=0.2, n_t=17, n_x=32, n=1):
    return SpaceTimeGrid(TorusGeometry(n, 1, n), T, n_t, n_x)


# --- value function --------------------------------------------------------------------------------


@given(st.floats(-5, 5), st.floats(-2, 2), st.integers(0, 2**31))
def test_constant_terminal_without_running_cost_is_preserved(c, drift, seed):
    sp = constant_problem(drift=drift, terminal=c)
    g = _grid(n_t=5, n_x=16)
    u = ControlField(g, np.random.default_rng(seed).normal(size=(g.n_t, g.n_nodes)))
    V = solve_hj(sp, u)
    np.testing.assert_allclose(V.values, c, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_unit_running_cost_gives_time_to_go(n):
    sp = constant_problem(n=n, drift=0.3, running=1.0)
    g = _grid(T=0.7, n_t=9, n_x=8, n=n)
    V = solve_hj(sp, ControlField.constant(g, 0.0))
    np.testing.assert_allclose(V.values, (g.T - g.times)[:, None] * np.ones(g.n_nodes), atol=1e-10)
    assert cost_J(V) == pytest.approx(g.T, abs=1e-10)


def test_manufactured_value_error_shrinks_under_refinement():
    rep = run_order_check()
    assert rep.passed, rep.summary()
    assert rep.data["hj"][1] < rep.data["hj"][0] / 3


@given(st.floats(0, 1), st.floats(0, 0.5), st.integers(0, 2**31))
def test_comparison_principle(dr, dh, seed):
    base = build_problem("quartic_trap")
    r = np.random.default_rng(seed)
    k = r.integers(1, 4)
    bump = lambda x: dr * (1 + np.cos(TWO_PI * k * np.asarray(x)[..., 0]))  # noqa: E731
    hi = dataclasses.replace(
        base,
        running_cost=lambda t, x, u: base.running_cost(t, x, u) + bump(x),
        terminal_cost=lambda x: base.terminal_cost(x) + dh,
    )
    g = _grid(n_t=9, n_x=16)
    u = ControlField(g, 0.5 + 0.2 * r.normal(size=(g.n_t, g.n_nodes)))
    sched, _ = substep_schedule(hi, u)
    assert np.all(solve_hj(base, u, None, sched).values <= solve_hj(hi, u, None, sched).values + 1e-8)


# --- density ---------------------------------------------------------------------------------------


def test_uniform_density_is_stationary_without_drift():
    sp = constant_problem(n=2, sigma=0.8)
    g = _grid(n_t=6, n_x=8, n=2)
    rho = solve_fp(sp, ControlField.constant(g, 0.0))
    np.testing.assert_allclose(rho.values, 1.0, atol=1e-14)


def test_cosine_mode_decays_like_the_heat_equation():
    sp = constant_problem()  # sigma = sqrt 2, D = 1
    g = _grid(T=0.02, n_t=5, n_x=128)
    x = g.points[:, 0]
    rho = solve_fp(sp, ControlField.constant(g, 0.0), 1 + 0.5 * np.cos(TWO_PI * x))
    exact = cosine_mode(g.times[:, None], x[None, :])
    assert np.abs(rho.values - exact).max() / np.abs(exact).max() < 1e-2
    assert cosine_mode(0.01, 0.0) == pytest.approx(FROZEN["cosine_mode_t0.01_x0"], rel=1e-14)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_mass_and_positivity_on_builtins(name):
    sp = build_problem(name)
    g = _grid(T=DEFAULT_HORIZON[name], n_t=33, n_x=32)
    u = _cosine_control(g)
    with collect_fp_reports() as bucket:
        rho = solve_fp(sp, u)
    lo, drift = rho.density_defects()
    assert drift < 1e-8 and lo > 0
    assert bucket[0].mass_drift_max == pytest.approx(drift, abs=1e-15)


def test_initial_density_preconditions():
    sp = constant_problem()
    g = _grid(n_t=3, n_x=8)
    u = ControlField.constant(g, 0.0)
    with pytest.raises(InvalidArgument):
        solve_fp(sp, u, np.full(g.n_nodes, 2.0))
    with pytest.raises(InvalidArgument):
        solve_fp(sp, u, np.r_[-1.0, np.full(g.n_nodes - 1, 9 / 7)])


def test_substep_cap_raises_cfl_failure():
    sp = build_problem("quartic_trap")
    g = _grid(n_t=3, n_x=64)
    with pytest.raises(CFLFailure) as exc:
        solve_hj(sp, ControlField.constant(g, 1.0), SolverConfig(max_substeps_per_level=1))
    assert exc.value.needed > 1


@pytest.mark.parametrize("kw", [{"cfl_safety": 0.0}, {"cfl_safety": 1.5}, {"mass_tolerance": 0.0}])
def test_solver_config_validation(kw):
    with pytest.raises(InvalidArgument):
        SolverConfig(**kw)


# --- fundamental solution -------------------------------------------------------------------------


def test_fundamental_solution_matches_wrapped_gaussian():
    sp = constant_problem()
    g = _grid(T=0.02, n_t=3, n_x=128)
    y = g.n_x // 2
    p = fundamental_solution(sp, ControlField.constant(g, 0.0), 0, y)
    x = g.points[:, 0]
    for lv in (1, 2):
        t = g.times[lv]
        assert t >= 10 * g.dx**2
        exact = wrapped_gaussian(x, x[y], t)
        assert np.abs(p.values[lv] - exact).max() / exact.max() < 2e-2
    np.testing.assert_allclose(p.values.mean(axis=1), 1.0, atol=1e-12)
    ref = [wrapped_gaussian(x_, 0.5, 0.01) for x_ in (0.5, 0.45, 0.3, 0.0)]
    np.testing.assert_allclose(ref, FROZEN["heat_kernel_t0.01"], rtol=1e-12)


def test_fundamental_solution_from_the_last_level_is_the_spike():
    sp = build_problem("quartic_trap")
    g = _grid(n_t=5, n_x=16)
    p = fundamental_solution(sp, ControlField.constant(g, 0.3), g.n_t - 1, 3)
    spike = np.zeros(g.n_nodes)
    spike[3] = g.n_x
    np.testing.assert_array_equal(p.values[-1], spike)
    np.testing.assert_array_equal(p.values[:-1], 0.0)


def test_fundamental_solution_is_zero_before_its_source():
    sp = build_problem("quartic_trap")
    g = _grid(n_t=9, n_x=16)
    p = fundamental_solution(sp, ControlField.constant(g, 0.3), 4, 7)
    assert np.all(p.values[:4] == 0.0)
    np.testing.assert_allclose(p.values[4:].mean(axis=1), 1.0, atol=1e-12)


# --- duality ---------------------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_cost_from_value_equals_cost_from_density(name):
    sp = build_problem(name)
    g = _grid(T=DEFAULT_HORIZON[name], n_t=33, n_x=32)
    gap = duality_gap(sp, _cosine_control(g))
    assert gap < 10 * g.dx**2 + 10 * g.dt
