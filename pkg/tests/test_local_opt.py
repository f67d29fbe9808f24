import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import FROZEN, quartic_G, quartic_maximisers

from pgflow.errors import BoxViolation, InvalidArgument
from pgflow.fields import ControlField, ScalarField, SpaceTimeGrid, l2_norm
from pgflow.flow import FlowConfig, run_flow
from pgflow.local_opt import (
    ArgmaxConfig,
    argmax_G,
    argmax_G_batch,
    hjb_residual,
    local_optimal_field,
    quartic_closed_forms,
)
from pgflow.pde import solve_hj
from pgflow.problem import CoState, grad_u_G
from pgflow.problems import build_problem, constant_problem, manufactured_concave

X1 = np.array([0.3])


@pytest.fixture(scope="module")
def quartic():
    return build_problem("quartic_trap")


@pytest.fixture(scope="module")
def manufactured():
    return manufactured_concave()


def _vx(v):
    return CoState([-v], [[0.0]])


# --- pointwise argmax -----------------------------------------------------------------------------


def test_quartic_argmax_at_slope_three_halves(quartic):
    assert argmax_G(quartic, X1, _vx(1.5), [0.0])[0] == pytest.approx(FROZEN["quartic_roots_vx1.5"]["u_star"], abs=1e-10)


def test_quartic_tie_at_zero_slope_goes_to_plus_one(quartic):
    u, info = argmax_G_batch(quartic, 0.0, X1[None], _vx(0.0), np.zeros((1, 1)))
    assert u[0, 0] == pytest.approx(1.0, abs=1e-10)
    assert info.ties == 1


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 0.9))
def test_concave_argmax_is_the_hand_stationary_point(p, P, t):
    # b = u, r = u^2/2 + r0: G = P + p u - u^2/2 - r0, maximised at u = p
    sp = manufactured_concave()
    u = argmax_G(sp, X1, CoState([p], [[P]]), [0.0], t=t)
    assert u[0] == pytest.approx(p, abs=1e-8)


@pytest.mark.parametrize("vx", [1.5, 0.0])
def test_quartic_closed_form_examples(vx):
    got = quartic_closed_forms(vx)
    ref = FROZEN[f"quartic_roots_vx{vx:g}"]
    assert got["u_star"] == pytest.approx(ref["u_star"], abs=1e-15)
    assert got["u_tilde"] == pytest.approx(ref["u_tilde"], abs=1e-15)


@given(st.floats(-50, 50))
def test_closed_forms_are_the_roots_of_the_cubic_ordered_by_G(vx):
    cf = quartic_closed_forms(vx)
    for u in cf.values():
        assert abs(u**3 + vx * u**2 - u) <= 1e-12 * max(1.0, abs(u) ** 3)
    ref = quartic_maximisers(vx)
    np.testing.assert_allclose(sorted(cf.values()), sorted(ref.values()), rtol=1e-9)
    assert quartic_G(cf["u_star"], -vx, 0.0) >= quartic_G(cf["u_tilde"], -vx, 0.0) - 1e-12


def test_argmax_matches_closed_forms_on_100_slopes(quartic):
    vx = np.random.default_rng(8).uniform(-3, 3, 100)
    u, _ = argmax_G_batch(quartic, 0.0, np.full((100, 1), 0.3), CoState(-vx[:, None], np.zeros((100, 1, 1))), np.zeros((100, 1)))
    np.testing.assert_allclose(u[:, 0], quartic_closed_forms(vx)["u_star"], atol=1e-8)


@given(st.sampled_from(["quartic_trap", "manufactured_concave", "controlled_diffusion_demo"]), st.integers(0, 2**31))
def test_argmax_is_stationary(name, seed):
    sp = build_problem(name)
    r = np.random.default_rng(seed)
    B = 20
    x = r.random((B, 1))
    cs = CoState(r.normal(size=(B, 1)), r.normal(size=(B, 1, 1)))
    cfg = ArgmaxConfig()
    u, _ = argmax_G_batch(sp, 0.1, x, cs, r.normal(size=(B, 1)), cfg)
    assert np.abs(grad_u_G(sp, x, u, cs, 0.1)).max() <= cfg.newton_tol


@given(st.integers(0, 2**31))
def test_strong_concavity_inequality(seed):
    sp = manufactured_concave()
    r = np.random.default_rng(seed)
    B = 30
    x, t = r.random((B, 1)), r.uniform(0, 0.5, B)
    cs = CoState(r.normal(size=(B, 1)), r.normal(size=(B, 1, 1)))
    u = r.uniform(-3, 3, (B, 1))
    u_loc, _ = argmax_G_batch(sp, t, x, cs, u)
    lhs = np.linalg.norm(grad_u_G(sp, x, u, cs, t), axis=-1)
    assert np.all(lhs >= sp.mu_G * np.linalg.norm(u - u_loc, axis=-1) - 1e-6)


@given(st.floats(-10, 10), st.floats(-3, 3))
def test_argmax_ignores_u_independent_running_cost(shift, vx):
    sp = build_problem("quartic_trap")
    shifted = dataclasses.replace(sp, running_cost=lambda t, x, u: sp.running_cost(t, x, u) + shift)
    a = argmax_G(sp, X1, _vx(vx), [0.0])
    b = argmax_G(shifted, X1, _vx(vx), [0.0])
    assert a[0] == pytest.approx(b[0], abs=1e-10)


def test_box_violation_is_an_error_not_a_clamp(quartic):
    with pytest.raises(BoxViolation):
        argmax_G(quartic, X1, _vx(1.5), [0.0], ArgmaxConfig(u_box=1.0))


@pytest.mark.parametrize("kw", [{"newton_tol": 0}, {"tie_tol": -1}, {"max_newton_iters": 0}, {"multistart_offsets": ()}])
def test_argmax_config_validation(kw):
    with pytest.raises(InvalidArgument):
        ArgmaxConfig(**kw)


# --- fields ----------------------------------------------------------------------------------------


def _manufactured_optimum(sp, n_t, n_x):
    g = SpaceTimeGrid(sp.geometry, sp.oracles["T"](), n_t, n_x)
    u = ControlField.from_function(g, sp.oracles["u_star"])
    return g, u, solve_hj(sp, u)


def test_local_field_at_the_manufactured_optimum_converges(manufactured):
    dists = []
    for n_t, n_x in ((17, 16), (65, 32)):
        _, u, V = _manufactured_optimum(manufactured, n_t, n_x)
        dists.append(l2_norm(u - local_optimal_field(manufactured, u, V)))
    assert dists[1] < dists[0] / 3


def _tilde_branch(sp, n_t, n_x):
    """Flow started on the branch that is locally but not globally optimal."""
    g = SpaceTimeGrid(sp.geometry, 0.2, n_t, n_x)
    hx = sp.oracles["terminal_slope"](g.points)
    u0 = ControlField(g, np.broadcast_to(np.where(hx >= 0, 1.0, -1.0), (g.n_t, g.n_nodes)))
    cfg = FlowConfig(dtau=0.4, max_steps=300, stop_grad_norm=1e-8, local_multistart=False)
    return run_flow(sp, u0, cfg).state


@pytest.fixture(scope="module")
def tilde_branch(quartic):
    return _tilde_branch(quartic, 17, 16)


def test_incumbent_search_sees_the_fixed_point_and_multistart_escapes(quartic, tilde_branch):
    st_ = tilde_branch
    local = local_optimal_field(quartic, st_.u, st_.V, ArgmaxConfig(multistart=False))
    full = local_optimal_field(quartic, st_.u, st_.V, ArgmaxConfig())
    assert l2_norm(st_.u - local) < 1e-3
    assert l2_norm(st_.u - full) > 0.1


def test_constant_problem_local_field_is_constant():
    sp = constant_problem(drift=0.4)
    g = SpaceTimeGrid(sp.geometry, 0.3, 5, 8)
    u = ControlField.constant(g, 0.7)
    V = ScalarField(g, np.random.default_rng(2).normal(size=(g.n_t, g.n_nodes)), "value")
    out = local_optimal_field(sp, u, V)
    assert np.ptp(out.values) == 0.0


# --- HJB residual ----------------------------------------------------------------------------------


def test_residual_of_sampled_optimal_value_shrinks(manufactured):
    res = []
    for n_t, n_x in ((17, 16), (65, 32)):
        g = SpaceTimeGrid(manufactured.geometry, manufactured.oracles["T"](), n_t, n_x)
        V = ScalarField(g, manufactured.oracles["V_star"](g.times[:, None], g.points), "value")
        res.append(hjb_residual(manufactured, V))
    assert res[1] < res[0] / 3


def test_residual_separates_optimal_from_suboptimal(manufactured):
    g, u, V = _manufactured_optimum(manufactured, 65, 32)
    good = hjb_residual(manufactured, V)
    bad = hjb_residual(manufactured, solve_hj(manufactured, ControlField.constant(g, 0.0)))
    assert bad > 10 * good


def test_residual_vanishes_for_the_null_problem():
    sp = constant_problem()
    g = SpaceTimeGrid(sp.geometry, 0.3, 5, 8)
    assert hjb_residual(sp, ScalarField(g, np.zeros((g.n_t, g.n_nodes)), "value")) == 0.0


def test_tilde_branch_solves_the_local_equation_but_not_the_global_one(quartic, tilde_branch):
    # the local residual is pure discretisation error and shrinks under refinement;
    # the global one measures the gap to the other branch and does not
    local, full = [], []
    for st_ in (tilde_branch, _tilde_branch(quartic, 33, 32)):
        local.append(hjb_residual(quartic, st_.V, ArgmaxConfig(multistart=False), incumbent=st_.u))
        full.append(hjb_residual(quartic, st_.V, incumbent=st_.u))
    assert local[1] < local[0] / 2.5
    assert min(full) > 0.25 and full[1] > 5 * local[1]
