import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import manufactured_symbols

from pgflow.errors import InvalidArgument, NotFound
from pgflow.experiments import (
    EXPERIMENT_DEFAULTS,
    EXPERIMENTS,
    ExperimentReport,
    _merge,
    run_order_check,
    run_two_basin_experiment,
)
from pgflow.io import read_csv
from pgflow.problem import eval_D
from pgflow.problems import BUILTINS, DEFAULT_HORIZON, build_problem, manufactured_concave

SMALL_TWO_BASIN = {"n_t": 17, "n_x": 16, "max_steps": 40, "n_probe": 10}


# --- built-in problems ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_are_found_by_name(name):
    sp = build_problem(name)
    assert sp.name == name and sp.n == 1
    assert name in DEFAULT_HORIZON


def test_unknown_problem_is_not_found():
    with pytest.raises(NotFound, match="quartic_trap"):
        build_problem("triple_well")


def test_factory_parameters_are_forwarded():
    sp = build_problem("quartic_trap", amplitude=0.5)
    assert sp.terminal_cost(np.array([[0.0]]))[0] == pytest.approx(0.5)


def test_manufactured_data_satisfy_the_symbolic_identity():
    sym = manufactured_symbols()
    sp = manufactured_concave()
    r = np.random.default_rng(0)
    t, x = r.uniform(0, 0.5, 1000), r.random(1000)
    X = x[:, None]
    o = sp.oracles
    np.testing.assert_allclose(o["r0"](t, X), sym["r0"](t, x), atol=1e-12)
    np.testing.assert_allclose(o["u_star"](t, X)[:, 0], sym["u_star"](t, x), atol=1e-12)
    np.testing.assert_allclose(o["V_star"](t, X), sym["V"](t, x), atol=1e-12)


def test_controlled_demo_diffusion():
    sp = build_problem("controlled_diffusion_demo")
    x = np.array([0.4])
    assert eval_D(sp, x, [0.0])[0, 0] == pytest.approx(0.5, abs=1e-15)
    d = [eval_D(sp, x, [u])[0, 0] for u in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(d) > 0) and d[-1] < 0.75
    assert eval_D(sp, x, [-1.3])[0, 0] == pytest.approx(eval_D(sp, x, [1.3])[0, 0], abs=1e-15)


# --- reports -------------------------------------------------------------------------------------


def test_report_verdicts_and_csv(tmp_path):
    rep = ExperimentReport("demo", "ab" * 16)
    rep.add("small", 1e-3, 1e-2)
    rep.add("big", 5.0, 1.0, ">=")
    rep.add("context", 7.0, 1.0, informational=True)
    assert rep.passed and rep.failures() == []
    rep.add("missing", None, 1.0)
    assert not rep.passed and [m.name for m in rep.failures()] == ["missing"]
    dig, header, rows = read_csv(rep.write_csv(tmp_path / "r.csv"))
    assert dig == "ab" * 16 and header[-1] == "verdict"
    assert [r[-1] for r in rows] == ["pass", "pass", "info", "FAIL"]
    assert "FAIL" in rep.summary().splitlines()[0]


def test_every_experiment_has_defaults():
    assert EXPERIMENTS.keys() == EXPERIMENT_DEFAULTS.keys()


def test_unknown_override_is_rejected():
    with pytest.raises(InvalidArgument):
        run_order_check({"n_z": 3})


@given(st.sampled_from(["1", "true", "Yes", "on", "0", "false", "off"]))
def test_boolean_overrides_accept_words(word):
    got = _merge({"flag": False}, {"flag": word})["flag"]
    assert got is (word.lower() in ("1", "true", "yes", "on"))


# --- experiment behaviour -------------------------------------------------------------------------


def test_order_check_is_reproducible_and_writes_its_metrics(tmp_path):
    a = run_order_check(out_dir=tmp_path)
    b = run_order_check()
    assert a.digest == b.digest and a.data["hj"] == b.data["hj"] and a.data["fp"] == b.data["fp"]
    assert (tmp_path / "discretisation_order.csv").exists()
    assert run_order_check({"n_t": 9}).digest != a.digest


def test_two_basin_is_symmetric_under_a_half_period_shift():
    # h -> -h is the shift x -> x + 1/2; the sign(h_x) seeding commutes with it
    plus = run_two_basin_experiment(SMALL_TWO_BASIN)
    minus = run_two_basin_experiment({**SMALL_TWO_BASIN, "amplitude": -0.1})
    for key in ("J_A", "J_B"):
        assert minus.data[key] == pytest.approx(plus.data[key], abs=1e-12)
    assert plus.data["J_A"] > plus.data["J_B"]
