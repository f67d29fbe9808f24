"""Scripted experiments on the built-in problems.

Each ``run_*`` function takes a flat dictionary of overrides on top of its
``*_DEFAULTS`` and returns an :class:`ExperimentReport` whose metrics all
carry an explicit threshold and verdict.  Runs are deterministic functions
of the configuration (seeds included), so the digest identifies a result.
"""

from __future__ import annotations

import math
import operator
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as pio
from .errors import InvalidArgument
from .fields import (
    ControlField,
    SpaceTimeGrid,
    _integrate,
    grad_array,
    h2_norm,
    hess_array,
    l2_inner,
    l2_norm,
)
from .flow import TRACE_FIELDS, FlowConfig, cost_J, functional_gradient, make_state, run_flow
from .local_opt import ArgmaxConfig, argmax_G_batch, local_optimal_field, quartic_closed_forms
from .pde import SolverConfig, SolverReport, bellman_cost, solve_fp, solve_hj, substep_schedule
from .problem import CoState, grad_u_G
from .problems import DEFAULT_HORIZON, build_problem, constant_problem, manufactured_concave, quartic_trap
from .sampler import coupling_experiment, estimate_J_mc, regression_update, regression_update_points, simulate

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass
class Metric:
    """One measured quantity compared against a threshold with ``op``."""

    name: str
    value: float
    threshold: float
    op: str = "<"
    informational: bool = False

    @property
    def passed(self) -> bool:
        v = self.value
        return bool(v is not None and not (isinstance(v, float) and math.isnan(v)) and _OPS[self.op](v, self.threshold))


@dataclass
class ExperimentReport:
    """Metrics of one experiment plus the paths of anything it wrote."""

    name: str
    digest: str
    metrics: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    wall_s: float = 0.0

    def add(self, name, value, threshold, op="<", informational=False) -> Metric:
        m = Metric(name, float(value) if value is not None else float("nan"), float(threshold), op, informational)
        self.metrics.append(m)
        return m

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.metrics if not m.informational)

    def failures(self) -> list:
        return [m for m in self.metrics if not m.informational and not m.passed]

    CSV_HEADER = ("experiment", "metric", "value", "op", "threshold", "verdict")

    def rows(self) -> list:
        out = []
        for m in self.metrics:
            verdict = "pass" if m.passed else ("info" if m.informational else "FAIL")
            out.append([self.name, m.name, m.value, m.op, m.threshold, verdict])
        return out

    def write_csv(self, path) -> Path:
        return pio.write_csv(path, self.CSV_HEADER, self.rows(), self.digest)

    def summary(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.wall_s:.1f} s)"]
        for m in self.metrics:
            tag = "info" if m.informational else ("ok" if m.passed else "FAIL")
            lines.append(f"  [{tag:4}] {m.name} = {m.value:.6g} ({m.op} {m.threshold:.3g})")
        return "\n".join(lines)


def _merge(defaults: dict, cfg: dict | None) -> dict:
    merged = dict(defaults)
    for k, v in (cfg or {}).items():
        if k not in defaults:
            raise InvalidArgument(f"unknown experiment setting {k!r}")
        merged[k] = type(defaults[k])(v) if not isinstance(defaults[k], bool) else _as_bool(v)
    return merged


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


def _start(name, defaults, cfg):
    c = _merge(defaults, cfg)
    return c, ExperimentReport(name, pio.config_digest({"experiment": name, **c}))


def _finish(report, t0, out_dir):
    report.wall_s = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.artifacts["metrics_csv"] = str(report.write_csv(out / f"{report.name}.csv"))
    return report


def smooth_control(grid: SpaceTimeGrid, rng: np.random.Generator, amplitude: float = 1.0, modes: int = 3):
    """Random low-frequency control ``sum_k a_k sin(2 pi k.x + b_k) (1 + c_k t / T)`` plus a constant."""
    n, nc = grid.n, grid.geometry.n_control
    x = grid.points
    tt = grid.times[:, None] / grid.T
    vals = np.zeros((grid.n_t, grid.n_nodes, nc))
    for j in range(nc):
        v = amplitude * rng.uniform(-0.5, 0.5) * np.ones((grid.n_t, grid.n_nodes))
        for _ in range(modes):
            k = rng.integers(-2, 3, size=n)
            if not k.any():
                k[0] = 1
            a, b, c = amplitude * rng.normal() / modes, rng.uniform(0, 2 * np.pi), rng.uniform(-1, 1)
            v = v + a * np.sin(2 * np.pi * (x @ k) + b)[None, :] * (1 + c * tt)
        vals[..., j] = v
    return ControlField(grid, vals)


def _fit_line(x, y):
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def _quartic_grid(c, sp=None):
    sp = sp or quartic_trap(c.get("amplitude", 0.1))
    return sp, SpaceTimeGrid(sp.geometry, c["T"], c["n_t"], c["n_x"])


def _cosine_control(grid, a0=0.5, a1=0.3):
    return ControlField.from_function(grid, lambda t, x: a0 + a1 * np.cos(2 * np.pi * x[..., 0]))


# --- gradient oracle -------------------------------------------------------------------------

GRADIENT_DEFAULTS = {"T": 0.2, "n_t": 64, "n_x": 64, "n_dirs": 5, "eps": 1e-4, "rel_tol": 1e-2, "seed": 11}


def run_gradient_check(cfg=None, out_dir=None) -> ExperimentReport:
    """Functional gradient against central differences of the discrete cost.

    The substep schedule is pinned to that of the base control so that both
    perturbed solves use the same discretisation.
    """
    t0 = time.perf_counter()
    c, rep = _start("gradient_check", GRADIENT_DEFAULTS, cfg)
    sp, grid = _quartic_grid(c)
    u = _cosine_control(grid)
    st = make_state(sp, u)
    g_nodal = functional_gradient(sp, u, st.V, st.rho, "nodal")
    rng = np.random.default_rng(c["seed"])
    errs, errs_nodal = [], []
    for _ in range(c["n_dirs"]):
        phi = smooth_control(grid, rng)
        jp = cost_J(solve_hj(sp, u + c["eps"] * phi, schedule=st.schedule))
        jm = cost_J(solve_hj(sp, u - c["eps"] * phi, schedule=st.schedule))
        fd = (jp - jm) / (2 * c["eps"])
        errs.append(abs(l2_inner(st.grad, phi) - fd) / abs(fd))
        errs_nodal.append(abs(l2_inner(g_nodal, phi) - fd) / abs(fd))
    rep.data.update(rel_errors=errs, rel_errors_nodal=errs_nodal)
    rep.add("max_rel_error", max(errs), c["rel_tol"])
    rep.add("max_rel_error_nodal", max(errs_nodal), c["rel_tol"])
    return _finish(rep, t0, out_dir)


# --- descent and monotonicity -----------------------------------------------------------------

DESCENT_DEFAULTS = {
    "T": 0.2,
    "n_t": 64,
    "n_x": 64,
    "steps": 200,
    "dtau": 0.1,
    "J_tol": 1e-12,
    "V_tol": 1e-6,
}


def run_descent_check(cfg=None, out_dir=None) -> ExperimentReport:
    """Fixed number of Armijo steps; per-step increase of ``J`` and of ``V`` at any node.

    The step is calibrated by halving until ``V`` rises nowhere by more than
    ``V_tol``; the number of such extra halvings is reported.
    """
    t0 = time.perf_counter()
    c, rep = _start("descent", DESCENT_DEFAULTS, cfg)
    sp, grid = _quartic_grid(c)
    fc = FlowConfig(
        dtau=c["dtau"], max_steps=c["steps"], stop_grad_norm=1e-300, monotone_tol_V=c["V_tol"]
    )
    prev = {}
    rises = []

    def watch(state):
        if "V" in prev:
            rises.append(float((state.V.values - prev["V"]).max()))
        prev["V"] = state.V.values

    u0 = _cosine_control(grid)
    watch(make_state(sp, u0, fc))
    res = run_flow(sp, u0, fc, callback=watch)
    J = res.column("J")
    dt_acc = res.column("accepted_dtau")[1:]
    rep.data.update(trace=res.trace, V_rise=rises)
    rep.add("steps_taken", len(J) - 1, c["steps"], ">=")
    rep.add("max_J_increase", float(np.max(np.diff(J))) if len(J) > 1 else 0.0, c["J_tol"], "<=")
    rep.add("max_V_increase", max(rises) if rises else 0.0, c["V_tol"], "<=")
    rep.add("steps_with_reduced_dtau", int(np.sum(dt_acc < c["dtau"])), 0, ">=", informational=True)
    rep.add("final_grad_norm", res.state.grad_norm, 1.0, "<", informational=True)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        rep.artifacts["trace_csv"] = str(_trace_csv(Path(out_dir) / "descent_trace.csv", res, rep.digest))
    return _finish(rep, t0, out_dir)


def _trace_csv(path, res, digest):
    return pio.write_csv(path, TRACE_FIELDS, res.trace, digest)


# --- two basins --------------------------------------------------------------------------------

TWO_BASIN_DEFAULTS = {
    "T": 0.2,
    "n_t": 64,
    "n_x": 64,
    "amplitude": 0.1,
    "dtau": 0.4,
    "max_steps": 300,
    "stop_grad_norm": 1e-6,
    "grad_tol": 1e-3,
    "gap_tol": 1e-4,
    "local_tol": 1e-3,
    "n_probe": 100,
    "probe_tol": 1e-8,
    "seed": 3,
}


def _branch_fraction(sp, st, which):
    vx = grad_array(st.u.grid, st.V.values)[..., 0]
    cf = quartic_closed_forms(vx)
    u = st.u.values[..., 0]
    d_star, d_tilde = np.abs(u - cf["u_star"]), np.abs(u - cf["u_tilde"])
    mask = np.abs(vx) > 1e-3  # branches merge in value where the slope vanishes
    near = d_tilde < d_star if which == "tilde" else d_star <= d_tilde
    return float(np.mean(near[mask]))


def run_two_basin_experiment(cfg=None, out_dir=None) -> ExperimentReport:
    """Flows on the quartic double well started in the two basins of G.

    Constant starts ``+1`` and ``-1`` are mirror images under ``x -> -x,
    u -> -u`` for the symmetric cosine terminal cost and reach the same cost,
    so the runs are seeded by the sign of the terminal slope instead: run A
    starts at ``u = sign(h_x)`` (the ``u_tilde`` branch, with incumbent-only
    local diagnostics), run B at ``u = -sign(h_x)`` (the ``u_star`` branch).
    """
    t0 = time.perf_counter()
    c, rep = _start("two_basin", TWO_BASIN_DEFAULTS, cfg)
    sp, grid = _quartic_grid(c)
    hx = sp.oracles["terminal_slope"](grid.points)
    sgn = np.where(hx >= 0, 1.0, -1.0)
    runs = {}
    for tag, sign, multistart in (("A", 1.0, False), ("B", -1.0, True)):
        u0 = ControlField(grid, np.broadcast_to(sign * sgn, (grid.n_t, grid.n_nodes)))
        fc = FlowConfig(
            dtau=c["dtau"],
            max_steps=c["max_steps"],
            stop_grad_norm=c["stop_grad_norm"],
            local_multistart=multistart,
        )
        runs[tag] = run_flow(sp, u0, fc)
    A, B = runs["A"].state, runs["B"].state
    rep.data.update(trace_A=runs["A"].trace, trace_B=runs["B"].trace, J_A=A.J, J_B=B.J)
    rep.add("grad_norm_A", A.grad_norm, c["grad_tol"])
    rep.add("grad_norm_B", B.grad_norm, c["grad_tol"])
    rep.add("J_A_minus_J_B", A.J - B.J, c["gap_tol"], ">")
    rep.add("dist_to_local_A_incumbent", A.dist_to_local, c["local_tol"])
    global_loc = local_optimal_field(sp, A.u, A.V, ArgmaxConfig())
    rep.add("dist_to_local_A_multistart", l2_norm(A.u - global_loc), c["local_tol"], ">", informational=True)
    rep.add("tilde_fraction_A", _branch_fraction(sp, A, "tilde"), 0.5, ">", informational=True)
    rep.add("star_fraction_B", _branch_fraction(sp, B, "star"), 0.5, ">", informational=True)

    rng = np.random.default_rng(c["seed"])
    vx = rng.uniform(-3, 3, c["n_probe"])
    x = rng.random((c["n_probe"], 1))
    cs = CoState(-vx[:, None], np.zeros((c["n_probe"], 1, 1)))
    u_max, _ = argmax_G_batch(sp, 0.0, x, cs, np.zeros((c["n_probe"], 1)))
    rep.add("argmax_vs_closed_form", np.abs(u_max[:, 0] - quartic_closed_forms(vx)["u_star"]).max(), c["probe_tol"])

    # mirror symmetry of the constant starts
    jp = make_state(sp, ControlField.constant(grid, 1.0)).J
    jm = make_state(sp, ControlField.constant(grid, -1.0)).J
    rep.add("constant_start_J_asymmetry", abs(jp - jm), 1e-10, "<", informational=True)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tag in ("A", "B"):
            rep.artifacts[f"trace_{tag}"] = str(_trace_csv(out / f"two_basin_trace_{tag}.csv", runs[tag], rep.digest))
            rep.artifacts[f"control_{tag}"] = str(
                pio.write_field(out / f"two_basin_control_{tag}.fld", runs[tag].state.u, rep.digest)
            )
    return _finish(rep, t0, out_dir)


# --- PL rate -----------------------------------------------------------------------------------

RATE_DEFAULTS = {
    "T": 0.5,
    "n_t": 65,
    "n_x": 64,
    "dtau": 0.5,
    "max_steps": 300,
    "stop_grad_norm": 1e-6,
    "reference_grad_norm": 1e-11,
    "r2_tol": 0.95,
    "u_star_tol": 1e-2,
    "local_tol": 1e-3,
    "fit_fraction": 0.6,
}


def reference_optimum(sp, u0, dtau=0.5, grad_norm=1e-11, max_steps=400):
    """Discrete optimum by running the flow to a tight gradient tolerance."""
    fc = FlowConfig(dtau=dtau, max_steps=max_steps, stop_grad_norm=grad_norm, stall_min_decrease=0.0)
    return run_flow(sp, u0, fc).state


def run_rate_experiment(cfg=None, out_dir=None) -> ExperimentReport:
    """Exponential decay of ``J - J*`` on the manufactured concave problem.

    ``J*`` is the cost of the discrete optimum, obtained by continuing the
    same flow to ``reference_grad_norm``.  A line is fitted to
    ``log(J - J*)`` against ``tau`` over the middle ``fit_fraction`` of the
    trace.
    """
    t0 = time.perf_counter()
    c, rep = _start("rate", RATE_DEFAULTS, cfg)
    sp = manufactured_concave(T=c["T"])
    grid = SpaceTimeGrid(sp.geometry, c["T"], c["n_t"], c["n_x"])
    u_star = ControlField.from_function(grid, sp.oracles["u_star"])
    fc = FlowConfig(dtau=c["dtau"], max_steps=c["max_steps"], stop_grad_norm=c["stop_grad_norm"])
    res = run_flow(sp, ControlField.constant(grid, 0.0), fc)
    ref = reference_optimum(sp, res.state.u, c["dtau"], c["reference_grad_norm"])
    J_star = ref.J
    tau, J = res.column("tau"), res.column("J")
    gap = J - J_star
    L = len(gap)
    lo, hi = int(math.floor((1 - c["fit_fraction"]) / 2 * L)), int(math.ceil((1 + c["fit_fraction"]) / 2 * L))
    sel = slice(lo, max(hi, lo + 2))
    ok = gap[sel] > 0
    slope, _, r2 = _fit_line(tau[sel][ok], np.log(gap[sel][ok])) if ok.sum() >= 2 else (float("nan"), 0, 0)
    rep.data.update(trace=res.trace, J_star=J_star, fit_range=(lo, hi))
    rep.add("c_hat", -slope, 0.0, ">")
    rep.add("r_squared", r2, c["r2_tol"], ">")
    rep.add("final_l2_u_minus_u_star", l2_norm(res.state.u - u_star), c["u_star_tol"])
    rep.add("final_l2_u_minus_u_local", res.state.dist_to_local, c["local_tol"])
    rep.add("max_J_increase", float(np.max(np.diff(J))), 1e-12, "<=")
    rep.add("steps", L - 1, 0, ">", informational=True)
    rep.add("reference_l2_u_minus_u_star", l2_norm(ref.u - u_star), c["u_star_tol"], informational=True)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        rep.artifacts["trace_csv"] = str(_trace_csv(Path(out_dir) / "rate_trace.csv", res, rep.digest))
    return _finish(rep, t0, out_dir)


# --- conservation and positivity --------------------------------------------------------------

CONSERVATION_DEFAULTS = {"n_t": 64, "n_x": 64, "mass_tol": 1e-8}


def conservation_runs(cfg=None):
    """Density solves with uniform start on every built-in problem under a smooth control."""
    c = _merge(CONSERVATION_DEFAULTS, cfg)
    reports = []
    for name in ("quartic_trap", "manufactured_concave", "controlled_diffusion_demo"):
        sp = build_problem(name)
        grid = SpaceTimeGrid(sp.geometry, DEFAULT_HORIZON[name], c["n_t"], c["n_x"])
        rho = solve_fp(sp, _cosine_control(grid))
        reports.append(rho.report)
    return reports


def assess_conservation(reports, mass_tol=1e-8, digest="") -> ExperimentReport:
    rep = ExperimentReport("conservation", digest)
    uniform = [r for r in reports if r.uniform_start]
    rep.add("fp_runs", len(reports), 0, ">", informational=True)
    rep.add("max_mass_drift", max(r.mass_drift_max for r in reports), mass_tol)
    rep.add("min_density_uniform_start", min(r.min_density for r in uniform), 0.0, ">")
    problems = {r.problem for r in uniform}
    rep.add("builtin_problems_covered", len(problems & {"quartic_trap", "manufactured_concave", "controlled_diffusion_demo"}), 3, ">=")
    rep.data["reports"] = reports
    return rep


def run_conservation_check(cfg=None, out_dir=None, extra_reports=()) -> ExperimentReport:
    t0 = time.perf_counter()
    c = _merge(CONSERVATION_DEFAULTS, cfg)
    reports = list(extra_reports) + conservation_runs(cfg)
    rep = assess_conservation(reports, c["mass_tol"], pio.config_digest({"experiment": "conservation", **c}))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        rep.artifacts["solver_reports"] = str(
            pio.write_csv(Path(out_dir) / "fp_reports.csv", SolverReport.CSV_FIELDS, [r.as_row() for r in reports], rep.digest)
        )
    return _finish(rep, t0, out_dir)


# --- Monte Carlo consistency --------------------------------------------------------------------

MC_DEFAULTS = {
    "T": 0.2,
    "n_t": 64,
    "n_x": 64,
    "n_paths": 10000,
    "n_steps": 50,
    "seed": 2024,
    "n_se": 3.0,
    "disc_factor": 5.0,
    "dtau": 0.1,
    "identity_tol": 1e-8,
}


def run_mc_consistency(cfg=None, out_dir=None) -> ExperimentReport:
    """Monte Carlo cost against the PDE cost, and the regression step on an identity design.

    The discretisation allowance uses the coarser of the two time steps (the
    Euler-Maruyama step ``T/N`` here).
    """
    t0 = time.perf_counter()
    c, rep = _start("mc_consistency", MC_DEFAULTS, cfg)
    sp, grid = _quartic_grid(c)
    u = _cosine_control(grid)
    st = make_state(sp, u)
    batch = simulate(sp, u, c["n_paths"], c["n_steps"], c["seed"])
    est = estimate_J_mc(sp, u, batch)
    dt = max(grid.dt, grid.T / c["n_steps"])
    allowance = c["n_se"] * est["std_error"] + c["disc_factor"] * (dt + grid.dx**2)
    rep.data.update(estimate=est, J_pde=st.J)
    rep.add("abs_mc_minus_pde", abs(est["estimate"] - st.J), allowance, "<")
    rep.add("mc_std_error", est["std_error"], 1.0, "<", informational=True)

    t = np.repeat(grid.times, grid.n_nodes)
    x = np.tile(grid.points, (grid.n_t, 1))
    upd = regression_update_points(sp, u, st.V, t, x, c["dtau"])
    cs = CoState.from_value_derivatives(grad_array(grid, st.V.values), hess_array(grid, st.V.values))
    exact = u.values + c["dtau"] * grad_u_G(sp, grid.points, u.values, cs, grid.times[:, None])
    rep.add("identity_regression_max_error", np.abs(upd.values - exact).max(), c["identity_tol"], "<=")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.artifacts["estimate_csv"] = str(
            pio.write_csv(
                out / "mc_estimate.csv",
                ("estimate", "std_error", "n_paths", "J_pde"),
                [[est["estimate"], est["std_error"], est["n_paths"], st.J]],
                rep.digest,
            )
        )
    return _finish(rep, t0, out_dir)


REGRESSION_DEFAULTS = {"T": 0.2, "n_t": 33, "n_x": 32, "dtau": 0.1, "seed": 5, "paths": "100,1000,10000"}


def run_regression_convergence(cfg=None, out_dir=None) -> ExperimentReport:
    """Sampled regression step against the two exact-pathway steps on visited hats.

    The sample times coincide with the grid levels (``N = n_t - 1``).
    Reported are the L2 gaps to ``u + dtau grad_u G`` (what the least-squares
    objective converges to) and to ``u + dtau rho grad_u G`` (the
    density-weighted step), for increasing path counts.
    """
    t0 = time.perf_counter()
    c, rep = _start("regression_convergence", REGRESSION_DEFAULTS, cfg)
    sp, grid = _quartic_grid(c)
    u = _cosine_control(grid)
    st = make_state(sp, u)
    cs = CoState.from_value_derivatives(grad_array(grid, st.V.values), hess_array(grid, st.V.values))
    step = c["dtau"] * grad_u_G(sp, grid.points, u.values, cs, grid.times[:, None])
    plain = u.values + step
    weighted = u.values + st.rho.values[..., None] * step
    gaps_plain, gaps_weighted = [], []
    counts = [int(p) for p in str(c["paths"]).split(",")]
    for P in counts:
        batch = simulate(sp, u, P, grid.n_t - 1, c["seed"])
        upd, info = regression_update(sp, u, st.V, batch, c["dtau"], return_info=True)
        m = info.visited
        for target, store in ((plain, gaps_plain), (weighted, gaps_weighted)):
            d = ((upd.values - target) ** 2).sum(-1) * m
            store.append(math.sqrt(_integrate(grid, d)))
    rep.data.update(paths=counts, gap_plain=gaps_plain, gap_weighted=gaps_weighted)
    shrink = all(b < a for a, b in zip(gaps_plain, gaps_plain[1:]))
    rep.add("plain_gap_monotone", float(shrink), 0.5, ">")
    rep.add("plain_gap_final", gaps_plain[-1], gaps_weighted[-1], "<", informational=True)
    rep.add("weighted_gap_final", gaps_weighted[-1], 0.0, ">", informational=True)
    return _finish(rep, t0, out_dir)


# --- regularity probes -------------------------------------------------------------------------

PROBE_DEFAULTS = {
    "T": 0.5,
    "n_t": 33,
    "n_x": 32,
    "n_pairs": 20,
    "n_eps": 10,
    "eps_min": 1e-2,
    "eps_max": 0.3,
    "seed": 17,
    "quad_slope_tol": 1.9,
    "h2_slope_tol": 1.15,
    "refine_growth_tol": 2.0,
    "coupling_paths": 10000,
    "coupling_steps": 50,
    "coupling_c0": 0.2,
}


def _implicit_ratio(sp, V1, V2, u1, u2):
    grid = V1.grid
    l1 = local_optimal_field(sp, u1, V1)
    l2 = local_optimal_field(sp, u2, V2)
    num = np.linalg.norm((l1.values - l2.values), axis=-1)
    dg = np.linalg.norm(grad_array(grid, V1.values) - grad_array(grid, V2.values), axis=-1)
    dh = np.linalg.norm(
        (hess_array(grid, V1.values) - hess_array(grid, V2.values)).reshape(grid.n_t, grid.n_nodes, -1), axis=-1
    )
    den = dg + dh
    mask = den > 1e-12 * max(den.max(), 1e-300)
    return float((num[mask] / den[mask]).max()) if mask.any() else 0.0


def _pair_ratios(sp, grid, seed, n_pairs):
    rng = np.random.default_rng(seed)
    h2, imp = [], []
    for _ in range(n_pairs):
        u1 = smooth_control(grid, rng)
        u2 = smooth_control(grid, rng)
        V1, V2 = solve_hj(sp, u1), solve_hj(sp, u2)
        h2.append(h2_norm(V1 - V2) / l2_norm(u1 - u2))
        imp.append(_implicit_ratio(sp, V1, V2, u1, u2))
    return max(h2), max(imp)


def run_regularity_probes(cfg=None, out_dir=None) -> ExperimentReport:
    """Empirical constants and exponents of the regularity statements.

    * H2 Lipschitz bound of ``u -> V_u``: max ``|V1 - V2|_H2 / |u1 - u2|_L2``
      over random smooth pairs, on the base grid and one refinement.
    * quadratic growth: log-log slope of ``J - J*`` against ``eps`` along
      ``u*_h + eps phi`` where ``u*_h`` is the discrete optimum.
    * H2 growth of the value: slope of ``|V_u - V_{u*_h}|_H2`` against ``eps``.
    * implicit map: max over nodes of ``|du_loc| / (|d grad V| + |d hess V|)``.
    * coupling: sup-time mean squared distance under common noise for five
      halving shifts of the control.
    """
    t0 = time.perf_counter()
    c, rep = _start("regularity_probes", PROBE_DEFAULTS, cfg)
    sp = manufactured_concave(T=c["T"])
    grid = SpaceTimeGrid(sp.geometry, c["T"], c["n_t"], c["n_x"])
    fine = SpaceTimeGrid(sp.geometry, c["T"], 2 * (c["n_t"] - 1) + 1, 2 * c["n_x"])

    h2_c, imp_c = _pair_ratios(sp, grid, c["seed"], c["n_pairs"])
    h2_f, imp_f = _pair_ratios(sp, fine, c["seed"], c["n_pairs"])
    rep.add("h2_lipschitz_ratio", h2_c, np.inf, "<", informational=True)
    rep.add("h2_lipschitz_refinement_growth", h2_f / h2_c, c["refine_growth_tol"])
    rep.add("implicit_map_ratio", imp_c, np.inf, "<", informational=True)
    rep.add("implicit_map_refinement_growth", imp_f / imp_c, c["refine_growth_tol"])

    opt = reference_optimum(sp, ControlField.from_function(grid, sp.oracles["u_star"]))
    rng = np.random.default_rng(c["seed"] + 1)
    phi = smooth_control(grid, rng)
    eps = np.logspace(np.log10(c["eps_min"]), np.log10(c["eps_max"]), c["n_eps"])
    dJ, dV = [], []
    for e in eps:
        V = solve_hj(sp, opt.u + e * phi, schedule=opt.schedule)
        dJ.append(cost_J(V) - opt.J)
        dV.append(h2_norm(V - opt.V))
    dJ, dV = np.array(dJ), np.array(dV)
    s_quad = _fit_line(np.log(eps), np.log(np.abs(dJ)))[0]
    s_h2 = _fit_line(np.log(eps), np.log(dV))[0]
    rep.data.update(eps=eps.tolist(), J_gap=dJ.tolist(), V_gap_h2=dV.tolist())
    rep.add("J_gap_positive", float(np.all(dJ > 0)), 0.5, ">")
    rep.add("quadratic_growth_slope", s_quad, c["quad_slope_tol"], ">=")
    rep.add("h2_value_slope", s_h2, c["h2_slope_tol"], ">=")

    u1 = ControlField.from_function(grid, sp.oracles["u_star"])
    sups = []
    for k in range(5):
        shift = c["coupling_c0"] / 2**k
        r = coupling_experiment(sp, u1, u1 + shift, c["coupling_paths"], c["coupling_steps"], c["seed"])
        sups.append(r["sup_mean_sq_distance"])
    same = coupling_experiment(sp, u1, u1, 100, c["coupling_steps"], c["seed"])
    ratios = [a / b for a, b in zip(sups, sups[1:])]
    rep.data.update(coupling_sup=sups)
    rep.add("coupling_monotone", float(all(b < a for a, b in zip(sups, sups[1:]))), 0.5, ">")
    rep.add("coupling_identical_controls", same["sup_mean_sq_distance"], 0.0, "<=")
    rep.add("coupling_halving_ratio_min", min(ratios), 4 * 0.7, ">", informational=True)
    rep.add("coupling_halving_ratio_max", max(ratios), 4 * 1.3, "<", informational=True)
    return _finish(rep, t0, out_dir)


# --- discretisation order ------------------------------------------------------------------------

ORDER_DEFAULTS = {"n_t": 17, "n_x": 32, "T_fp": 0.1, "min_ratio": 3.0}


def _refined(grid):
    return SpaceTimeGrid(grid.geometry, grid.T, 4 * (grid.n_t - 1) + 1, 2 * grid.n_x)


def hj_manufactured_error(grid, sp):
    u = ControlField.from_function(grid, sp.oracles["u_star"])
    V = solve_hj(sp, u)
    exact = sp.oracles["V_star"](grid.times[:, None], grid.points)
    return float(np.abs(V.values - exact).max())


def fp_heat_error(grid):
    sp = constant_problem(1, sigma=np.sqrt(2.0))
    x = grid.points[:, 0]
    rho0 = 1 + 0.5 * np.cos(2 * np.pi * x)
    rho = solve_fp(sp, ControlField.constant(grid, 0.0), rho0)
    exact = 1 + 0.5 * np.exp(-4 * np.pi**2 * grid.times[:, None]) * np.cos(2 * np.pi * x)[None]
    return float(np.abs(rho.values - exact).max())


def run_order_check(cfg=None, out_dir=None) -> ExperimentReport:
    """Error reduction of both solvers under ``(dt/4, dx/2)`` refinement."""
    t0 = time.perf_counter()
    c, rep = _start("discretisation_order", ORDER_DEFAULTS, cfg)
    sp = manufactured_concave()
    g_hj = SpaceTimeGrid(sp.geometry, sp.oracles["T"](), c["n_t"], c["n_x"])
    e1, e2 = hj_manufactured_error(g_hj, sp), hj_manufactured_error(_refined(g_hj), sp)
    g_fp = SpaceTimeGrid(sp.geometry, c["T_fp"], c["n_t"], c["n_x"])
    f1, f2 = fp_heat_error(g_fp), fp_heat_error(_refined(g_fp))
    rep.data.update(hj=(e1, e2), fp=(f1, f2))
    rep.add("hj_error_coarse", e1, np.inf, informational=True)
    rep.add("hj_refinement_ratio", e1 / e2, c["min_ratio"], ">=")
    rep.add("fp_error_coarse", f1, np.inf, informational=True)
    rep.add("fp_refinement_ratio", f1 / f2, c["min_ratio"], ">=")
    return _finish(rep, t0, out_dir)


# --- duality spot check ------------------------------------------------------------------------


def duality_gap(sp, u: ControlField, cfg: SolverConfig | None = None) -> float:
    """``|int rho(0) V(0) - (int int r rho + int h rho(T))|`` for one control."""
    sched, _ = substep_schedule(sp, u, cfg)
    V = solve_hj(sp, u, cfg, sched)
    rho = solve_fp(sp, u, None, cfg, sched)
    return abs(cost_J(V) - bellman_cost(sp, u, rho))


EXPERIMENTS = {
    "gradient_check": run_gradient_check,
    "descent": run_descent_check,
    "two_basin": run_two_basin_experiment,
    "rate": run_rate_experiment,
    "conservation": run_conservation_check,
    "mc_consistency": run_mc_consistency,
    "regression_convergence": run_regression_convergence,
    "regularity_probes": run_regularity_probes,
    "discretisation_order": run_order_check,
}

EXPERIMENT_DEFAULTS = {
    "gradient_check": GRADIENT_DEFAULTS,
    "descent": DESCENT_DEFAULTS,
    "two_basin": TWO_BASIN_DEFAULTS,
    "rate": RATE_DEFAULTS,
    "conservation": CONSERVATION_DEFAULTS,
    "mc_consistency": MC_DEFAULTS,
    "regression_convergence": REGRESSION_DEFAULTS,
    "regularity_probes": PROBE_DEFAULTS,
    "discretisation_order": ORDER_DEFAULTS,
}
