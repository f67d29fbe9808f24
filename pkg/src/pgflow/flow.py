"""Policy-gradient flow on the grid-parametrised control.

The functional gradient of ``J[u] = int rho(0) V(0) dx`` is
``dJ/du = -rho grad_u G(t, x, u, -grad V, -hess V)``.  Two discretisations
are offered:

``"adjoint"`` (default)
    The same product evaluated at every solver substep with that substep's
    density and value, then distributed onto the grid levels through the
    linear-in-time interpolation of the control and divided by the
    quadrature weights.  This is the exact gradient of the discrete cost, so
    finite differences of ``J`` agree with it to round-off and Armijo
    backtracking never fights a biased direction.
``"nodal"``
    The product at the grid nodes themselves.  Consistent with the above to
    ``O(dt + dx^2)``.

The flow iterates ``u <- u - dtau * dJ/du`` with Armijo backtracking.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, StepFailure
from .fields import ControlField, ScalarField, grad_array, hess_array, l2_norm
from .local_opt import ArgmaxConfig, hjb_residual, local_optimal_field
from .pde import (
    SolverConfig,
    _interval_weights,
    fundamental_solution,
    solve_fp,
    solve_hj,
    stencil_for,
    substep_schedule,
)
from .problem import CoState, ProblemSpec, grad_u_G

TRACE_FIELDS = ("tau", "J", "grad_norm", "dist_to_local", "accepted_dtau", "hjb_residual", "wall_ms")
GRADIENT_METHODS = ("adjoint", "nodal")
RATIO_GUARD = 1e-10
# relative round-off allowance of the sufficient-decrease test
ARMIJO_FLOOR = 1e-14


@dataclass(frozen=True)
class FlowConfig:
    """Step size, stopping rules and diagnostics of the gradient flow.

    ``stall_window`` and ``stall_min_decrease`` stop the flow when ``J``
    drops by less than ``stall_min_decrease`` over the last
    ``stall_window`` steps.  ``monotone_tol_V``, when set, additionally
    halves the step until no node of ``V`` rises by more than the tolerance.
    ``hjb_every = k > 0`` records the HJB residual every ``k`` steps.
    ``local_multistart = False`` measures ``dist_to_local`` against the
    incumbent-only local maximiser.
    """

    dtau: float = 0.5
    max_steps: int = 200
    stop_grad_norm: float = 1e-6
    stall_window: int = 10
    stall_min_decrease: float = 0.0
    armijo: bool = True
    armijo_shrink: float = 0.5
    armijo_c1: float = 1e-4
    max_halvings: int = 20
    monotone_tol_V: float | None = None
    hjb_every: int = 0
    local_multistart: bool = True
    gradient: str = "adjoint"
    solver: SolverConfig = field(default_factory=SolverConfig)
    argmax: ArgmaxConfig = field(default_factory=ArgmaxConfig)

    def __post_init__(self):
        if not self.dtau > 0:
            raise InvalidArgument("dtau must be positive")
        if self.max_steps < 0 or self.stall_window < 1 or self.max_halvings < 0:
            raise InvalidArgument("step counts must be nonnegative and the stall window positive")
        if not (self.stop_grad_norm > 0 and 0 < self.armijo_shrink < 1 and self.armijo_c1 > 0):
            raise InvalidArgument("stopping tolerance, shrink factor and slope constant out of range")
        if self.stall_min_decrease < 0:
            raise InvalidArgument("stall threshold must be nonnegative")
        if self.monotone_tol_V is not None and not self.monotone_tol_V > 0:
            raise InvalidArgument("monotonicity tolerance must be positive")
        if self.gradient not in GRADIENT_METHODS:
            raise InvalidArgument(f"gradient method must be one of {GRADIENT_METHODS}")

    def argmax_cfg(self) -> ArgmaxConfig:
        return replace(self.argmax, multistart=self.local_multistart)


@dataclass(frozen=True, eq=False)
class FlowState:
    """A control together with its value, density, cost and gradient (all consistent)."""

    tau: float
    u: ControlField
    V: ScalarField
    rho: ScalarField
    J: float
    grad: ControlField
    grad_norm: float
    dist_to_local: float
    schedule: np.ndarray
    u_local: ControlField | None = None
    accepted_dtau: float = math.nan


def cost_J(V: ScalarField, rho0=None) -> float:
    """``int rho(0, x) V(0, x) dx``; uniform ``rho0`` when omitted."""
    grid = V.grid
    v0 = V.values[0]
    if rho0 is None:
        return float(v0.sum() * grid.cell_volume)
    r0 = np.asarray(rho0.values[0] if isinstance(rho0, ScalarField) else rho0, dtype=float)
    return float((r0.reshape(-1) * v0).sum() * grid.cell_volume)


def _costate(grid, v):
    return CoState.from_value_derivatives(grad_array(grid, v), hess_array(grid, v))


def _nodal_gradient(spec, u, V, rho):
    grid = u.grid
    cs = _costate(grid, V.values)
    gG = grad_u_G(spec, grid.points, u.values, cs, grid.times[:, None])
    return -rho.values[..., None] * gG


def _adjoint_gradient(spec, u, V, rho, start_level=0, schedule=None):
    grid = u.grid
    sched = schedule if schedule is not None else getattr(V.report, "schedule", None)
    if sched is None:
        sched, _ = substep_schedule(spec, u)
    stencil = stencil_for(grid)
    uv = u.values
    euclid = np.zeros_like(uv)
    for l in range(start_level, grid.n_t - 1):
        s = int(sched[l])
        delta = grid.dt / s
        W, r = _interval_weights(spec, grid, stencil, uv, l, s)
        vs = np.empty((s + 1, grid.n_nodes))
        vs[s] = V.values[l + 1]
        for j in range(s - 1, -1, -1):
            vs[j] = vs[j + 1] + delta * (stencil.apply(W[j], vs[j + 1]) + r[j])
        rs = np.empty((s, grid.n_nodes))
        R = rho.values[l]
        for j in range(s):
            rs[j] = R
            R = R + delta * stencil.apply_transpose(W[j], R)
        theta = np.arange(s) / s
        t_sub = grid.times[l] + theta * grid.dt
        u_sub = (1 - theta)[:, None, None] * uv[l] + theta[:, None, None] * uv[l + 1]
        gG = grad_u_G(spec, grid.points, u_sub, _costate(grid, vs[1:]), t_sub[:, None])
        contrib = delta * rs[..., None] * gG
        euclid[l] -= np.einsum("s,snk->nk", 1 - theta, contrib)
        euclid[l + 1] -= np.einsum("s,snk->nk", theta, contrib)
    return euclid / grid.time_weights[:, None, None]


def functional_gradient(
    spec: ProblemSpec, u: ControlField, V: ScalarField, rho: ScalarField, method: str = "adjoint"
) -> ControlField:
    """L2 gradient ``dJ/du = -rho grad_u G`` with the co-state of ``V``.

    Parameters
    ----------
    spec : ProblemSpec
    u : ControlField
    V, rho : ScalarField
        Value and density of ``u`` from :func:`solve_hj` and :func:`solve_fp`
        with the same substep schedule.
    method : {"adjoint", "nodal"}
        See the module docstring.

    Returns
    -------
    ControlField
        Same shape as ``u``.
    """
    if method == "adjoint":
        return ControlField(u.grid, _adjoint_gradient(spec, u, V, rho))
    if method == "nodal":
        return ControlField(u.grid, _nodal_gradient(spec, u, V, rho))
    raise InvalidArgument(f"gradient method must be one of {GRADIENT_METHODS}")


def value_sensitivity(
    spec: ProblemSpec,
    u: ControlField,
    V: ScalarField,
    s_level: int,
    y_node: int,
    method: str = "adjoint",
    cfg: SolverConfig | None = None,
) -> ControlField:
    """L2 gradient of ``V(s, y)`` in the control: ``-1{t >= s} p(t, x; s, y) grad_u G``.

    The density is replaced by the transported unit spike at node ``y_node``
    from level ``s_level``; entries before ``s_level`` are zero.
    """
    sched = getattr(V.report, "schedule", None)
    p = fundamental_solution(spec, u, s_level, y_node, cfg, sched)
    if method == "nodal":
        g = _nodal_gradient(spec, u, V, p)
        g[:s_level] = 0.0
        return ControlField(u.grid, g)
    if method != "adjoint":
        raise InvalidArgument(f"gradient method must be one of {GRADIENT_METHODS}")
    return ControlField(u.grid, _adjoint_gradient(spec, u, V, p, s_level, sched))


def _schedule_for(spec, u, cfg, floor=None):
    needed, _ = substep_schedule(spec, u, cfg.solver)
    return needed if floor is None else np.maximum(needed, floor)


def make_state(
    spec: ProblemSpec,
    u: ControlField,
    cfg: FlowConfig | None = None,
    tau: float = 0.0,
    schedule=None,
    V: ScalarField | None = None,
) -> FlowState:
    """Solve for ``V`` and ``rho`` and assemble a consistent :class:`FlowState`.

    ``schedule`` is a lower bound on the substeps per interval; the CFL
    requirement of ``u`` may raise it.
    """
    cfg = cfg or FlowConfig()
    sched = _schedule_for(spec, u, cfg, schedule)
    if V is None or not np.array_equal(getattr(V.report, "schedule", None), sched):
        V = solve_hj(spec, u, cfg.solver, sched)
    rho = solve_fp(spec, u, None, cfg.solver, sched)
    grad = functional_gradient(spec, u, V, rho, cfg.gradient)
    u_loc = local_optimal_field(spec, u, V, cfg.argmax_cfg())
    return FlowState(
        tau=tau,
        u=u,
        V=V,
        rho=rho,
        J=cost_J(V),
        grad=grad,
        grad_norm=l2_norm(grad),
        dist_to_local=l2_norm(u - u_loc),
        schedule=sched,
        u_local=u_loc,
    )


def flow_step(spec: ProblemSpec, state: FlowState, cfg: FlowConfig | None = None, dtau=None) -> FlowState:
    """One Armijo-controlled step ``u <- u - dtau dJ/du``.

    The step is halved until ``J(new) <= J(old) - c1 dtau |dJ/du|^2`` up to
    a round-off allowance of ``1e-14 max(1, |J|)`` (and,
    when ``cfg.monotone_tol_V`` is set, until ``V`` rises nowhere by more
    than that tolerance).  Should the trial control need more substeps, the
    old cost is recomputed on the finer schedule so that both sides of the
    test use the same discretisation.

    Raises
    ------
    StepFailure
        ``cfg.max_halvings`` halvings without acceptance.
    """
    cfg = cfg or FlowConfig()
    step = cfg.dtau if dtau is None else float(dtau)
    if step < 0:
        raise InvalidArgument("dtau must be nonnegative")
    if step == 0:
        return replace(state, accepted_dtau=0.0)
    gn2 = state.grad_norm**2
    sched = state.schedule
    J_ref, V_ref = state.J, state.V
    last = {}
    for k in range(cfg.max_halvings + 1):
        trial = state.u - step * state.grad
        new_sched = _schedule_for(spec, trial, cfg, sched)
        if np.any(new_sched > sched):
            sched = new_sched
            V_ref = solve_hj(spec, state.u, cfg.solver, sched)
            J_ref = cost_J(V_ref)
        V = solve_hj(spec, trial, cfg.solver, sched)
        J = cost_J(V)
        last = {"dtau": step, "J_trial": J, "J_ref": J_ref, "halvings": k}
        floor = ARMIJO_FLOOR * max(1.0, abs(J_ref))
        ok = not cfg.armijo or J <= J_ref - cfg.armijo_c1 * step * gn2 + floor
        if ok and cfg.monotone_tol_V is not None:
            rise = float((V.values - V_ref.values).max())
            last["V_rise"] = rise
            ok = rise <= cfg.monotone_tol_V
        if ok:
            new = make_state(spec, trial, cfg, state.tau + step, sched, V)
            return replace(new, accepted_dtau=step)
        step *= cfg.armijo_shrink
    raise StepFailure(
        f"no acceptable step after {cfg.max_halvings} halvings (grad norm {state.grad_norm:.3e})",
        diagnostics={**last, "J_old": state.J, "grad_norm": state.grad_norm},
    )


@dataclass
class FlowResult:
    """Trace records, the final state and why the flow stopped (grad, stall or maxed)."""

    trace: list
    state: FlowState
    stop_reason: str

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.trace], dtype=float)


def _record(state, cfg, spec, step_index, wall_ms):
    rec = {
        "tau": state.tau,
        "J": state.J,
        "grad_norm": state.grad_norm,
        "dist_to_local": state.dist_to_local,
        "accepted_dtau": state.accepted_dtau,
        "hjb_residual": None,
        "wall_ms": wall_ms,
    }
    if cfg.hjb_every and step_index % cfg.hjb_every == 0:
        rec["hjb_residual"] = hjb_residual(spec, state.V, cfg.argmax_cfg(), incumbent=state.u)
    return rec


def run_flow(spec: ProblemSpec, u0: ControlField, cfg: FlowConfig | None = None, callback=None) -> FlowResult:
    """Iterate :func:`flow_step` until the gradient is small, ``J`` stalls or steps run out.

    ``callback(state)`` is called after every accepted step.  A
    :class:`StepFailure` propagates with the partial trace in
    ``diagnostics["trace"]``.
    """
    cfg = cfg or FlowConfig()
    t0 = time.perf_counter()
    state = make_state(spec, u0, cfg)
    trace = [_record(state, cfg, spec, 0, (time.perf_counter() - t0) * 1e3)]
    reason = "maxed"
    for k in range(1, cfg.max_steps + 1):
        if state.grad_norm < cfg.stop_grad_norm:
            reason = "grad"
            break
        if k > cfg.stall_window and cfg.stall_min_decrease > 0:
            if trace[-cfg.stall_window - 1]["J"] - state.J < cfg.stall_min_decrease:
                reason = "stall"
                break
        t1 = time.perf_counter()
        try:
            state = flow_step(spec, state, cfg)
        except StepFailure as exc:
            exc.diagnostics["trace"] = trace
            raise
        trace.append(_record(state, cfg, spec, k, (time.perf_counter() - t1) * 1e3))
        if callback is not None:
            callback(state)
    else:
        if state.grad_norm < cfg.stop_grad_norm:
            reason = "grad"
    return FlowResult(trace, state, reason)


def pl_diagnostics(state: FlowState, u_star: ControlField | None = None, J_star: float | None = None) -> dict:
    """Quantities of the Polyak-Lojasiewicz argument at one state.

    ``J_gap`` is ``J - J_star`` when a reference cost is given.  The ratio
    ``|u - u_loc| / |u - u_star|`` is ``None`` without ``u_star`` or when the
    denominator is below ``1e-10``.
    """
    out = {"grad_norm_sq": state.grad_norm**2, "J_gap": None, "ratio": None}
    if J_star is not None:
        out["J_gap"] = state.J - J_star
    if u_star is not None:
        denom = l2_norm(state.u - u_star)
        if denom >= RATIO_GUARD:
            out["ratio"] = state.dist_to_local / denom
    return out
