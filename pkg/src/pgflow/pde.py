"""Backward Hamilton-Jacobi policy evaluation and forward Fokker-Planck transport.

Both solvers march explicitly with the same CFL substep schedule and the same
stencil weights; the Fokker-Planck update is the exact transpose of the
Hamilton-Jacobi update.  The central-difference advection term becomes the
flux-form divergence with face fluxes averaged from neighbouring nodes, the
diffusion term the second difference of ``D rho``.  Consequently

    sum_x rho(0) V(0) dx^n == sum of the left-endpoint running-cost sums + sum_x rho(T) h dx^n

holds to round-off, and the discrete density keeps its mass exactly.
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLFailure, ConservationFailure, InvalidArgument, NumericError
from .fields import ControlField, ScalarField, SpaceTimeGrid, Stencil
from .problem import ProblemSpec

POSITIVITY_FLOOR = -1e-6
_ADV_EPS = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    cfl_safety: float = 0.4
    max_substeps_per_level: int = 1024
    mass_tolerance: float = 1e-8

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise InvalidArgument("cfl_safety must lie in (0, 1]")
        if self.max_substeps_per_level < 1 or not self.mass_tolerance > 0:
            raise InvalidArgument("substep cap and mass tolerance must be positive")


@dataclass
class SolverReport:
    kind: str
    substeps_used: int
    cfl_limit: float
    mass_drift_max: float = 0.0
    min_density: float = math.nan
    uniform_start: bool = False
    problem: str = ""
    warnings: list = field(default_factory=list)

    CSV_FIELDS = ("kind", "problem", "substeps_used", "mass_drift_max", "min_density", "cfl_limit")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.DictWriter(buf, self.CSV_FIELDS, lineterminator="\n").writerow(self.as_row())
        return buf.getvalue()


# Reports of Fokker-Planck runs made while a collector is active.
_collectors: list[list] = []


@contextlib.contextmanager
def collect_fp_reports():
    """Record the report of every ``solve_fp`` call made inside the block."""
    bucket: list = []
    _collectors.append(bucket)
    try:
        yield bucket
    finally:
        _collectors.remove(bucket)


def _log(report):
    for bucket in _collectors:
        bucket.append(report)


_stencils: dict = {}


def stencil_for(grid: SpaceTimeGrid) -> Stencil:
    key = (grid.n, grid.n_x)
    if key not in _stencils:
        _stencils[key] = Stencil(grid)
    return _stencils[key]


def _coefficients(spec: ProblemSpec, grid: SpaceTimeGrid, u: np.ndarray, t: np.ndarray):
    x = grid.points
    b = np.broadcast_to(spec.drift(t[:, None], x, u), u.shape[:-1] + (spec.n,))
    s = np.broadcast_to(spec.diffusion(t[:, None], x, u), u.shape[:-1] + (spec.n, spec.n_noise))
    D = 0.5 * np.einsum("...il,...jl->...ij", s, s)
    return b, D


def substep_schedule(spec: ProblemSpec, u: ControlField, cfg: SolverConfig | None = None):
    """Substeps per level interval and the tightest allowed substep.

    Each interval is checked at both end levels and the midpoint of the
    linearly interpolated control:
    ``dt_sub <= safety * min(dx^2 / (2 n D_max), dx / (max|b| + eps))``.
    """
    cfg = cfg or SolverConfig()
    grid = u.grid
    v = u.values
    probes = np.stack([v[:-1], 0.5 * (v[:-1] + v[1:]), v[1:]])  # (3, n_t-1, N, n')
    t = grid.times
    tt = np.stack([t[:-1], 0.5 * (t[:-1] + t[1:]), t[1:]])
    b, D = _coeff3(spec, grid, probes, tt)
    d_max = np.einsum("...ii->...i", D).max(axis=(0, 2, 3))
    b_max = np.abs(b).max(axis=(0, 2, 3))
    dx = grid.dx
    with np.errstate(divide="ignore"):
        diff_lim = np.where(d_max > 0, dx * dx / (2 * grid.n * d_max), np.inf)
    adv_lim = dx / (b_max + _ADV_EPS)
    allowed = cfg.cfl_safety * np.minimum(diff_lim, adv_lim)
    needed = np.maximum(1, np.ceil(grid.dt / allowed - 1e-9)).astype(np.int64)
    worst = int(needed.max())
    if worst > cfg.max_substeps_per_level:
        raise CFLFailure(
            f"explicit scheme needs {worst} substeps per level, cap is {cfg.max_substeps_per_level}",
            needed=worst,
        )
    return needed, float(allowed.min())


def _coeff3(spec, grid, probes, tt):
    x = grid.points
    tb = tt[:, :, None]
    b = np.broadcast_to(spec.drift(tb, x, probes), probes.shape[:-1] + (spec.n,))
    s = np.broadcast_to(
        spec.diffusion(tb, x, probes), probes.shape[:-1] + (spec.n, spec.n_noise)
    )
    return b, 0.5 * np.einsum("...il,...jl->...ij", s, s)


def _resolve_schedule(spec, u, cfg, schedule):
    needed, limit = substep_schedule(spec, u, cfg)
    if schedule is None:
        return needed, limit
    schedule = np.asarray(schedule, dtype=np.int64)
    if schedule.shape != needed.shape:
        raise InvalidArgument("substep schedule has the wrong length")
    if np.any(schedule < needed):
        raise CFLFailure(
            "pinned substep schedule violates the CFL bound for this control",
            needed=int(needed.max()),
        )
    return schedule, limit


def _interval_weights(spec, grid, stencil, u, l, s):
    """Stencil weights and running cost for the ``s`` substeps of interval ``l``."""
    theta = np.arange(s) / s
    t_sub = grid.times[l] + theta * grid.dt
    u_sub = (1 - theta)[:, None, None] * u[l] + theta[:, None, None] * u[l + 1]
    b, D = _coefficients(spec, grid, u_sub, t_sub)
    r = np.broadcast_to(spec.running_cost(t_sub[:, None], grid.points, u_sub), (s, grid.n_nodes))
    return stencil.weights(b, D), r


def solve_hj(
    spec: ProblemSpec,
    u: ControlField,
    cfg: SolverConfig | None = None,
    schedule=None,
) -> ScalarField:
    """Value function of a fixed control: ``-V_t + G(t, x, u, -grad V, -hess V) = 0``, ``V(T) = h``.

    Marches backward with ``V <- V + delta (b.grad V + D:hess V + r)``; the
    control is linear in time between levels and coefficients are taken at
    the left end of each substep.  The returned field carries a
    :class:`SolverReport` in ``.report`` and the schedule in ``.report.schedule``.
    """
    cfg = cfg or SolverConfig()
    grid = u.grid
    sched, limit = _resolve_schedule(spec, u, cfg, schedule)
    stencil = stencil_for(grid)
    uv = u.values
    out = np.empty((grid.n_t, grid.n_nodes))
    V = np.broadcast_to(spec.terminal_cost(grid.points), (grid.n_nodes,)).astype(float)
    out[-1] = V
    for l in range(grid.n_t - 2, -1, -1):
        s = int(sched[l])
        delta = grid.dt / s
        W, r = _interval_weights(spec, grid, stencil, uv, l, s)
        for j in range(s - 1, -1, -1):
            V = V + delta * (stencil.apply(W[j], V) + r[j])
        if not np.all(np.isfinite(V)):
            raise NumericError(f"value function became non-finite at level {l}")
        out[l] = V
    report = SolverReport("hj", int(sched.sum()), limit, problem=spec.name)
    report.schedule = sched
    return ScalarField(grid, out, "value", report)


def solve_fp(
    spec: ProblemSpec,
    u: ControlField,
    rho0=None,
    cfg: SolverConfig | None = None,
    schedule=None,
    start_level: int = 0,
) -> ScalarField:
    """Density of the controlled state, ``rho_t = -div(b rho) + sum_ij d_i d_j (D_ij rho)``.

    ``rho0`` defaults to the uniform density.  Levels before ``start_level``
    are zero.  Undershoots below ``-1e-6`` are recorded in the report, never
    clipped; mass drift beyond ``cfg.mass_tolerance`` raises.
    """
    cfg = cfg or SolverConfig()
    grid = u.grid
    sched, limit = _resolve_schedule(spec, u, cfg, schedule)
    stencil = stencil_for(grid)
    uniform = rho0 is None
    rho = np.ones(grid.n_nodes) if uniform else np.asarray(rho0, dtype=float).reshape(-1)
    if rho.shape != (grid.n_nodes,):
        raise InvalidArgument("initial density has the wrong number of nodes")
    if np.any(rho < 0):
        raise InvalidArgument("initial density must be nonnegative")
    mass0 = rho.mean()
    if abs(mass0 - 1.0) > cfg.mass_tolerance:
        raise InvalidArgument(f"initial density must have mean 1, got {mass0}")
    out = np.zeros((grid.n_t, grid.n_nodes))
    out[start_level] = rho
    uv = u.values
    drift = 0.0
    for l in range(start_level, grid.n_t - 1):
        s = int(sched[l])
        delta = grid.dt / s
        W, _ = _interval_weights(spec, grid, stencil, uv, l, s)
        for j in range(s):
            rho = rho + delta * stencil.apply_transpose(W[j], rho)
        if not np.all(np.isfinite(rho)):
            raise NumericError(f"density became non-finite at level {l + 1}")
        out[l + 1] = rho
        drift = max(drift, abs(rho.mean() - mass0))
    report = SolverReport(
        "fp",
        int(sched[start_level:].sum()),
        limit,
        mass_drift_max=float(drift),
        min_density=float(out[start_level:].min()),
        uniform_start=uniform and start_level == 0,
        problem=spec.name,
    )
    report.schedule = sched
    if report.min_density < POSITIVITY_FLOOR:
        report.warnings.append(f"positivity: min density {report.min_density:.3e}")
    _log(report)
    if drift > cfg.mass_tolerance:
        raise ConservationFailure(f"mass drift {drift:.3e} exceeds {cfg.mass_tolerance:.1e}")
    return ScalarField(grid, out, "density", report)


def fundamental_solution(
    spec: ProblemSpec,
    u: ControlField,
    s_level: int,
    y_node: int,
    cfg: SolverConfig | None = None,
    schedule=None,
) -> ScalarField:
    """Grid surrogate of ``p(t, x; s, y)``: transport of a unit-mass spike at node ``y`` from level ``s``.

    Only meaningful for ``t - s`` of at least ten ``dx^2``.
    """
    grid = u.grid
    if not 0 <= s_level < grid.n_t or not 0 <= y_node < grid.n_nodes:
        raise InvalidArgument("source level or node out of range")
    delta = np.zeros(grid.n_nodes)
    delta[y_node] = 1.0 / grid.cell_volume
    return solve_fp(spec, u, delta, cfg, schedule, start_level=s_level)


def bellman_cost(spec: ProblemSpec, u: ControlField, rho: ScalarField) -> float:
    """Cost as ``int int r rho dx dt + int h rho(T) dx`` with trapezoid weights in time."""
    grid = u.grid
    r = spec.running_cost(grid.times[:, None], grid.points, u.values)
    r = np.broadcast_to(r, (grid.n_t, grid.n_nodes))
    running = grid.time_weights @ (r * rho.values).sum(axis=1) * grid.cell_volume
    h = np.broadcast_to(spec.terminal_cost(grid.points), (grid.n_nodes,))
    return float(running + (h * rho.values[-1]).sum() * grid.cell_volume)
