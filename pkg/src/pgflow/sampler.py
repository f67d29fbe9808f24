"""Euler-Maruyama sampling on the torus, Monte Carlo costs and the regression update.

All randomness comes from the counter-based generator in :mod:`pgflow.rng`:
initial points from stream 1 keyed by path, Brownian increments from
stream 0 keyed by ``(path, step, component)``.  Two batches with the same seed
therefore share their initial points and noise (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, NumericError, RegressionFailure
from .fields import ControlField, ScalarField, grad_array, hess_array, interp_weights, interpolate_array, l2_norm
from .problem import CoState, ProblemSpec, grad_u_G, torus_displacement
from .rng import standard_normals, uniform_points

REG_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Seeded ensemble of Euler-Maruyama paths.

    Attributes
    ----------
    states : ndarray, shape ``(n_paths, N + 1, n)``
        Wrapped positions at ``t_i = i dt``.
    unwrapped_displacement : ndarray, shape ``(n_paths, n)``
        ``x_N - x_0`` accumulated without wrapping.
    noise : ndarray, shape ``(n_paths, N, m)``
        Brownian increments ``sqrt(dt) xi``.
    controls : ndarray, shape ``(n_paths, N, n')``
        Controls applied at the left end of every step.
    """

    T: float
    seed: int
    states: np.ndarray
    unwrapped_displacement: np.ndarray
    noise: np.ndarray
    controls: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def simulate(spec: ProblemSpec, u: ControlField, n_paths: int, N: int, seed: int) -> TrajectoryBatch:
    """Sample ``x_{i+1} = x_i + b dt + sigma sqrt(dt) xi`` under the control field ``u``.

    ``x_0`` is uniform on the torus; the control at ``(t_i, x_i)`` comes from
    space-time multilinear interpolation of ``u``.

    Raises
    ------
    NumericError
        Non-finite drift or diffusion at a visited point; the message names
        the first offending path.
    """
    if N < 1 or n_paths < 1:
        raise InvalidArgument("need at least one path and one step")
    grid = u.grid
    T = grid.T
    dt = T / N
    paths = np.arange(n_paths)
    x = uniform_points(seed, paths, spec.n)
    noise = np.sqrt(dt) * standard_normals(seed, paths, np.arange(N), spec.n_noise)
    states = np.empty((n_paths, N + 1, spec.n))
    controls = np.empty((n_paths, N, spec.n_control))
    states[:, 0] = x
    disp = np.zeros((n_paths, spec.n))
    for i in range(N):
        t = i * dt
        ui = interpolate_array(grid, u.values, t, x)
        b = np.broadcast_to(spec.drift(t, x, ui), (n_paths, spec.n))
        s = np.broadcast_to(spec.diffusion(t, x, ui), (n_paths, spec.n, spec.n_noise))
        step = b * dt + np.einsum("pij,pj->pi", s, noise[:, i])
        bad = ~np.all(np.isfinite(step), axis=-1)
        if np.any(bad):
            raise NumericError(f"non-finite coefficients on path {int(np.flatnonzero(bad)[0])} at step {i}")
        controls[:, i] = ui
        disp += step
        x = spec.geometry.wrap(x + step)
        states[:, i + 1] = x
    return TrajectoryBatch(T, int(seed), states, disp, noise, controls)


def estimate_J_mc(spec: ProblemSpec, u: ControlField, batch: TrajectoryBatch) -> dict:
    """Mean and standard error of ``sum_i r(t_i, x_i, u) dt + h(x_N)`` over paths.

    The control is re-evaluated from ``u`` at the visited points, so a batch
    drawn under another control gives an off-policy estimate.
    """
    N, dt = batch.n_steps, batch.dt
    t = batch.times[:N]
    x = batch.states[:, :N]
    uv = interpolate_array(u.grid, u.values, t[None, :], x)
    r = np.broadcast_to(spec.running_cost(t[None, :], x, uv), (batch.n_paths, N))
    h = np.broadcast_to(spec.terminal_cost(batch.states[:, N]), (batch.n_paths,))
    cost = r.sum(axis=1) * dt + h
    se = cost.std(ddof=1) / np.sqrt(batch.n_paths) if batch.n_paths > 1 else 0.0
    return {"estimate": float(cost.mean()), "std_error": float(se), "n_paths": batch.n_paths}


@dataclass
class RegressionInfo:
    """Sample count, hats without samples and the ridge weight; ``visited`` is ``(n_t, n_nodes)``."""

    n_samples: int
    unvisited: int
    reg_lambda: float
    visited: np.ndarray


def regression_update_points(
    spec: ProblemSpec,
    u_theta: ControlField,
    V: ScalarField,
    t,
    x,
    dtau: float,
    return_info: bool = False,
):
    """Least-squares fit of ``dtau grad_u G`` at sample points onto the grid hats.

    Solves ``min_dtheta sum_samples |phi(t, x)^T dtheta - dtau grad_u G(t, x)|^2``
    through the regularised normal equations ``(A^T A + lambda I) dtheta = A^T y``
    with ``lambda = 1e-8 trace(A^T A) / n_columns``.  Hats without samples get
    ``dtheta = 0``.

    Parameters
    ----------
    t : array_like, shape ``(S,)``
    x : array_like, shape ``(S, n)``

    Raises
    ------
    RegressionFailure
        No samples, or the regularised system cannot be factorised.
    """
    grid = u_theta.grid
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(t.size, spec.n)
    n_cols = grid.n_t * grid.n_nodes
    if t.size == 0:
        raise RegressionFailure("no samples", unvisited=n_cols)
    gV = grad_array(grid, V.values)
    hV = hess_array(grid, V.values)
    cs = CoState.from_value_derivatives(
        interpolate_array(grid, gV, t, x), interpolate_array(grid, hV, t, x)
    )
    us = interpolate_array(grid, u_theta.values, t, x)
    y = dtau * grad_u_G(spec, x, us, cs, t)  # (S, n')

    lv, nd, w = interp_weights(grid, t, x)
    rows = np.repeat(np.arange(t.size), w.shape[-1])
    A = sp.csr_matrix((w.ravel(), (rows, (lv * grid.n_nodes + nd).ravel())), shape=(t.size, n_cols))
    AtA = (A.T @ A).tocsc()
    diag = AtA.diagonal()
    unvisited = int(np.count_nonzero(diag == 0))
    lam = REG_SCALE * diag.sum() / n_cols
    if not lam > 0:
        raise RegressionFailure("design matrix is empty", unvisited=unvisited)
    try:
        lu = splu((AtA + lam * sp.identity(n_cols, format="csc")).tocsc())
        dtheta = lu.solve(np.asarray(A.T @ y))
    except RuntimeError as exc:
        raise RegressionFailure(f"normal equations are singular: {exc}", unvisited=unvisited) from exc
    if not np.all(np.isfinite(dtheta)):
        raise RegressionFailure("non-finite regression solution", unvisited=unvisited)
    out = ControlField(grid, u_theta.values + dtheta.reshape(grid.n_t, grid.n_nodes, spec.n_control))
    if return_info:
        return out, RegressionInfo(t.size, unvisited, float(lam), (diag > 0).reshape(grid.n_t, grid.n_nodes))
    return out


def regression_update(
    spec: ProblemSpec,
    u_theta: ControlField,
    V: ScalarField,
    batch: TrajectoryBatch,
    dtau: float,
    return_info: bool = False,
):
    """Regression step on the sample set ``{(t_i, x_i) : i = 0..N-1}`` of a batch.

    The terminal index ``i = N`` is excluded.  See :func:`regression_update_points`.
    """
    N = batch.n_steps
    t = np.broadcast_to(batch.times[:N], (batch.n_paths, N)).reshape(-1)
    x = batch.states[:, :N].reshape(-1, spec.n)
    return regression_update_points(spec, u_theta, V, t, x, dtau, return_info)


def coupling_experiment(
    spec: ProblemSpec, u1: ControlField, u2: ControlField, n_paths: int, N: int, seed: int
) -> dict:
    """Mean squared torus distance of two control runs sharing noise and initial points.

    Returns
    -------
    dict
        ``sup_mean_sq_distance`` (sup over time of the path average),
        ``l2_control_distance_sq`` and their ``ratio`` (``nan`` for equal controls).
    """
    if u1.grid != u2.grid:
        raise InvalidArgument("both controls must live on the same grid")
    b1 = simulate(spec, u1, n_paths, N, seed)
    b2 = simulate(spec, u2, n_paths, N, seed)
    d = torus_displacement(b1.states, b2.states)
    msd = np.mean(np.sum(d * d, axis=-1), axis=0)
    sup = float(msd.max())
    l2sq = l2_norm(u1 - u2) ** 2
    ratio = sup / l2sq if l2sq > 0 else float("nan")
    return {"sup_mean_sq_distance": sup, "l2_control_distance_sq": l2sq, "ratio": ratio}
