"""Pointwise maximisation of the generalised Hamiltonian and the HJB residual.

The local optimal control is ``u_loc(t, x) = argmax_u G(t, x, u, -grad V, -hess V)``
for the value function ``V`` of the current control.  G need not be concave,
so each node runs a small batched multistart Newton iteration; with the
multistart disabled only the incumbent control is improved, which finds the
nearest local maximum rather than the global one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgmaxFailure, BoxViolation, InvalidArgument
from .fields import ControlField, ScalarField, grad_array, hess_array
from .problem import DEFAULT_U_BOX, CoState, ProblemSpec, eval_G, grad_u_G, hess_u_G

_MAX_HALVINGS = 30
_ESCAPE_STEP = 0.1


@dataclass(frozen=True)
class ArgmaxConfig:
    """Settings of the multistart Newton search.

    Attributes
    ----------
    newton_tol : float
        Stationarity tolerance on ``|grad_u G|``.
    max_newton_iters : int
        Iteration budget per start.
    multistart_offsets : tuple or None
        Offsets added to the incumbent.  ``None`` means ``0`` and ``+-1`` along
        every control axis.
    tie_tol : float
        G-values within this distance of the best count as tied; ties go to
        the lexicographically largest control.
    u_box : float
        Admissible sup-norm of a maximiser.
    multistart : bool
        ``False`` keeps only the incumbent start (local search).
    """

    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    multistart_offsets: tuple | None = None
    tie_tol: float = 1e-9
    u_box: float = DEFAULT_U_BOX
    multistart: bool = True

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.tie_tol > 0 and self.u_box > 0):
            raise InvalidArgument("argmax tolerances and box must be positive")
        if self.max_newton_iters < 1:
            raise InvalidArgument("need at least one Newton iteration")
        if self.multistart_offsets is not None and len(self.multistart_offsets) == 0:
            raise InvalidArgument("need at least one start point")

    def offsets(self, n_control: int) -> np.ndarray:
        if not self.multistart:
            return np.zeros((1, n_control))
        if self.multistart_offsets is not None:
            off = np.asarray(self.multistart_offsets, dtype=float).reshape(-1, n_control)
            return off
        eye = np.eye(n_control)
        return np.concatenate([np.zeros((1, n_control)), eye, -eye])


@dataclass
class ArgmaxInfo:
    """Diagnostics of a batched argmax: ties resolved by convention and worst residual."""

    ties: int = 0
    max_residual: float = 0.0
    iterations: int = 0
    notes: list = field(default_factory=list)


def _newton(spec, t, x, cs, u, cfg):
    """Damped Newton ascent on every row of ``u`` (flat batch); returns ``(u, residual)``."""
    u = u.copy()
    escaped = np.zeros(u.shape[0], dtype=bool)
    g = grad_u_G(spec, x, u, cs, t)
    iters = 0
    for iters in range(1, cfg.max_newton_iters + 1):
        res = np.linalg.norm(g, axis=-1)
        active = res > cfg.newton_tol
        H = hess_u_G(spec, x, u, cs, t)
        lam, vec = np.linalg.eigh(H)
        # converged onto a non-maximum: push off along the worst eigenvector once
        stuck = ~active & (lam[:, -1] > 0) & ~escaped
        if np.any(stuck):
            u[stuck] += _ESCAPE_STEP * vec[stuck, :, -1]
            escaped |= stuck
            g = grad_u_G(spec, x, u, cs, t)
            continue
        if not np.any(active):
            break
        neg_def = lam[:, -1] < 0
        # Newton direction where H < 0, ascent direction elsewhere
        coef = np.einsum("bij,bj->bi", vec.transpose(0, 2, 1), g)
        newton_dir = -np.einsum("bij,bj->bi", vec, coef / np.where(neg_def[:, None], lam, -1.0))
        direction = np.where(neg_def[:, None], newton_dir, g)
        step = np.where(active, 1.0, 0.0)
        G0 = eval_G(spec, x, u, cs, t)
        done = ~active
        for _ in range(_MAX_HALVINGS):
            trial = u + step[:, None] * direction
            G1 = eval_G(spec, x, trial, cs, t)
            g1 = grad_u_G(spec, x, trial, cs, t)
            ok = (G1 >= G0 - 1e-14 * np.maximum(1.0, np.abs(G0))) | (
                np.linalg.norm(g1, axis=-1) < res
            )
            ok &= np.all(np.isfinite(trial), axis=-1)
            newly = ok & ~done
            u[newly] = trial[newly]
            done |= ok
            if np.all(done):
                break
            step = np.where(done, step, 0.5 * step)
        g = grad_u_G(spec, x, u, cs, t)
    return u, np.linalg.norm(g, axis=-1), iters


def argmax_G_batch(spec: ProblemSpec, t, x, cs: CoState, incumbent, cfg: ArgmaxConfig | None = None):
    """Maximise G over the control at every point of a batch.

    Parameters
    ----------
    spec : ProblemSpec
    t : array_like
        Times broadcasting against the batch.
    x : array_like
        Points, shape ``batch + (n,)``.
    cs : CoState
        Co-state with batch shape matching ``x``.
    incumbent : array_like
        Current controls, shape ``batch + (n',)``.
    cfg : ArgmaxConfig, optional

    Returns
    -------
    u : ndarray
        Maximisers, shape ``batch + (n',)``.
    info : ArgmaxInfo

    Raises
    ------
    ArgmaxFailure
        No start reached ``newton_tol`` at some point.
    BoxViolation
        A maximiser leaves ``[-u_box, u_box]^{n'}``.
    """
    cfg = cfg or ArgmaxConfig()
    nc = spec.n_control
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    inc = np.asarray(incumbent, dtype=float)
    if inc.ndim == 0:
        inc = inc.reshape(1)
    batch = np.broadcast_shapes(x.shape[:-1], inc.shape[:-1], np.shape(t), cs.p.shape[:-1])
    B = int(np.prod(batch, dtype=np.int64))
    off = cfg.offsets(nc)
    S = off.shape[0]

    def flat(a, tail):
        return np.broadcast_to(a, batch + tail).reshape((B,) + tail)

    xf = np.repeat(flat(x, (spec.n,)), S, axis=0)
    tf = np.repeat(flat(np.asarray(t, dtype=float), ()), S, axis=0)
    pf = np.repeat(flat(cs.p, (spec.n,)), S, axis=0)
    Pf = np.repeat(flat(cs.P, (spec.n, spec.n)), S, axis=0)
    csf = CoState(pf, Pf)
    u0 = (flat(inc, (nc,))[:, None, :] + off[None]).reshape(B * S, nc)

    u, res, iters = _newton(spec, tf, xf, csf, u0, cfg)
    Gv = eval_G(spec, xf, u, csf, tf).reshape(B, S)
    u = u.reshape(B, S, nc)
    res = res.reshape(B, S)
    conv = res <= cfg.newton_tol
    if not np.all(conv.any(axis=1)):
        bad = int(np.flatnonzero(~conv.any(axis=1))[0])
        where = np.unravel_index(bad, batch) if batch else ()
        raise ArgmaxFailure(
            f"no start converged at batch index {where}; best residual {res[bad].min():.3e}",
            best_residual=float(res[bad].min()),
            where=where,
        )
    Gm = np.where(conv, Gv, -np.inf)
    best = Gm.max(axis=1, keepdims=True)
    tied = Gm >= best - cfg.tie_tol
    # lexicographic order within each batch row; tied candidates sort last
    keys = tuple(u[..., k].ravel() for k in reversed(range(nc)))
    keys += (tied.ravel(), np.repeat(np.arange(B), S))
    pick = np.lexsort(keys).reshape(B, S)[:, -1] - np.arange(B) * S
    # only distinct tied maximisers count as a tie; duplicates from several starts do not
    hi = np.where(tied[..., None], u, -np.inf).max(axis=1)
    lo = np.where(tied[..., None], u, np.inf).min(axis=1)
    n_ties = int(np.count_nonzero((hi - lo).max(axis=-1) > 1e-6))
    out = u[np.arange(B), pick]
    if np.any(np.abs(out) > cfg.u_box):
        bad = int(np.flatnonzero(np.any(np.abs(out) > cfg.u_box, axis=-1))[0])
        raise BoxViolation(
            f"maximiser {out[bad]} at batch index {np.unravel_index(bad, batch) if batch else ()} "
            f"leaves the box |u| <= {cfg.u_box}"
        )
    info = ArgmaxInfo(
        ties=n_ties,
        max_residual=float(res[np.arange(B), pick].max()),
        iterations=iters,
    )
    if n_ties:
        info.notes.append(f"{n_ties} tie(s) broken lexicographically")
    return out.reshape(batch + (nc,)), info


def argmax_G(spec: ProblemSpec, x, cs: CoState, incumbent, cfg: ArgmaxConfig | None = None, t=0.0):
    """Maximiser of G at a single point; see :func:`argmax_G_batch`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u, _ = argmax_G_batch(spec, t, x, cs, np.atleast_1d(incumbent), cfg)
    return u


def _costate_field(V: ScalarField) -> CoState:
    grid = V.grid
    return CoState.from_value_derivatives(grad_array(grid, V.values), hess_array(grid, V.values))


def local_optimal_field(
    spec: ProblemSpec, u: ControlField, V: ScalarField, cfg: ArgmaxConfig | None = None
) -> ControlField:
    """Nodewise maximiser of G with the co-state of ``V`` and ``u`` as incumbent."""
    grid = u.grid
    cs = _costate_field(V)
    out, _ = argmax_G_batch(spec, grid.times[:, None], grid.points, cs, u.values, cfg)
    return ControlField(grid, out)


def hjb_residual(
    spec: ProblemSpec, V: ScalarField, cfg: ArgmaxConfig | None = None, incumbent=None
) -> float:
    """Sup over interior levels and all nodes of ``|-V_t + max_u G|``.

    ``V_t`` is a central difference in time.  The maximisation starts from
    ``incumbent`` (zero when not given) and follows ``cfg``: with the default
    multistart it certifies optimality, while ``multistart=False`` gives the
    residual of the branch the incumbent sits on.
    """
    cfg = cfg or ArgmaxConfig()
    grid = V.grid
    if grid.n_t < 3:
        raise InvalidArgument("need an interior time level")
    lv = slice(1, grid.n_t - 1)
    vals = V.values
    cs = CoState.from_value_derivatives(
        grad_array(grid, vals[lv]), hess_array(grid, vals[lv])
    )
    if incumbent is None:
        inc = np.zeros((1, 1, spec.n_control))
    else:
        inc = incumbent.values[lv] if isinstance(incumbent, ControlField) else np.asarray(incumbent)
    t = grid.times[lv][:, None]
    u_loc, _ = argmax_G_batch(spec, t, grid.points, cs, inc, cfg)
    G = eval_G(spec, grid.points, u_loc, cs, t)
    v_t = (vals[2:] - vals[:-2]) / (2 * grid.dt)
    return float(np.abs(-v_t + G).max())


def quartic_closed_forms(V_x):
    """Both stationary maximisers of the quartic double-well Hamiltonian.

    ``u_star = (-V_x - s sqrt(V_x^2 + 4)) / 2`` with ``s = sign(V_x)`` and
    ``sign(0) = +1``; ``u_tilde`` is the other root, computed as ``-1/u_star``
    (the two roots multiply to ``-1``) to avoid cancellation.

    Returns
    -------
    dict
        ``{"u_star": ..., "u_tilde": ...}``, scalars or arrays like ``V_x``.
    """
    vx = np.asarray(V_x, dtype=float)
    s = np.where(vx >= 0, 1.0, -1.0)
    u_star = 0.5 * (-vx - s * np.sqrt(vx * vx + 4.0))
    u_tilde = -1.0 / u_star
    if u_star.ndim == 0:
        return {"u_star": float(u_star), "u_tilde": float(u_tilde)}
    return {"u_star": u_star, "u_tilde": u_tilde}
