"""Control problems on the flat torus and the pointwise Hamiltonian algebra.

Every coefficient is a vectorised callback.  With ``batch`` denoting any
leading shape, the conventions are

========================  ==========================  ======================
callback                  arguments                   returns
========================  ==========================  ======================
``drift``                 ``t, x, u``                 ``batch + (n,)``
``diffusion``             ``t, x, u``                 ``batch + (n, m)``
``running_cost``          ``t, x, u``                 ``batch``
``terminal_cost``         ``x``                       ``batch``
``drift_du``              ``t, x, u``                 ``batch + (n, n')``
``diffusion_du``          ``t, x, u``                 ``batch + (n, m, n')``
``running_cost_du``       ``t, x, u``                 ``batch + (n',)``
========================  ==========================  ======================

where ``x`` has shape ``batch + (n,)``, ``u`` has shape ``batch + (n',)`` and
``t`` broadcasts against ``batch``.  Only derivatives in the control are ever
needed; spatial derivatives of value functions come from finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidArgument, NumericError, UnsupportedProblem

HESS_STEP = 1e-4
DEFAULT_U_BOX = 5.0


@dataclass(frozen=True)
class TorusGeometry:
    """Dimensions of state, control and noise on the unit torus ``[0, 1)^n``."""

    n: int
    n_control: int = 1
    n_noise: int = 1
    period: float = field(default=1.0, init=False)

    def __post_init__(self):
        for name in ("n", "n_control", "n_noise"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {value!r}")

    def wrap(self, x):
        """Map points into ``[0, 1)`` per axis; idempotent."""
        w = np.mod(np.asarray(x, dtype=float), 1.0)
        # mod can round tiny negatives up to exactly 1.0
        return np.where(w >= 1.0, 0.0, w)


def torus_displacement(x, y):
    """Minimal-image displacement ``x - y`` on the unit torus, per axis in [-1/2, 1/2]."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return d - np.round(d)


def torus_distance(x, y):
    """Euclidean minimal-image distance between points of the unit torus."""
    d = torus_displacement(x, y)
    return np.sqrt(np.sum(d * d, axis=-1))


Callback = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients of a controlled diffusion and its cost.

    ``sigma0``, ``mu_G`` and ``bound_K`` are declared by whoever writes the
    problem; the ``check_*`` functions below only spot-verify them.  ``mu_G = 0``
    means the concavity modulus is unknown.  ``oracles`` holds optional
    closed-form references (optimal value, optimal control, ...) that test
    problems provide.
    """

    geometry: TorusGeometry
    drift: Callback
    diffusion: Callback
    running_cost: Callback
    terminal_cost: Callback
    drift_du: Callback | None = None
    diffusion_du: Callback | None = None
    running_cost_du: Callback | None = None
    sigma0: float = 0.0
    mu_G: float = 0.0
    bound_K: float = 1.0
    name: str = "custom"
    oracles: Mapping[str, Callable] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def n_control(self) -> int:
        return self.geometry.n_control

    @property
    def n_noise(self) -> int:
        return self.geometry.n_noise

    def has_u_derivatives(self) -> bool:
        return None not in (self.drift_du, self.diffusion_du, self.running_cost_du)


@dataclass(frozen=True)
class CoState:
    """Negative value gradient ``p`` and negative value Hessian ``P``.

    Both carry an arbitrary batch shape; ``P`` is symmetrised on construction.
    """

    p: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if p.ndim == 0:
            p = p.reshape(1)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        if P.shape[-1] != P.shape[-2] or P.shape[-1] != p.shape[-1]:
            raise InvalidArgument(f"co-state shapes disagree: p {p.shape}, P {P.shape}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "P", 0.5 * (P + np.swapaxes(P, -1, -2)))

    @classmethod
    def from_value_derivatives(cls, grad_v, hess_v) -> "CoState":
        return cls(-np.asarray(grad_v, dtype=float), -np.asarray(hess_v, dtype=float))


def _prep(spec: ProblemSpec, x, u, t):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if u.ndim == 0:
        u = u.reshape(1)
    if x.shape[-1] != spec.n:
        raise InvalidArgument(f"state has {x.shape[-1]} components, problem expects {spec.n}")
    if u.shape[-1] != spec.n_control:
        raise InvalidArgument(
            f"control has {u.shape[-1]} components, problem expects {spec.n_control}"
        )
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], np.shape(t))
    x = np.broadcast_to(x, batch + (spec.n,))
    u = np.broadcast_to(u, batch + (spec.n_control,))
    t = np.broadcast_to(np.asarray(t, dtype=float), batch)
    return x, u, t, batch


def _sigma(spec, t, x, u, batch):
    s = np.asarray(spec.diffusion(t, x, u), dtype=float)
    return np.broadcast_to(s, batch + (spec.n, spec.n_noise))


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")
    return arr


def eval_D(spec: ProblemSpec, x, u, t=0.0) -> np.ndarray:
    """Diffusion matrix ``D = sigma sigma^T / 2`` with shape ``batch + (n, n)``."""
    x, u, t, batch = _prep(spec, x, u, t)
    s = _sigma(spec, t, x, u, batch)
    return 0.5 * np.einsum("...il,...jl->...ij", s, s)


def eval_G(spec: ProblemSpec, x, u, cs: CoState, t=0.0) -> np.ndarray:
    """Generalised Hamiltonian ``Tr(P D) + <p, b> - r``."""
    x, u, t, batch = _prep(spec, x, u, t)
    D = eval_D(spec, x, u, t)
    b = np.broadcast_to(np.asarray(spec.drift(t, x, u), dtype=float), batch + (spec.n,))
    r = np.broadcast_to(np.asarray(spec.running_cost(t, x, u), dtype=float), batch)
    _check_costate(spec, cs)
    G = np.einsum("...ij,...ij->...", cs.P, D) + np.einsum("...i,...i->...", cs.p, b) - r
    return _finite(G, "generalised Hamiltonian")


def eval_H(spec: ProblemSpec, x, u, p, q, t=0.0) -> np.ndarray:
    """First-order Hamiltonian ``Tr(q^T sigma) + <p, b> - r`` with ``q`` of shape ``(n, m)``."""
    x, u, t, batch = _prep(spec, x, u, t)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if q.ndim == 0:
        q = q.reshape(1, 1)
    if p.shape[-1] != spec.n or q.shape[-2:] != (spec.n, spec.n_noise):
        raise InvalidArgument(f"adjoint shapes p {p.shape}, q {q.shape} do not match problem")
    s = _sigma(spec, t, x, u, batch)
    b = spec.drift(t, x, u)
    r = spec.running_cost(t, x, u)
    H = np.einsum("...ij,...ij->...", q, s) + np.einsum("...i,...i->...", p, b) - r
    return _finite(H, "Hamiltonian")


def _check_costate(spec, cs):
    if cs.p.shape[-1] != spec.n:
        raise InvalidArgument(f"co-state dimension {cs.p.shape[-1]} != state dimension {spec.n}")


def grad_u_G(spec: ProblemSpec, x, u, cs: CoState, t=0.0) -> np.ndarray:
    """Gradient of G in the control, shape ``batch + (n',)``.

    The trace term is differentiated through ``sigma`` by the product rule,
    ``d/du_k Tr(P sigma sigma^T)/2 = sum_ijl P_ij (d_k sigma_il) sigma_jl`` for
    symmetric ``P``.
    """
    if not spec.has_u_derivatives():
        raise UnsupportedProblem(f"problem {spec.name!r} has no control-derivative callbacks")
    x, u, t, batch = _prep(spec, x, u, t)
    _check_costate(spec, cs)
    nc = spec.n_control
    s = _sigma(spec, t, x, u, batch)
    ds = np.broadcast_to(
        np.asarray(spec.diffusion_du(t, x, u), dtype=float), batch + (spec.n, spec.n_noise, nc)
    )
    db = np.broadcast_to(np.asarray(spec.drift_du(t, x, u), dtype=float), batch + (spec.n, nc))
    dr = np.broadcast_to(np.asarray(spec.running_cost_du(t, x, u), dtype=float), batch + (nc,))
    g = (
        np.einsum("...ij,...ilk,...jl->...k", cs.P, ds, s)
        + np.einsum("...ik,...i->...k", db, cs.p)
        - dr
    )
    return _finite(g, "control gradient of G")


def hess_u_G(spec: ProblemSpec, x, u, cs: CoState, t=0.0, step: float = HESS_STEP) -> np.ndarray:
    """Symmetrised central-difference Hessian of G in the control."""
    x, u, t, batch = _prep(spec, x, u, t)
    nc = spec.n_control
    H = np.empty(batch + (nc, nc))
    for k in range(nc):
        e = np.zeros(nc)
        e[k] = step
        H[..., :, k] = (grad_u_G(spec, x, u + e, cs, t) - grad_u_G(spec, x, u - e, cs, t)) / (
            2 * step
        )
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return _finite(H, "control Hessian of G")


# --- spot checks of declared structure -------------------------------------------------


def _probe_points(spec: ProblemSpec, n_probe: int, seed: int, u_box: float, t_max: float):
    rng = np.random.default_rng(seed)
    x = rng.random((n_probe, spec.n))
    u = rng.uniform(-u_box, u_box, (n_probe, spec.n_control))
    t = rng.uniform(0.0, t_max, n_probe)
    return t, x, u


def check_ellipticity(spec, n_probe=100, seed=0, u_box=DEFAULT_U_BOX, t_max=1.0) -> float:
    """Smallest eigenvalue of D over random probes; compare against ``spec.sigma0``."""
    t, x, u = _probe_points(spec, n_probe, seed, u_box, t_max)
    D = eval_D(spec, x, u, t)
    if not np.allclose(D, np.swapaxes(D, -1, -2), rtol=0, atol=0):
        raise NumericError("diffusion matrix is not symmetric")
    return float(np.linalg.eigvalsh(D).min())


def _rel(a, b):
    return np.linalg.norm(a - b, axis=-1) / np.maximum(np.linalg.norm(b, axis=-1), 1.0)


def check_derivatives(
    spec, n_probe=100, seed=0, u_box=DEFAULT_U_BOX, t_max=1.0, step=1e-5
) -> dict:
    """Compare analytic control derivatives with central differences.

    Returns the maximum error, relative with a unit floor, for each callback
    and for ``grad_u_G`` against differences of ``eval_G`` at a random
    co-state.
    """
    t, x, u = _probe_points(spec, n_probe, seed, u_box, t_max)
    rng = np.random.default_rng(seed + 1)
    p = rng.normal(size=(n_probe, spec.n))
    A = rng.normal(size=(n_probe, spec.n, spec.n))
    cs = CoState(p, A)
    nc = spec.n_control
    fd = {"drift_du": [], "diffusion_du": [], "running_cost_du": [], "grad_u_G": []}
    for k in range(nc):
        e = np.zeros(nc)
        e[k] = step
        up, um = u + e, u - e
        fd["drift_du"].append((spec.drift(t, x, up) - spec.drift(t, x, um)) / (2 * step))
        fd["diffusion_du"].append(
            (spec.diffusion(t, x, up) - spec.diffusion(t, x, um)) / (2 * step)
        )
        fd["running_cost_du"].append(
            (spec.running_cost(t, x, up) - spec.running_cost(t, x, um)) / (2 * step)
        )
        fd["grad_u_G"].append((eval_G(spec, x, up, cs, t) - eval_G(spec, x, um, cs, t)) / (2 * step))
    out = {}
    batch = (n_probe,)
    analytic = {
        "drift_du": np.broadcast_to(spec.drift_du(t, x, u), batch + (spec.n, nc)),
        "diffusion_du": np.broadcast_to(spec.diffusion_du(t, x, u), batch + (spec.n, spec.n_noise, nc)),
        "running_cost_du": np.broadcast_to(spec.running_cost_du(t, x, u), batch + (nc,)),
        "grad_u_G": grad_u_G(spec, x, u, cs, t),
    }
    for key, cols in fd.items():
        num = np.stack([np.broadcast_to(c, analytic[key].shape[:-1]) for c in cols], axis=-1)
        a = analytic[key].reshape(n_probe, -1)
        out[key] = float(_rel(a, num.reshape(n_probe, -1)).max())
    return out


def check_concavity(spec, n_probe=100, seed=0, u_box=DEFAULT_U_BOX, t_max=1.0, costate_scale=1.0):
    """Largest eigenvalue of ``hess_u_G`` over random probes (should be <= -mu_G)."""
    t, x, u = _probe_points(spec, n_probe, seed, u_box, t_max)
    rng = np.random.default_rng(seed + 2)
    cs = CoState(
        costate_scale * rng.normal(size=(n_probe, spec.n)),
        costate_scale * rng.normal(size=(n_probe, spec.n, spec.n)),
    )
    H = hess_u_G(spec, x, u, cs, t)
    return float(np.linalg.eigvalsh(H).max())
