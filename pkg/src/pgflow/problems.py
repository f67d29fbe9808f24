"""Built-in control problems with known structure."""

from __future__ import annotations

import numpy as np

from .errors import NotFound
from .problem import ProblemSpec, TorusGeometry

TWO_PI = 2 * np.pi
SQRT2 = np.sqrt(2.0)

QUARTIC_AMPLITUDE = 0.1
QUARTIC_T = 0.2
MANUFACTURED_AMPLITUDE = 0.2
MANUFACTURED_T = 0.5


def _x1(x):
    return np.asarray(x)[..., 0]


def _u1(u):
    return np.asarray(u)[..., 0]


def _like(t, x, u, value, tail=()):
    batch = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(u)[:-1])
    return np.broadcast_to(np.asarray(value, dtype=float), batch + tail)


def quartic_trap(amplitude: float = QUARTIC_AMPLITUDE) -> ProblemSpec:
    """Double-well Hamiltonian in one dimension.

    ``b = u^3/3``, ``sigma = sqrt(2)`` (so ``D = 1``), ``r = u^4/4 - u^2/2``,
    ``h = a cos(2 pi x)``.  For a value slope ``V_x`` the Hamiltonian has two
    local maxima in ``u``; gradient flow started in the wrong one stays there.
    """

    def drift(t, x, u):
        return _like(t, x, u, np.asarray(u) ** 3 / 3.0, (1,))

    def diffusion(t, x, u):
        return _like(t, x, u, SQRT2, (1, 1))

    def running_cost(t, x, u):
        v = _u1(u)
        return _like(t, x, u, 0.25 * v**4 - 0.5 * v**2)

    def terminal_cost(x):
        return amplitude * np.cos(TWO_PI * _x1(x))

    def drift_du(t, x, u):
        return _like(t, x, u, (np.asarray(u) ** 2)[..., None], (1, 1))

    def diffusion_du(t, x, u):
        return _like(t, x, u, 0.0, (1, 1, 1))

    def running_cost_du(t, x, u):
        v = np.asarray(u)
        return _like(t, x, u, v**3 - v, (1,))

    def terminal_slope(x):
        return -TWO_PI * amplitude * np.sin(TWO_PI * _x1(x))

    return ProblemSpec(
        TorusGeometry(1, 1, 1),
        drift,
        diffusion,
        running_cost,
        terminal_cost,
        drift_du,
        diffusion_du,
        running_cost_du,
        sigma0=1.0,
        mu_G=0.0,
        bound_K=5.0,
        name="quartic_trap",
        oracles={"terminal_slope": terminal_slope},
    )


def manufactured_concave(T: float = MANUFACTURED_T, amplitude: float = MANUFACTURED_AMPLITUDE):
    """Strongly concave problem whose optimal value is known in closed form.

    ``V*(t, x) = a exp(-t) cos(2 pi x)``, ``b = u``, ``sigma = sqrt(2)``,
    ``r = |u|^2/2 + r0(t, x)``.  Maximising G gives ``u* = -V*_x`` and the
    HJB equation forces ``r0 = -V*_t - V*_xx + (V*_x)^2 / 2``.  The terminal
    cost is ``V*(T, .)`` so the problem is tied to the horizon ``T``.
    """

    def v_star(t, x):
        return amplitude * np.exp(-np.asarray(t)) * np.cos(TWO_PI * _x1(x))

    def v_star_x(t, x):
        return -TWO_PI * amplitude * np.exp(-np.asarray(t)) * np.sin(TWO_PI * _x1(x))

    def v_star_xx(t, x):
        return -(TWO_PI**2) * v_star(t, x)

    def v_star_t(t, x):
        return -v_star(t, x)

    def r0(t, x):
        return -v_star_t(t, x) - v_star_xx(t, x) + 0.5 * v_star_x(t, x) ** 2

    def u_star(t, x):
        return -v_star_x(t, x)[..., None]

    def drift(t, x, u):
        return _like(t, x, u, u, (1,))

    def diffusion(t, x, u):
        return _like(t, x, u, SQRT2, (1, 1))

    def running_cost(t, x, u):
        v = _u1(u)
        return _like(t, x, u, 0.5 * v * v + r0(t, x))

    def terminal_cost(x):
        return v_star(T, x)

    def drift_du(t, x, u):
        return _like(t, x, u, 1.0, (1, 1))

    def diffusion_du(t, x, u):
        return _like(t, x, u, 0.0, (1, 1, 1))

    def running_cost_du(t, x, u):
        return _like(t, x, u, u, (1,))

    return ProblemSpec(
        TorusGeometry(1, 1, 1),
        drift,
        diffusion,
        running_cost,
        terminal_cost,
        drift_du,
        diffusion_du,
        running_cost_du,
        sigma0=1.0,
        mu_G=1.0,
        bound_K=5.0,
        name="manufactured_concave",
        oracles={
            "T": lambda: T,
            "V_star": v_star,
            "V_star_x": v_star_x,
            "V_star_xx": v_star_xx,
            "V_star_t": v_star_t,
            "u_star": u_star,
            "r0": r0,
        },
    )


def controlled_diffusion_demo() -> ProblemSpec:
    """Control enters the noise: ``D(u) = 0.5 + 0.25 tanh(u)^2``.

    ``b = u``, ``r = u^2 + 0.1 (1 - cos 2 pi x)``, ``h = 0``.  No closed form.
    """

    def _sig(u):
        return np.sqrt(1.0 + 0.5 * np.tanh(u) ** 2)

    def drift(t, x, u):
        return _like(t, x, u, u, (1,))

    def diffusion(t, x, u):
        return _like(t, x, u, _sig(np.asarray(u))[..., None], (1, 1))

    def running_cost(t, x, u):
        return _like(t, x, u, _u1(u) ** 2 + 0.1 * (1.0 - np.cos(TWO_PI * _x1(x))))

    def terminal_cost(x):
        return np.zeros(np.shape(x)[:-1])

    def drift_du(t, x, u):
        return _like(t, x, u, 1.0, (1, 1))

    def diffusion_du(t, x, u):
        v = np.asarray(u)
        th = np.tanh(v)
        d = 0.5 * th * (1.0 - th * th) / _sig(v)
        return _like(t, x, u, d[..., None, None], (1, 1, 1))

    def running_cost_du(t, x, u):
        return _like(t, x, u, 2.0 * np.asarray(u), (1,))

    return ProblemSpec(
        TorusGeometry(1, 1, 1),
        drift,
        diffusion,
        running_cost,
        terminal_cost,
        drift_du,
        diffusion_du,
        running_cost_du,
        sigma0=0.5,
        mu_G=0.0,
        bound_K=5.0,
        name="controlled_diffusion_demo",
    )


def constant_problem(
    n: int = 1,
    drift: float = 0.0,
    sigma: float = SQRT2,
    running: float = 0.0,
    terminal: float = 0.0,
    n_control: int = 1,
) -> ProblemSpec:
    """Control-independent constant coefficients; ``sigma`` is a scalar times the identity."""
    geom = TorusGeometry(n, n_control, n)

    def b(t, x, u):
        return _like(t, x, u, drift, (n,))

    def s(t, x, u):
        return _like(t, x, u, sigma * np.eye(n), (n, n))

    def r(t, x, u):
        return _like(t, x, u, running)

    def h(x):
        return np.full(np.shape(x)[:-1], float(terminal))

    def db(t, x, u):
        return _like(t, x, u, 0.0, (n, n_control))

    def ds(t, x, u):
        return _like(t, x, u, 0.0, (n, n, n_control))

    def dr(t, x, u):
        return _like(t, x, u, 0.0, (n_control,))

    return ProblemSpec(
        geom, b, s, r, h, db, ds, dr,
        sigma0=0.5 * sigma * sigma, mu_G=0.0, name="constant",
    )


BUILTINS = {
    "quartic_trap": quartic_trap,
    "manufactured_concave": manufactured_concave,
    "controlled_diffusion_demo": controlled_diffusion_demo,
}

DEFAULT_HORIZON = {
    "quartic_trap": QUARTIC_T,
    "manufactured_concave": MANUFACTURED_T,
    "controlled_diffusion_demo": 0.5,
}


def build_problem(name: str, **params) -> ProblemSpec:
    """Look up a built-in problem by name; keyword arguments go to its factory."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise NotFound(f"unknown problem {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)
