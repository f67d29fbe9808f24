"""Independent reference computations for the test suite.

Nothing here imports the package.  Each oracle is written from the defining
formula by a different route than the library (symbolic algebra, image sums,
polynomial roots, explicit loops).  ``FROZEN`` holds values produced by these
oracles once and pinned; ``test_oracles.py`` re-derives them so a drifting
oracle cannot silently move the goalposts.

Run ``python3 tests/oracles.py`` to print the frozen table afresh.
"""

from __future__ import annotations

import math

import numpy as np
import sympy as sy

# --- hand algebra -----------------------------------------------------------------------------


def diffusion_matrix(sigma) -> np.ndarray:
    """``D = 1/2 sigma sigma^T`` by explicit summation."""
    s = np.asarray(sigma, dtype=float)
    n, m = s.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = 0.5 * sum(s[i, k] * s[j, k] for k in range(m))
    return D


def quartic_G(u, p, P):
    """Generalised Hamiltonian of the double well: ``P * 1 + p u^3/3 - (u^4/4 - u^2/2)``."""
    return P + p * u**3 / 3.0 - (u**4 / 4.0 - u**2 / 2.0)


def quartic_H(u, p, q):
    """``<p, b> + tr(q^T sigma) - r`` with ``sigma = sqrt 2``."""
    return p * u**3 / 3.0 + q * math.sqrt(2.0) - (u**4 / 4.0 - u**2 / 2.0)


def quartic_maximisers(V_x: float) -> dict:
    """Stationary maxima of ``u -> quartic_G(u, -V_x, 0)`` from the cubic's roots.

    ``d/du G = -V_x u^2 - u^3 + u``; the nonzero roots solve ``u^2 + V_x u - 1 = 0``.
    The global one has the larger G.  Only ``V_x = 0`` is an exact tie; the
    negative root is then reported as ``u_star``, matching ``sign(0) = +1``.
    """
    roots = np.roots([1.0, V_x, -1.0]).real
    g = [quartic_G(r, -V_x, 0.0) for r in roots]
    if V_x == 0:
        lo, hi = sorted(roots)
        return {"u_star": lo, "u_tilde": hi}
    k = int(np.argmax(g))
    return {"u_star": roots[k], "u_tilde": roots[1 - k]}


# --- manufactured problem, symbolically ---------------------------------------------------------

_t, _x, _u = sy.symbols("t x u", real=True)


def manufactured_symbols(amplitude: float = 0.2):
    """``V*``, the remainder ``r0`` forced by the HJB identity and the optimal control.

    With ``b = u``, ``D = 1``, ``r = u^2/2 + r0``:
    ``G(u) = -V_xx - V_x u - u^2/2 - r0`` and ``-V_t + max_u G = 0``.
    """
    a = sy.Float(amplitude)
    V = a * sy.exp(-_t) * sy.cos(2 * sy.pi * _x)
    Vx, Vxx, Vt = sy.diff(V, _x), sy.diff(V, _x, 2), sy.diff(V, _t)
    r0 = sy.Symbol("r0")
    G = -Vxx - Vx * _u - _u**2 / 2 - r0
    u_opt = sy.solve(sy.diff(G, _u), _u)[0]
    r0_expr = sy.solve(sy.Eq(-Vt + G.subs(_u, u_opt), 0), r0)[0]
    return {
        "V": sy.lambdify((_t, _x), V, "numpy"),
        "r0": sy.lambdify((_t, _x), r0_expr, "numpy"),
        "u_star": sy.lambdify((_t, _x), u_opt, "numpy"),
    }


# --- heat equation on the circle ------------------------------------------------------------------


def wrapped_gaussian(x, y, t, D: float = 1.0, images: int = 8):
    """Periodic heat kernel of ``rho_t = D rho_xx`` by the image sum."""
    x = np.asarray(x, dtype=float)
    k = np.arange(-images, images + 1)
    d = x[..., None] - y + k
    return np.exp(-(d * d) / (4 * D * t)).sum(axis=-1) / np.sqrt(4 * np.pi * D * t)


def cosine_mode(t, x, amp: float = 0.5, D: float = 1.0):
    """``1 + amp exp(-4 pi^2 D t) cos 2 pi x``, the decaying Fourier mode."""
    return 1.0 + amp * np.exp(-4 * np.pi**2 * D * t) * np.cos(2 * np.pi * x)


# --- Philox4x32-10 known-answer vectors (Random123 distribution, kat_vectors) -------------------

PHILOX_KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    (
        (0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF),
        (0xFFFFFFFF, 0xFFFFFFFF),
        (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD),
    ),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


def philox_scalar(counter, key, rounds: int = 10):
    """Philox4x32 with Python integers, one block at a time."""
    M0, M1 = 0xD2511F53, 0xCD9E8D57
    W0, W1 = 0x9E3779B9, 0xBB67AE85
    c0, c1, c2, c3 = counter
    k0, k1 = key
    for r in range(rounds):
        p0, p1 = M0 * c0, M1 * c2
        c0, c1, c2, c3 = (p1 >> 32) ^ c1 ^ k0, p1 & 0xFFFFFFFF, (p0 >> 32) ^ c3 ^ k1, p0 & 0xFFFFFFFF
        k0, k1 = (k0 + W0) & 0xFFFFFFFF, (k1 + W1) & 0xFFFFFFFF
    return (c0, c1, c2, c3)


# --- frozen values --------------------------------------------------------------------------------


def derive_frozen() -> dict:
    sym = manufactured_symbols()
    out = {
        "D_upper_shear": diffusion_matrix([[1.0, 1.0], [0.0, 1.0]]).tolist(),
        "quartic_G_u1": quartic_G(1.0, 0.0, 0.0),
        "quartic_G_um2": quartic_G(-2.0, -1.5, 0.0),
        "quartic_H_q3": quartic_H(0.0, 0.0, 3.0),
        "quartic_H_u1p1": quartic_H(1.0, 1.0, 0.0),
        "quartic_roots_vx1.5": {k: float(v) for k, v in quartic_maximisers(1.5).items()},
        "quartic_roots_vx0": {k: float(v) for k, v in quartic_maximisers(0.0).items()},
        "r0_samples": [float(sym["r0"](t, x)) for t, x in ((0.0, 0.1), (0.25, 0.4), (0.5, 0.9))],
        "heat_kernel_t0.01": [float(wrapped_gaussian(x, 0.5, 0.01)) for x in (0.5, 0.45, 0.3, 0.0)],
        "cosine_mode_t0.01_x0": float(cosine_mode(0.01, 0.0)),
    }
    return out


FROZEN = {
    "D_upper_shear": [[1.0, 0.5], [0.5, 0.5]],
    "quartic_G_u1": 0.25,
    "quartic_G_um2": 2.0,
    "quartic_H_q3": 4.242640687119286,
    "quartic_H_u1p1": 0.5833333333333333,
    "quartic_roots_vx1.5": {"u_star": -2.0, "u_tilde": 0.5},
    "quartic_roots_vx0": {"u_star": -1.0, "u_tilde": 1.0},
    "r0_samples": [6.822334706002043, -4.935336215610042, 4.072853705399732],
    "heat_kernel_t0.01": [2.820947917817136, 2.6500353238916654, 1.037769061007354, 0.01089142115176355],
    "cosine_mode_t0.01_x0": 1.3369127256157167,
}


if __name__ == "__main__":
    import pprint

    pprint.pprint(derive_frozen(), sort_dicts=False)
