"""Space-time grids on the torus, periodic finite differences, interpolation and norms.

Fields are stored with time as the leading axis and the spatial nodes
flattened in row-major order, so a scalar field has shape ``(n_t, n_x**n)``
and a control field ``(n_t, n_x**n, n')``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .errors import InvalidArgument, NumericError
from .problem import TorusGeometry

ROLES = ("generic", "value", "density")
MAX_DIM = 3


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on ``[0, T] x [0, 1)^n`` with ``n_t`` levels and ``n_x`` points per axis."""

    geometry: TorusGeometry
    T: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument(f"horizon must be positive, got {self.T}")
        if self.n_t < 2:
            raise InvalidArgument(f"n_t must be at least 2, got {self.n_t}")
        if self.n_x < 4:
            raise InvalidArgument(f"n_x must be at least 4, got {self.n_x}")
        if self.geometry.n > MAX_DIM:
            raise InvalidArgument(f"grids above {MAX_DIM} dimensions are not supported")

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def dt(self) -> float:
        return self.T / (self.n_t - 1)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_x

    @property
    def n_nodes(self) -> int:
        return self.n_x**self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.n

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, n)``."""
        axes = [np.arange(self.n_x) * self.dx] * self.n
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def multi_index(self) -> np.ndarray:
        idx = np.indices((self.n_x,) * self.n).reshape(self.n, -1).T
        return idx

    @cached_property
    def time_weights(self) -> np.ndarray:
        """Trapezoid weights in time."""
        w = np.full(self.n_t, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def flat_index(self, multi) -> np.ndarray:
        multi = np.mod(np.asarray(multi), self.n_x)
        flat = np.zeros(multi.shape[:-1], dtype=np.int64)
        for d in range(self.n):
            flat = flat * self.n_x + multi[..., d]
        return flat

    def shift(self, offset) -> np.ndarray:
        """Flat index of ``node + offset`` for every node (periodic)."""
        key = tuple(int(o) for o in offset)
        cache = self.__dict__.setdefault("_shift_cache", {})
        if key not in cache:
            cache[key] = self.flat_index(self.multi_index + np.array(key))
        return cache[key]

    def node_of(self, y) -> int:
        """Flat index of the grid node nearest to point ``y``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return int(self.flat_index(np.round(self.geometry.wrap(y) / self.dx).astype(np.int64)))

    def level_of(self, s: float) -> int:
        lvl = s / self.dt
        k = int(round(lvl))
        if abs(lvl - k) > 1e-9 or not 0 <= k < self.n_t:
            raise InvalidArgument(f"time {s} is not a grid level")
        return k


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Scalar function of ``(t, x)`` sampled on a grid; ``role`` tags value or density."""

    grid: SpaceTimeGrid
    values: np.ndarray
    role: str = "generic"
    report: object = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = (self.grid.n_t, self.grid.n_nodes)
        if v.shape != shape:
            raise InvalidArgument(f"scalar field needs shape {shape}, got {v.shape}")
        if self.role not in ROLES:
            raise InvalidArgument(f"unknown role {self.role!r}")
        if not np.all(np.isfinite(v)):
            raise NumericError("scalar field has non-finite entries")
        object.__setattr__(self, "values", v)

    def level(self, k: int) -> np.ndarray:
        return self.values[k]

    def density_defects(self, start_level: int = 0) -> tuple[float, float]:
        """Minimum entry and worst ``|mean - 1|`` from ``start_level`` onwards."""
        v = self.values[start_level:]
        return float(v.min()), float(np.abs(v.mean(axis=1) - 1.0).max())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other), self.role)

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other), "generic")

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c, self.role)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ControlField:
    """Control ``u(t, x)`` in ``R^{n'}`` on grid nodes; also the grid parameter vector."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        nc = self.grid.geometry.n_control
        shape = (self.grid.n_t, self.grid.n_nodes, nc)
        if v.shape == shape[:2] and nc == 1:
            v = v[..., None]
        if v.shape != shape:
            raise InvalidArgument(f"control field needs shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericError("control field has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, value) -> "ControlField":
        nc = grid.geometry.n_control
        v = np.broadcast_to(np.asarray(value, dtype=float), (nc,))
        return cls(grid, np.broadcast_to(v, (grid.n_t, grid.n_nodes, nc)).copy())

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn) -> "ControlField":
        """Sample ``fn(t, x)`` (vectorised, returns ``batch + (n',)`` or ``batch``) on the grid."""
        t = grid.times[:, None]
        x = grid.points[None, :, :]
        v = np.asarray(fn(t, x), dtype=float)
        nc = grid.geometry.n_control
        if v.ndim <= 2:
            if nc != 1:
                raise InvalidArgument("vector controls need a trailing component axis")
            v = np.broadcast_to(v, (grid.n_t, grid.n_nodes))[..., None]
        return cls(grid, np.broadcast_to(v, (grid.n_t, grid.n_nodes, nc)).copy())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def check_box(self, u_box: float) -> None:
        if self.sup_norm() > u_box:
            raise InvalidArgument(f"control sup-norm {self.sup_norm():.3g} exceeds box {u_box}")

    def __add__(self, other):
        return ControlField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ControlField(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return ControlField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return ControlField(self.grid, -self.values)


def _vals(f):
    return f.values if isinstance(f, (ScalarField, ControlField)) else np.asarray(f)


# --- periodic finite differences ----------------------------------------------------------


def _levels(f, t_index):
    v = _vals(f)
    return v if t_index is None else v[t_index]


def grad_array(grid: SpaceTimeGrid, v: np.ndarray) -> np.ndarray:
    """Central-difference gradient of node values ``v[..., n_nodes]`` -> ``(..., n_nodes, n)``."""
    n = grid.n
    out = np.empty(v.shape + (n,))
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        out[..., i] = (v[..., grid.shift(e)] - v[..., grid.shift(-e)]) / (2 * grid.dx)
    return out


def hess_array(grid: SpaceTimeGrid, v: np.ndarray) -> np.ndarray:
    """Three-point diagonal and nested central mixed differences, symmetric by construction."""
    n, dx2 = grid.n, grid.dx**2
    out = np.empty(v.shape + (n, n))
    eye = np.eye(n, dtype=int)
    for i in range(n):
        ei = eye[i]
        out[..., i, i] = (v[..., grid.shift(ei)] - 2 * v + v[..., grid.shift(-ei)]) / dx2
        for j in range(i + 1, n):
            ej = eye[j]
            mixed = (
                v[..., grid.shift(ei + ej)]
                - v[..., grid.shift(ei - ej)]
                - v[..., grid.shift(-ei + ej)]
                + v[..., grid.shift(-ei - ej)]
            ) / (4 * dx2)
            out[..., i, j] = out[..., j, i] = mixed
    return out


def div_array(grid: SpaceTimeGrid, g: np.ndarray) -> np.ndarray:
    """Central divergence of a vector field ``g[..., n_nodes, n]``."""
    out = np.zeros(g.shape[:-1])
    for i in range(grid.n):
        e = np.zeros(grid.n, dtype=int)
        e[i] = 1
        out += (g[..., grid.shift(e), i] - g[..., grid.shift(-e), i]) / (2 * grid.dx)
    return out


def gradient_x(f: ScalarField, t_index: int | None = None) -> np.ndarray:
    """Spatial gradient at one level (``(n_nodes, n)``) or all levels when ``t_index`` is None."""
    return grad_array(f.grid, _levels(f, t_index))


def hessian_x(f: ScalarField, t_index: int | None = None) -> np.ndarray:
    return hess_array(f.grid, _levels(f, t_index))


def divergence(grid: SpaceTimeGrid, g: np.ndarray) -> np.ndarray:
    return div_array(grid, np.asarray(g, dtype=float))


class Stencil:
    """Node-to-neighbour offsets of the second-order operator ``b.grad + D:hess``.

    ``weights`` turns coefficient arrays into one weight array per offset so
    that ``apply`` evaluates the operator and ``apply_transpose`` its exact
    discrete adjoint (the flux-form Fokker-Planck operator).
    """

    def __init__(self, grid: SpaceTimeGrid):
        self.grid = grid
        n = grid.n
        eye = np.eye(n, dtype=int)
        offsets = [np.zeros(n, dtype=int)]
        for i in range(n):
            offsets += [eye[i], -eye[i]]
        for i in range(n):
            for j in range(i + 1, n):
                offsets += [eye[i] + eye[j], -eye[i] - eye[j], eye[i] - eye[j], -eye[i] + eye[j]]
        self.offsets = offsets
        self.nbr = np.stack([grid.shift(o) for o in offsets])
        self.inv = np.stack([grid.shift(-o) for o in offsets])
        self._rows = np.arange(len(offsets))[:, None]

    def weights(self, b: np.ndarray, D: np.ndarray) -> np.ndarray:
        """Weights of shape ``batch + (n_offsets, n_nodes)`` from ``b[batch, nodes, n]`` and ``D[batch, nodes, n, n]``."""
        g, n = self.grid, self.grid.n
        dx, dx2 = g.dx, g.dx**2
        W = np.empty(b.shape[:-2] + (len(self.offsets), b.shape[-2]))
        W[..., 0, :] = -2.0 * np.einsum("...ii->...", D) / dx2
        k = 1
        for i in range(n):
            diff = D[..., i, i] / dx2
            adv = b[..., i] / (2 * dx)
            W[..., k, :] = diff + adv
            W[..., k + 1, :] = diff - adv
            k += 2
        for i in range(n):
            for j in range(i + 1, n):
                c = D[..., i, j] / (2 * dx2)
                W[..., k, :] = c
                W[..., k + 1, :] = c
                W[..., k + 2, :] = -c
                W[..., k + 3, :] = -c
                k += 4
        return W

    def apply(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("on,on->n", w, v[self.nbr])

    def apply_transpose(self, w: np.ndarray, rho: np.ndarray) -> np.ndarray:
        flux = w * rho
        return flux[self._rows, self.inv].sum(axis=0)


# --- interpolation --------------------------------------------------------------------------


def interp_weights(grid: SpaceTimeGrid, t, x):
    """Space-time multilinear interpolation stencil.

    Returns ``(level, node, weight)`` arrays of shape ``batch + (2**(n+1),)``.
    Periodic in space, linear in time; exact at grid nodes.
    """
    n = grid.n
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    batch = np.broadcast_shapes(t.shape, x.shape[:-1])
    t = np.broadcast_to(t, batch)
    x = np.broadcast_to(x, batch + (n,))
    tol = 1e-12 * grid.T
    if np.any(t < -tol) or np.any(t > grid.T + tol):
        raise InvalidArgument(f"interpolation time outside [0, {grid.T}]")
    st = np.clip(t, 0.0, grid.T) / grid.dt
    st = np.where(np.abs(st - np.round(st)) < 1e-9, np.round(st), st)
    l0 = np.minimum(np.floor(st).astype(np.int64), grid.n_t - 2)
    wt = st - l0
    sx = grid.geometry.wrap(x) / grid.dx
    sx = np.where(np.abs(sx - np.round(sx)) < 1e-9, np.round(sx), sx)
    i0 = np.floor(sx).astype(np.int64)
    wx = sx - i0
    levels, nodes, weights = [], [], []
    for corner in product((0, 1), repeat=n):
        c = np.array(corner)
        node = grid.flat_index(i0 + c)
        w_space = np.prod(np.where(c == 1, wx, 1.0 - wx), axis=-1)
        for dl, w_time in ((0, 1.0 - wt), (1, wt)):
            levels.append(l0 + dl)
            nodes.append(node)
            weights.append(w_space * w_time)
    return np.stack(levels, -1), np.stack(nodes, -1), np.stack(weights, -1)


def interpolate_array(grid: SpaceTimeGrid, values: np.ndarray, t, x) -> np.ndarray:
    """Interpolate raw level-major node data ``values[n_t, n_nodes, ...]``."""
    lv, nd, w = interp_weights(grid, t, x)
    gathered = values[lv, nd]
    extra = gathered.ndim - w.ndim
    return np.sum(gathered * w.reshape(w.shape + (1,) * extra), axis=w.ndim - 1)


def interpolate(field, t, x):
    """Evaluate a scalar or control field at arbitrary ``(t, x)``.

    Scalar fields return ``batch``-shaped values, control fields ``batch + (n',)``.
    """
    return interpolate_array(field.grid, field.values, t, x)


# --- norms ------------------------------------------------------------------------------------


def _integrate(grid: SpaceTimeGrid, density: np.ndarray) -> float:
    """Trapezoid in time, rectangle in space of a ``(n_t, n_nodes)`` integrand."""
    return float(grid.time_weights @ density.sum(axis=1) * grid.cell_volume)


def _sq(v: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (v * v).reshape(grid.n_t, grid.n_nodes, -1).sum(axis=-1)


def l2_inner(f, g) -> float:
    grid = f.grid
    prod = (_vals(f) * _vals(g)).reshape(grid.n_t, grid.n_nodes, -1).sum(axis=-1)
    return _integrate(grid, prod)


def l2_norm(f) -> float:
    """L2 norm over ``[0, T] x torus`` (control fields use the Euclidean norm pointwise)."""
    return float(np.sqrt(_integrate(f.grid, _sq(_vals(f), f.grid))))


def h2_norm(V) -> float:
    """Space-time H2 norm: value, gradient and Hessian (Frobenius) all squared and integrated."""
    grid = V.grid
    v = _vals(V)
    integrand = v * v + _sq(grad_array(grid, v), grid) + _sq(hess_array(grid, v), grid)
    return float(np.sqrt(_integrate(grid, integrand)))
