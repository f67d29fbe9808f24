"""The grid cost against a Monte Carlo estimate from simulated paths.

The same control is evaluated twice: through the value function on the grid,
and as the average cost of Euler-Maruyama paths.  Two batches with the same
seed share their noise, which makes the difference between two nearby
controls far less noisy than either estimate.

Run with ``python3 demos/monte_carlo.py`` (a few seconds).
"""

import numpy as np

from pgflow import ControlField, SpaceTimeGrid, build_problem, cost_J, estimate_J_mc, simulate, solve_hj
from pgflow.fields import interpolate_array

sp = build_problem("quartic_trap")
grid = SpaceTimeGrid(sp.geometry, 0.2, 33, 64)


def cosine(a0, a1):
    return ControlField.from_function(grid, lambda t, x: a0 + a1 * np.cos(2 * np.pi * x[..., 0]))


u, v = cosine(0.5, 0.3), cosine(0.55, 0.3)
for name, ctl in (("u", u), ("v", v)):
    mc = estimate_J_mc(sp, ctl, simulate(sp, ctl, 20000, 100, seed=7))
    print(f"J[{name}]  grid {cost_J(solve_hj(sp, ctl)):+.5f}   Monte Carlo {mc['estimate']:+.5f} +/- {mc['std_error']:.1e}")

# common random numbers: difference of the per-path costs
bu, bv = simulate(sp, u, 20000, 100, seed=7), simulate(sp, v, 20000, 100, seed=7)
dt = bu.dt


def path_costs(ctl, b):
    t = b.times[:-1]
    x = b.states[:, :-1]
    uu = interpolate_array(grid, ctl.values, t[None, :], x)
    return sp.running_cost(t[None, :], x, uu).sum(axis=1) * dt + sp.terminal_cost(b.states[:, -1])


d = path_costs(v, bv) - path_costs(u, bu)
exact = cost_J(solve_hj(sp, v)) - cost_J(solve_hj(sp, u))
print(f"J[v] - J[u]  grid {exact:+.5f}   shared noise {d.mean():+.5f} +/- {d.std(ddof=1) / np.sqrt(d.size):.1e}")
