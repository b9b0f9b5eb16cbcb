# Cross-check the finite-difference solver against plain Monte Carlo on an
# uncontrolled pure-jump model: unit jumps at rate 0.5, payoff tanh.  The
# value function solves the nonlocal backward equation; simulation estimates
# E[g(X_T)] directly.

import os
import time

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from targetlab import ControlGrid, ControlValue
from targetlab.pde import SpaceTimeGrid, solve_hjb
from targetlab.problemfile import load_problem
from targetlab.sde import ConstantPolicy, simulate

here = os.path.dirname(__file__)
out = os.path.join(here, "out")
os.makedirs(out, exist_ok=True)

spec = load_problem(os.path.join(here, "..", "problems", "purejump.ini"))
u0 = ControlValue(np.zeros(1), {0.0: np.zeros(1)})
controls = ControlGrid.singleton(u0)

grid = SpaceTimeGrid(0.0, spec.T, 200, axes=((-8.0, 10.0, 400),))
tic = time.time()
res = solve_hjb(spec, spec.payoff(grid.nodes(0)[:, None]), grid, "control", controls)
print(f"PDE sweep: {time.time() - tic:.2f}s, {res.certificate.summary()}")

probes = np.array([-1.0, 0.0, 0.5, 1.5])
print("\n  x0     V(0,x0)     MC mean     2*SE")
for x0 in probes:
    tic = time.time()
    bundle = simulate(spec, ConstantPolicy(u0), 0.0, [x0], 0.0, 40000, 200, seed=int(10 * x0) + 17)
    samples = spec.payoff(bundle.X[:, -1, :])
    mc, se = samples.mean(), samples.std(ddof=1) / np.sqrt(samples.size)
    v = res.field.at(0.0, x0)
    print(f"{x0:+.2f}   {v:+.6f}   {mc:+.6f}   {2 * se:.6f}")

xs = grid.nodes(0)
fig, ax = plt.subplots(figsize=(8, 4))
ax.plot(xs, res.field.values[-1], label="g(x) (terminal)", lw=1)
ax.plot(xs, res.field.values[0], label="V(0, x)", lw=1.5)
ax.set_xlim(-4, 6)
ax.set_xlabel("x")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(out, "pde_vs_mc.png"), dpi=120)
print(f"\nwrote {out}/pde_vs_mc.png")
