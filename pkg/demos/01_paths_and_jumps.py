# Simulate the controlled pair (X, Y) for a jump diffusion and look at the
# paths.  X carries drift, Brownian noise and unit jumps at rate 0.5; Y is a
# hedging account whose volatility is the control itself.

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from targetlab import Coefficients, ControlValue, MarkSpace, ProblemSpec
from targetlab.model import affine_coefficient, constant_coefficient
from targetlab.sde import ConstantPolicy, simulate

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

marks = MarkSpace(points=np.array([1.0]), weights=np.array([[0.5]]))
coeffs = Coefficients(
    mu_X=constant_coefficient([0.05]),
    sigma_X=constant_coefficient([[0.4]]),
    beta=constant_coefficient([[1.0]]),          # +1 displacement per jump
    mu_Y=constant_coefficient(0.0),
    sigma_Y=affine_coefficient(np.zeros(1), u1_mat=np.eye(1)),  # sigma_Y = u
    b=constant_coefficient([0.1]),               # Y gains 0.1 per jump
)
spec = ProblemSpec(
    coefficients=coeffs, marks=marks, T=2.0,
    g=lambda x: np.tanh(x[..., 0]), d=1, q=1, n=1,
)

policy = ConstantPolicy(ControlValue(np.array([0.3]), {1.0: np.zeros(1)}))
bundle = simulate(spec, policy, t=0.0, x=[0.0], y=0.0, n_paths=200, n_steps=400, seed=42)

n_jumps = sum(len(log) for log in bundle.jump_log)
print(f"simulated {bundle.n_paths} paths, {bundle.n_steps} steps")
print(f"jumps realized: {n_jumps} (expected about {0.5 * 2.0 * bundle.n_paths:.0f})")
print(f"X(T): mean {bundle.X[:, -1, 0].mean():+.4f}, std {bundle.X[:, -1, 0].std():.4f}")
print(f"Y(T): mean {bundle.Y[:, -1].mean():+.4f}")

fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
for p in range(12):
    ax1.step(bundle.times, bundle.X[p, :, 0], where="post", lw=0.8)
    ax2.step(bundle.times, bundle.Y[p], where="post", lw=0.8)
ax1.set_ylabel("X")
ax2.set_ylabel("Y")
ax2.set_xlabel("t")
fig.tight_layout()
fig.savefig(os.path.join(out, "paths.png"), dpi=120)
print(f"wrote {out}/paths.png")

bundle_small = simulate(spec, policy, 0.0, [0.0], 0.0, n_paths=5, n_steps=50, seed=42)
bundle_small.to_csv(os.path.join(out, "paths_sample.csv"))
print(f"wrote {out}/paths_sample.csv")
