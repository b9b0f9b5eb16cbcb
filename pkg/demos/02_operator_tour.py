# A tour of the HJB operator pieces on a small hedging model: the drift
# objective, the volatility mismatch, jump margins, the constrained
# supremum at several tolerance pairs, and its semi-limit surrogates.

import numpy as np

from targetlab import (
    Coefficients,
    ControlGrid,
    MarkSpace,
    OperatorPoint,
    ProblemSpec,
    RelaxationSchedule,
    TestFunction,
)
from targetlab.model import affine_coefficient, constant_coefficient
from targetlab.operators import (
    boundary_gap,
    drift_term,
    hamiltonian,
    hamiltonian_lower,
    hamiltonian_upper,
    jump_margin,
    volatility_mismatch,
)

marks = MarkSpace(points=np.array([1.0]), weights=np.array([[0.5]]))
coeffs = Coefficients(
    mu_X=constant_coefficient([0.1]),
    sigma_X=constant_coefficient([[0.5]]),
    beta=constant_coefficient([[0.8]]),
    mu_Y=affine_coefficient(0.0, u1_mat=np.array([1.0])),   # objective = control
    sigma_Y=affine_coefficient(np.zeros(1), u1_mat=np.eye(1)),
    b=constant_coefficient([0.7]),
)
spec = ProblemSpec(coefficients=coeffs, marks=marks, T=1.0,
                   g=lambda x: np.tanh(x[..., 0]), d=1, q=1, n=1)

grid = ControlGrid.lattice(marks, [[-1.0, 1.0]], 9)
phi = TestFunction(1, terms=[(0.5, 0, (2,))])            # phi = x^2 / 2
theta = OperatorPoint(t=0.5, x=[0.4], y=0.0, p=[0.4], A=[[1.0]])

print("control   drift-term   |mismatch|   margin")
for u in list(grid)[::2]:
    f = drift_term(theta, u, spec)
    nm = np.linalg.norm(volatility_mismatch(0.5, [0.4], 0.0, [0.4], u, spec))
    dm = jump_margin(0.5, [0.4], 0.0, u, 1.0, phi, spec)
    print(f"{u.u1[0]:+.2f}      {f:+.4f}      {nm:.4f}      {dm:+.4f}")

print("\nconstrained supremum; sup over the empty set prints as -inf")
for eps in (0.0, 0.2, 0.5):
    for eta in (0.2, 0.0, -0.2):
        H = hamiltonian(theta, phi, eps, eta, grid, spec)
        print(f"  eps={eps:.1f} eta={eta:+.1f}: H = {H:+.5f}")

sched = RelaxationSchedule(
    eps_sequence=(0.4, 0.1), eta_sequence=(0.3, 0.05),
    theta_radii=(0.3, 0.1), phi_scales=(0.2, 0.05),
    n_samples=6, seed=1,
)
print("\nsemi-limit surrogates over the relaxation schedule")
print("  upper:", hamiltonian_upper(theta, phi, sched, grid, spec))
print("  lower:", hamiltonian_lower(theta, phi, sched, grid, spec))

res = boundary_gap(0.5, [0.4], 0.0, [0.4], phi, grid, spec,
                   box=[[-1.0, 1.0], [-1.0, 1.0]], counts=21)
print("\nboundary gap on a [-1,1]^2 lattice")
print(f"  delta = {res.delta:+.4f}  (dist inside {res.dist_inside:.4f}, "
      f"outside {res.dist_outside:.4f}, {int(res.in_set.sum())} lattice points attainable)")
