# The control-to-target embedding, end to end.  A drift-controlled jump
# diffusion minimizes E[g(X_T)]; rewriting the expectation as a target
# problem with free martingale integrands (alpha for the Brownian part,
# gamma per mark for the compensated jumps) must give the same value.  On a
# complete-branching tree the match is exact, and the boundary-layer gap of
# the embedded problem degenerates to +inf.

import os

import numpy as np

from targetlab import TestFunction
from targetlab.embed import embedded_target_spec, lifted_grid, spanning_grid
from targetlab.model import ControlGrid, ControlValue
from targetlab.operators import boundary_gap
from targetlab.problemfile import load_problem
from targetlab.tree import build_tree, target_value, tree_expectation

here = os.path.dirname(__file__)
spec = load_problem(os.path.join(here, "..", "problems", "drift_jump_control.ini"))
nu_grid = ControlGrid.lattice(spec.marks, spec.u1_box, 3)
embedded = embedded_target_spec(spec)

print("depth   nodes   DP value        target value    |gap|")
for depth in (2, 3, 4, 5, 6, 7):
    tree = build_tree(embedded, 0.0, [0.0], depth, lifted_grid(spec, nu_grid), mode="complete")
    dp_root, _ = tree_expectation(tree, minimize=True)
    profile = target_value(tree, representation=True)
    gap = abs(dp_root - profile.root_value)
    print(f"{depth}      {tree.n_nodes:6d}   {dp_root:+.9f}   {profile.root_value:+.9f}   {gap:.2e}")

# the attainable (mismatch, margin) set of the embedded problem fills any
# box, so the boundary gap saturates at +inf
phi = TestFunction(1, terms=[(0.5, 0, (2,))])
box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
nu0 = ControlValue(np.zeros(1), {})
grid = spanning_grid(spec, embedded, 0.3, [0.2], 0.0, [0.5], phi, box, 9, [nu0])
res = boundary_gap(0.3, [0.2], 0.0, [0.5], phi, grid, embedded, box, 9)
print(f"\nboundary gap of the embedded problem: {res.delta}")
