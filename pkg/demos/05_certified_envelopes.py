# Certify explicit envelope candidates on a scenario tree and check the
# sandwich: every certified lower candidate stays below the exact tree
# target value, every certified upper candidate stays above, node by node.

import numpy as np

from targetlab import Coefficients, ControlGrid, ControlValue, MarkSpace, ProblemSpec
from targetlab.certify import (
    certify_subsolution,
    certify_supersolution,
    exponential_subsolution,
    exponential_supersolution,
    sandwich_check,
)
from targetlab.model import affine_coefficient, constant_coefficient
from targetlab.tree import build_tree, target_value

marks = MarkSpace(points=np.array([1.0]), weights=np.array([[0.5]]))
u0 = ControlValue(np.zeros(1), {1.0: np.zeros(1)})
coeffs = Coefficients(
    mu_X=constant_coefficient([0.0]),
    sigma_X=constant_coefficient([[0.8]]),
    beta=constant_coefficient([[0.6]]),
    mu_Y=affine_coefficient(0.0, y_vec=np.asarray(0.5)),  # nondecreasing in y
    sigma_Y=constant_coefficient([0.0]),
    b=constant_coefficient([0.0]),
    lipschitz_L=1.0,
    growth_C=1.0,
)
spec = ProblemSpec(
    coefficients=coeffs, marks=marks, T=1.0,
    g=lambda x: np.tanh(x[..., 0]), d=1, q=1, n=1,
    g_bound=1.0, neutral_control=u0,
)

grid = ControlGrid.singleton(u0)
tree = build_tree(spec, 0.0, [0.0], 5, grid)
print(f"tree: depth 5, {tree.n_nodes} nodes")

upper = exponential_supersolution(spec, grid)
lower = exponential_subsolution(spec)
cert_up = certify_supersolution(upper, tree)
cert_lo = certify_subsolution(lower, tree)
print(f"upper candidate {upper.name}: {cert_up.verdict} over {cert_up.checked_nodes} nodes")
print(f"lower candidate {lower.name}: {cert_lo.verdict} over {cert_lo.checked_nodes} nodes")

profile = target_value(tree)
report = sandwich_check([lower], [upper], tree, profile.values)
print(f"sandwich: {len(report.violations)} violations")

print("\nlevel   min profile   max profile   lower bound   upper bound")
for k in range(tree.depth + 1):
    ids = [n for n in range(tree.n_nodes) if tree.level[n] == k]
    vals = profile.values[ids]
    t_k = float(tree.times[k])
    lo = max(lower.value(t_k, tree.states[n]) for n in ids)
    hi = min(upper.value(t_k, tree.states[n]) for n in ids)
    print(f"{k}      {vals.min():+.4f}       {vals.max():+.4f}       {lo:+.4f}       {hi:+.4f}")

# corrupting the upper candidate below the payoff must be caught at a leaf
slack = min(
    upper.value(spec.T, x) - gv
    for x, gv in zip(tree.states[tree.leaves], spec.payoff(tree.states[tree.leaves]))
)
bad = upper.shifted(-(slack + 0.25))
cert_bad = certify_supersolution(bad, tree)
print(f"\ncorrupted upper candidate: {cert_bad.verdict}, witness = {cert_bad.witness['kind']}")
