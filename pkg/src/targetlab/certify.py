"""Certification of candidate envelope functions on a scenario tree.

A super-solution candidate must dominate the payoff at the horizon and be
maintainable: from any node and any y at or above the candidate, some grid
control keeps Y at or above it on every branch.  A sub-solution candidate
must sit below the payoff at the horizon and be inescapable: from any y
strictly below it, every grid control leaves Y strictly below it on at
least one branch (every branch has positive probability, so one branch is
enough).  Quantification over all stopping times reduces on a finite tree
to these node-wise checks by induction; that reduction is the module's
documented rendering of the pathwise definitions.

When the Y-transition is affine in y the y-quantifiers are resolved in
closed form (exact); otherwise a recorded ladder of y-levels is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .model import ControlGrid, ProblemSpec
from .tree import ScenarioTree, _affine_probe, y_transition

__all__ = [
    "CandidateFunction",
    "Certificate",
    "SandwichReport",
    "certify_supersolution",
    "certify_subsolution",
    "exponential_supersolution",
    "exponential_subsolution",
    "sandwich_check",
    "ConfigurationError",
]


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CandidateFunction:
    """Candidate envelope w(t, x) with declared growth |w| <= C (1 + |x|^n)."""

    fn: callable
    growth_C: float
    growth_n: int
    terminal_side: str  # "above-g" or "below-g"
    name: str = "candidate"

    def __post_init__(self):
        if self.terminal_side not in ("above-g", "below-g"):
            raise ValueError("terminal_side must be 'above-g' or 'below-g'")

    def value(self, t, x):
        return float(self.fn(t, np.asarray(x, dtype=float).reshape(-1)))

    def shifted(self, offset):
        return CandidateFunction(
            fn=lambda t, x, f=self.fn, o=offset: f(t, x) + o,
            growth_C=self.growth_C + abs(offset),
            growth_n=self.growth_n,
            terminal_side=self.terminal_side,
            name=f"{self.name}{offset:+g}",
        )


@dataclass(frozen=True, eq=False)
class Certificate:
    verdict: str  # "certified" or "refuted"
    candidate: str
    checked_nodes: int
    ladder_used: bool
    witness: dict | None = None
    maintaining_controls: dict | None = None  # node -> control index (supers)

    @property
    def certified(self):
        return self.verdict == "certified"


def _growth_violation(w: CandidateFunction, tree: ScenarioTree):
    for node in range(tree.n_nodes):
        x = tree.states[node]
        t = tree.node_time(node)
        bound = w.growth_C * (1.0 + float(np.linalg.norm(x)) ** w.growth_n)
        val = w.value(t, x)
        if abs(val) > bound:
            return {
                "kind": "growth",
                "node": node,
                "value": val,
                "bound": bound,
            }
    return None


def _terminal_violation(w, tree, side):
    g_leaf = tree.spec.payoff(tree.states[tree.leaves])
    for k, leaf in enumerate(tree.leaves):
        wv = w.value(tree.spec.T, tree.states[leaf])
        if side == "above-g" and wv < g_leaf[k]:
            return {"kind": "terminal", "node": int(leaf), "w": wv, "g": float(g_leaf[k])}
        if side == "below-g" and wv > g_leaf[k]:
            return {"kind": "terminal", "node": int(leaf), "w": wv, "g": float(g_leaf[k])}
    return None


def certify_supersolution(
    w: CandidateFunction,
    tree: ScenarioTree,
    grid: ControlGrid = None,
    ladder_levels=5,
    ladder_span=1.0,
):
    """Certified iff w dominates g at the leaves and, node by node, some
    grid control keeps Y >= w across every branch from every starting
    y >= w(node).  Refutations carry a concrete witness.
    """
    spec = tree.spec
    controls = tuple(grid) if grid is not None else tree.controls
    _check_controls_on_tree(tree, controls)
    if w.terminal_side != "above-g":
        raise ValueError("super-solution candidates must declare terminal side above-g")

    for check in (_terminal_violation(w, tree, "above-g"), _growth_violation(w, tree)):
        if check is not None:
            return Certificate("refuted", w.name, tree.n_nodes, False, witness=check)

    maintaining = {}
    ladder_used = False
    for row in range(len(tree.interior)):
        node = int(tree.interior[row])
        t_k = tree.node_time(node)
        x_k = tree.states[node]
        y_star = w.value(t_k, x_k)
        w_succ = {}
        failures = {}
        found = None
        for ci, u in enumerate(controls):
            succ = tree.succ[row, ci]
            targets = [
                w.value(t_k + tree.dt, tree.states[int(s)]) for s in succ
            ]
            probes = [
                _affine_probe(spec, t_k, x_k, u, br, tree.dt) for br in tree.branches
            ]
            if all(pr is not None and pr[0] >= 0.0 for pr in probes):
                ok = all(
                    a * y_star + c >= tv
                    for (a, c), tv in zip(probes, targets)
                )
                ys_checked = (y_star,)
            else:
                ladder_used = True
                ys_checked = tuple(
                    y_star + ladder_span * k / max(ladder_levels - 1, 1)
                    for k in range(ladder_levels)
                )
                ok = all(
                    all(
                        float(y_transition(spec, t_k, x_k, u, br, tree.dt, yv)) >= tv
                        for br, tv in zip(tree.branches, targets)
                    )
                    for yv in ys_checked
                )
            if ok:
                found = ci
                break
            failures[ci] = {
                "targets": targets,
                "y": ys_checked[0],
            }
        if found is None:
            return Certificate(
                "refuted",
                w.name,
                tree.n_nodes,
                ladder_used,
                witness={
                    "kind": "maintenance",
                    "node": node,
                    "y": y_star,
                    "per_control": failures,
                },
            )
        maintaining[node] = found

    return Certificate(
        "certified",
        w.name,
        tree.n_nodes,
        ladder_used,
        maintaining_controls=maintaining,
    )


def certify_subsolution(
    w: CandidateFunction,
    tree: ScenarioTree,
    grid: ControlGrid = None,
    ladder_levels=5,
    ladder_span=1.0,
):
    """Certified iff w sits below g at the leaves and, for every node,
    every grid control, and every y < w(node), at least one branch lands
    strictly below w.
    """
    spec = tree.spec
    controls = tuple(grid) if grid is not None else tree.controls
    _check_controls_on_tree(tree, controls)
    if w.terminal_side != "below-g":
        raise ValueError("sub-solution candidates must declare terminal side below-g")

    for check in (_terminal_violation(w, tree, "below-g"), _growth_violation(w, tree)):
        if check is not None:
            return Certificate("refuted", w.name, tree.n_nodes, False, witness=check)

    ladder_used = False
    for row in range(len(tree.interior)):
        node = int(tree.interior[row])
        t_k = tree.node_time(node)
        x_k = tree.states[node]
        y_star = w.value(t_k, x_k)
        for ci, u in enumerate(controls):
            succ = tree.succ[row, ci]
            targets = [w.value(t_k + tree.dt, tree.states[int(s)]) for s in succ]
            probes = [
                _affine_probe(spec, t_k, x_k, u, br, tree.dt) for br in tree.branches
            ]
            if all(pr is not None for pr in probes):
                escape_ok, y_wit = _affine_escape(probes, targets, y_star)
            else:
                ladder_used = True
                escape_ok, y_wit = True, None
                for k in range(1, ladder_levels + 1):
                    yv = y_star - ladder_span * k / ladder_levels
                    branch_escape = any(
                        float(y_transition(spec, t_k, x_k, u, br, tree.dt, yv)) < tv
                        for br, tv in zip(tree.branches, targets)
                    )
                    if not branch_escape:
                        escape_ok, y_wit = False, yv
                        break
            if not escape_ok:
                return Certificate(
                    "refuted",
                    w.name,
                    tree.n_nodes,
                    ladder_used,
                    witness={
                        "kind": "escape",
                        "node": node,
                        "control": ci,
                        "y": y_wit,
                        "targets": targets,
                    },
                )
    return Certificate("certified", w.name, tree.n_nodes, ladder_used)


def _affine_escape(probes, targets, y_star):
    """Exact escape check for affine Y-maps: does every y < y_star leave
    some branch strictly below its target?  Returns (ok, witness y)."""
    # the set of y where *every* branch stays at/above its target
    lo_f, hi_f = -np.inf, np.inf
    for (a, c), tv in zip(probes, targets):
        if a > 1e-12:
            lo_f = max(lo_f, (tv - c) / a)
        elif a < -1e-12:
            hi_f = min(hi_f, (tv - c) / a)
        elif c < tv:
            return True, None  # this branch escapes at every y
    if lo_f > hi_f or lo_f >= y_star:
        return True, None
    if np.isfinite(lo_f):
        y_wit = lo_f
    else:
        y_wit = min(hi_f, y_star - 1.0)
    if y_wit >= y_star:  # numerical edge; nudge strictly below
        y_wit = y_star - 1e-9
    return False, float(y_wit)


def _check_controls_on_tree(tree, controls):
    if len(controls) != len(tree.controls):
        raise ValueError("control grid must match the grid the tree was built with")
    for a, b in zip(controls, tree.controls):
        if not a.close_to(b):
            raise ValueError("control grid must match the grid the tree was built with")


# ---------------------------------------------------------------------------
# explicit exponential-in-time candidates


def _spot_check_neutral(spec: ProblemSpec, u0, n_points=8):
    rng = np.random.default_rng(20240301)
    for _ in range(n_points):
        t = rng.uniform(0.0, spec.T)
        x = rng.uniform(spec.x_box[:, 0], spec.x_box[:, 1])
        y = float(rng.uniform(spec.y_box[0], spec.y_box[1]))
        sy = np.asarray(spec.coefficients.sigma_Y(t, x, y, u0), dtype=float)
        if np.any(sy != 0.0):
            raise ConfigurationError("neutral control must have sigma_Y = 0")
        for e in spec.marks.points:
            u2e = u0.u2[float(e)] if float(e) in u0.u2 else np.zeros(spec.n)
            bv = np.asarray(
                spec.coefficients.b(t, x, y, u0.u1, u2e, e), dtype=float
            )
            if np.any(bv != 0.0):
                raise ConfigurationError("neutral control must have b = 0")


def exponential_supersolution(spec: ProblemSpec, grid: ControlGrid = None):
    """w(t, x) = gamma - e^{kt} with k = 2L and gamma = |g|_inf + e^{kT}.

    Needs a bounded payoff (g_bound) and a declared neutral control (no
    Y-volatility, no Y-jumps); if a grid is supplied the neutral control
    must be on it, since it is the natural maintaining control.
    """
    if spec.g_bound is None:
        raise ConfigurationError("needs g_bound (bounded payoff)")
    if spec.neutral_control is None:
        raise ConfigurationError("needs a declared neutral control")
    _spot_check_neutral(spec, spec.neutral_control)
    if grid is not None:
        try:
            grid.index_of(spec.neutral_control)
        except Exception:
            raise ConfigurationError("neutral control is not on the control grid") from None
    k = 2.0 * spec.coefficients.lipschitz_L
    gamma = spec.g_bound + np.exp(k * spec.T)
    return CandidateFunction(
        fn=lambda t, x, k=k, gamma=gamma: gamma - np.exp(k * t),
        growth_C=gamma + np.exp(k * spec.T),
        growth_n=0,
        terminal_side="above-g",
        name="exp-super",
    )


def exponential_subsolution(spec: ProblemSpec):
    """w(t, x) = e^{kt} - gamma with k = 2C and gamma = |g|_inf + e^{kT} + 1."""
    if spec.g_bound is None:
        raise ConfigurationError("needs g_bound (bounded payoff)")
    if spec.coefficients.growth_C is None:
        raise ConfigurationError("needs growth_C (drift-plus-jump growth constant)")
    k = 2.0 * spec.coefficients.growth_C
    gamma = spec.g_bound + np.exp(k * spec.T) + 1.0
    return CandidateFunction(
        fn=lambda t, x, k=k, gamma=gamma: np.exp(k * t) - gamma,
        growth_C=gamma + np.exp(k * spec.T),
        growth_n=0,
        terminal_side="below-g",
        name="exp-sub",
    )


# ---------------------------------------------------------------------------
# envelope sandwich


@dataclass(frozen=True, eq=False)
class SandwichReport:
    violations: tuple
    checked_nodes: int

    @property
    def ok(self):
        return len(self.violations) == 0


def sandwich_check(subs, supers, tree: ScenarioTree, profile_values):
    """Assert  max(subs) <= target profile <= min(supers)  at every node."""
    profile_values = np.asarray(profile_values, dtype=float).reshape(-1)
    if profile_values.shape[0] != tree.n_nodes:
        raise ValueError("profile must carry one value per node")
    violations = []
    for node in range(tree.n_nodes):
        t = tree.node_time(node)
        x = tree.states[node]
        v = profile_values[node]
        lower = max((w.value(t, x) for w in subs), default=-np.inf)
        upper = min((w.value(t, x) for w in supers), default=np.inf)
        if lower > v:
            violations.append(
                {"node": node, "kind": "below", "bound": lower, "value": float(v)}
            )
        if v > upper:
            violations.append(
                {"node": node, "kind": "above", "bound": upper, "value": float(v)}
            )
    return SandwichReport(tuple(violations), tree.n_nodes)
