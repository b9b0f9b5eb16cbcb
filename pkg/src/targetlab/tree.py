"""Exact finite-branching probability space for a.s. constraints.

Two branching modes share one Euler transition per step:

* "product"  — every Brownian sign pattern crossed with jump/no-jump per
  process (thinning probability min(1, m_i(E) dt)).  Mirrors the path
  engine step for step.
* "complete" — a step carries either a Brownian move or exactly one jump.
  For d = 1 this makes the per-node system (y, alpha, gamma) square, so
  martingale representation is exact for arbitrary payoffs; it is the
  branching the control-to-target embedding checks run on.

Nodes deduplicate on identical states, so the tree is really a layered
DAG; all recursions are exact (no sampling) and bit-reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
import numpy as np

from .model import ControlGrid, ControlValue, ProblemSpec

__all__ = [
    "Branch",
    "ScenarioTree",
    "FeasibilityProfile",
    "TreeBudgetError",
    "RepresentationError",
    "build_tree",
    "target_value",
    "tree_expectation",
    "martingale_representation",
    "MartingaleRepresentation",
    "reconstruct_leaves",
]


class TreeBudgetError(RuntimeError):
    pass


class RepresentationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Branch:
    """One step outcome: Brownian increment plus realized (process, mark) jumps."""

    prob: float
    dW: np.ndarray
    jumps: tuple  # ((process index, mark index), ...)


@dataclass(eq=False)
class ScenarioTree:
    spec: ProblemSpec
    t0: float
    dt: float
    depth: int
    mode: str
    controls: tuple
    branches: tuple  # same outcome set at every step
    times: np.ndarray  # (depth+1,)
    level: np.ndarray  # (n_nodes,)
    states: np.ndarray  # (n_nodes, d)
    succ: np.ndarray  # (n_interior, n_controls, n_branches) node ids
    interior: np.ndarray  # ids with successors, in build order
    leaves: np.ndarray  # ids at the final level

    @property
    def n_nodes(self):
        return self.states.shape[0]

    @property
    def root(self):
        return 0

    def node_time(self, node):
        return float(self.times[self.level[node]])

    def control_index(self, u: ControlValue, tol=0.0):
        for k, v in enumerate(self.controls):
            if v.close_to(u, tol):
                return k
        raise ValueError("control not available on this tree")

    def probabilities(self):
        return np.array([br.prob for br in self.branches])


def _branch_outcomes(spec: ProblemSpec, dt, mode):
    marks = spec.marks
    d = spec.d
    signs = list(itertools.product((1.0, -1.0), repeat=d))
    root_dt = np.sqrt(dt)

    if mode == "product":
        per_process = []
        for i in range(marks.n_processes):
            mass = marks.process_mass(i)
            p_i = min(1.0, mass * dt)
            opts = []
            if 1.0 - p_i > 0.0:
                opts.append((None, 1.0 - p_i))
            for j in range(marks.n_marks):
                pj = p_i * marks.weights[i, j] / mass
                if pj > 0.0:
                    opts.append((j, pj))
            per_process.append(opts)
        out = []
        for sg in signs:
            w_prob = 0.5 ** d
            for combo in itertools.product(*per_process) if per_process else [()]:
                prob = w_prob
                jumps = []
                for i, (j, pj) in enumerate(combo):
                    prob *= pj
                    if j is not None:
                        jumps.append((i, j))
                if prob > 0.0:
                    out.append(
                        Branch(prob, root_dt * np.asarray(sg), tuple(jumps))
                    )
        return tuple(out)

    if mode == "complete":
        total = marks.total_mass() * dt
        if total >= 1.0:
            raise ValueError(
                f"step jump mass {total:.3g} >= 1; shrink dt for complete branching"
            )
        out = [
            Branch((1.0 - total) / len(signs), root_dt * np.asarray(sg), ())
            for sg in signs
        ]
        for i in range(marks.n_processes):
            for j in range(marks.n_marks):
                out.append(
                    Branch(marks.weights[i, j] * dt, np.zeros(d), ((i, j),))
                )
        return tuple(out)

    raise ValueError(f"unknown branching mode {mode!r}")


def build_tree(
    spec: ProblemSpec,
    t,
    x,
    depth,
    grid: ControlGrid,
    mode="product",
    node_budget=400000,
):
    """Forward expansion with state dedup; one Euler step per branch.

    Successor states depend on the control, so the node set is the union
    over all grid controls of reachable states.  Branch probabilities at
    every node sum to one by construction (asserted).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    t = float(t)
    if not (0.0 <= t < spec.T):
        raise ValueError("need 0 <= t < T")
    dt = (spec.T - t) / depth
    branches = _branch_outcomes(spec, dt, mode)
    total_p = sum(br.prob for br in branches)
    assert abs(total_p - 1.0) < 1e-12, "branch probabilities must sum to 1"

    x0 = np.asarray(x, dtype=float).reshape(spec.d)
    times = t + dt * np.arange(depth + 1)
    co = spec.coefficients

    states = [x0]
    level = [0]
    index = {(0, x0.tobytes()): 0}
    succ_rows = []
    interior = []
    frontier = [0]

    for k in range(depth):
        t_k = float(times[k])
        next_frontier = []
        for node in frontier:
            xk = states[node]
            row = np.empty((len(grid), len(branches)), dtype=int)
            for ci, u in enumerate(grid):
                mu = np.asarray(co.mu_X(t_k, xk, u), dtype=float).reshape(spec.d)
                sig = np.atleast_2d(np.asarray(co.sigma_X(t_k, xk, u), dtype=float))
                base = xk + mu * dt
                for bi, br in enumerate(branches):
                    xn = base + sig @ br.dW
                    for (i, j) in br.jumps:
                        e = float(spec.marks.points[j])
                        u2e = u.u2[e] if e in u.u2 else np.zeros(spec.n)
                        beta = np.atleast_2d(
                            np.asarray(co.beta(t_k, xk, u.u1, u2e, e), dtype=float)
                        ).reshape(spec.d, spec.marks.n_processes)
                        xn = xn + beta[:, i]
                    key = (k + 1, xn.tobytes())
                    nid = index.get(key)
                    if nid is None:
                        nid = len(states)
                        if nid >= node_budget:
                            raise TreeBudgetError(
                                f"node budget {node_budget} exceeded at level {k + 1}; "
                                f"worst case is about {len(grid) ** depth * len(branches) ** depth} nodes"
                            )
                        index[key] = nid
                        states.append(xn)
                        level.append(k + 1)
                        next_frontier.append(nid)
                    row[ci, bi] = nid
            succ_rows.append(row)
            interior.append(node)
        frontier = next_frontier

    n_nodes = len(states)
    return ScenarioTree(
        spec=spec,
        t0=t,
        dt=dt,
        depth=depth,
        mode=mode,
        controls=tuple(grid),
        branches=branches,
        times=times,
        level=np.asarray(level, dtype=int),
        states=np.asarray(states, dtype=float).reshape(n_nodes, spec.d),
        succ=np.asarray(succ_rows, dtype=int).reshape(
            len(succ_rows), len(grid), len(branches)
        ),
        interior=np.asarray(interior, dtype=int),
        leaves=np.asarray(
            [i for i in range(n_nodes) if level[i] == depth], dtype=int
        ),
    )


# ---------------------------------------------------------------------------
# Y transitions


def y_transition(spec, t, x, u, branch: Branch, dt, ys):
    """One Euler step of Y from the values `ys` (vectorized over ys)."""
    co = spec.coefficients
    ys = np.asarray(ys, dtype=float)
    mu = np.asarray(co.mu_Y(t, x, ys, u), dtype=float)
    sg = np.asarray(co.sigma_Y(t, x, ys, u), dtype=float)
    if sg.ndim == 1:
        sdw = float(sg @ branch.dW)
    else:
        sdw = sg @ branch.dW
    out = ys + mu * dt + sdw
    for (i, j) in branch.jumps:
        e = float(spec.marks.points[j])
        u2e = u.u2[e] if e in u.u2 else np.zeros(spec.n)
        bv = np.asarray(co.b(t, x, ys, u.u1, u2e, e), dtype=float)
        if bv.ndim == 1:
            out = out + bv[i]
        else:
            out = out + bv[..., i]
    return out


def _affine_probe(spec, t, x, u, branch, dt):
    """Return (a, c) with Y' = a y + c, or None when not affine in y."""
    vals = y_transition(spec, t, x, u, branch, dt, np.array([0.0, 1.0, 2.0]))
    a = vals[1] - vals[0]
    scale = max(1.0, float(np.max(np.abs(vals))))
    if abs(vals[2] - (vals[0] + 2.0 * a)) > 1e-10 * scale:
        return None
    return float(a), float(vals[0])


# ---------------------------------------------------------------------------
# target-value recursion


@dataclass(frozen=True, eq=False)
class FeasibilityProfile:
    """Per node, the least starting y from which a one-step control keeps
    every branch on track; +inf where no grid control is feasible."""

    values: np.ndarray
    root_value: float
    saturated_low: bool


def _min_feasible_y(spec, t, x, u, branch_list, dt, reqs, y_max, tol):
    """Smallest y whose Y-successor meets every branch requirement."""
    probes = [_affine_probe(spec, t, x, u, br, dt) for br in branch_list]
    if all(p is not None for p in probes):
        lo, hi = -y_max, np.inf
        for (a, c), req in zip(probes, reqs):
            if not np.isfinite(req):
                return np.inf, False
            if a > 1e-12:
                lo = max(lo, (req - c) / a)
            elif a < -1e-12:
                hi = min(hi, (req - c) / a)
            elif c < req:
                return np.inf, False
        if lo > hi:
            return np.inf, False
        return lo, lo <= -y_max

    # bisection fallback; assumes feasibility is monotone in y
    def feasible(yv):
        for br, req in zip(branch_list, reqs):
            if not np.isfinite(req):
                return False
            if float(y_transition(spec, t, x, u, br, dt, yv)) < req:
                return False
        return True

    if not feasible(y_max):
        return np.inf, False
    if feasible(-y_max):
        return -y_max, True
    lo, hi = -y_max, y_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi, False


def target_value(
    tree: ScenarioTree,
    g=None,
    representation=False,
    y_max=1e6,
    tol=1e-10,
):
    """Backward feasibility recursion for the a.s. terminal constraint.

    At a leaf the requirement is g(x).  At an interior node it is the
    minimum over controls of the smallest y whose Y-successor meets the
    requirement on every branch (closed form when Y is affine in y, else
    bisection).  With representation=True the martingale-integrand
    controls are synthesized per node by solving the branch system
    exactly, control by control for the X-part grid; the tree must use
    complete branching for the system to be square.
    """
    spec = tree.spec
    g = spec.payoff if g is None else g
    values = np.full(tree.n_nodes, np.inf)
    leaf_x = tree.states[tree.leaves]
    values[tree.leaves] = np.asarray(g(leaf_x), dtype=float)
    saturated = False

    if representation:
        mat = _branch_matrix(tree)

    for row in range(len(tree.interior) - 1, -1, -1):
        node = int(tree.interior[row])
        t_k = tree.node_time(node)
        x_k = tree.states[node]
        best = np.inf
        for ci in range(len(tree.controls)):
            reqs = values[tree.succ[row, ci]]
            if representation:
                if not np.all(np.isfinite(reqs)):
                    continue
                sol = _solve_branch_system(mat, reqs, node)
                y_u = float(sol[0])
            else:
                u = tree.controls[ci]
                y_u, sat = _min_feasible_y(
                    spec, t_k, x_k, u,
                    tree.branches, tree.dt, reqs, y_max, tol,
                )
                saturated = saturated or sat
            if y_u < best:
                best = y_u
        values[node] = best

    return FeasibilityProfile(
        values=values, root_value=float(values[tree.root]), saturated_low=saturated
    )


# ---------------------------------------------------------------------------
# expectation / dynamic programming


def tree_expectation(tree: ScenarioTree, g=None, policy=None, minimize=False):
    """Exact probability-weighted payoff; minimize=True runs nodewise DP."""
    spec = tree.spec
    g = spec.payoff if g is None else g
    probs = tree.probabilities()
    values = np.empty(tree.n_nodes)
    values[tree.leaves] = np.asarray(g(tree.states[tree.leaves]), dtype=float)

    for row in range(len(tree.interior) - 1, -1, -1):
        node = int(tree.interior[row])
        if minimize:
            values[node] = min(
                float(probs @ values[tree.succ[row, ci]])
                for ci in range(len(tree.controls))
            )
        else:
            if policy is None:
                raise ValueError("need a policy unless minimize=True")
            u, _ = policy.control(
                tree.node_time(node), tree.states[node], 0.0, policy.initial_state()
            )
            ci = tree.control_index(u)
            values[node] = float(probs @ values[tree.succ[row, ci]])
    return float(values[tree.root]), values


# ---------------------------------------------------------------------------
# martingale representation


@dataclass(frozen=True, eq=False)
class MartingaleRepresentation:
    y0: float
    alpha: dict  # node id -> (d,) Brownian integrand
    gamma: dict  # node id -> (I, M) per-process-per-mark jump integrand
    control_index: int


def _branch_matrix(tree: ScenarioTree):
    """Rows (1, dW, jump indicators minus compensators) over branches."""
    spec = tree.spec
    marks = spec.marks
    n_pairs = marks.n_processes * marks.n_marks
    rows = []
    for br in tree.branches:
        comp = -(marks.weights * tree.dt).reshape(-1)
        for (i, j) in br.jumps:
            comp[i * marks.n_marks + j] += 1.0
        rows.append(np.concatenate(([1.0], br.dW, comp)))
    return np.asarray(rows)  # (n_branches, 1 + d + n_pairs)


def _solve_branch_system(mat, targets, node):
    n_rows, n_cols = mat.shape
    try:
        if n_rows == n_cols:
            return np.linalg.solve(mat, targets)
        sol, residual, rank, _ = np.linalg.lstsq(mat, targets, rcond=None)
        if rank < n_cols:
            raise np.linalg.LinAlgError("rank deficient")
        gap = float(np.max(np.abs(mat @ sol - targets)))
        scale = max(1.0, float(np.max(np.abs(targets))))
        if gap > 1e-9 * scale:
            raise RepresentationError(
                f"branch increments do not span the payoff at node {node} "
                f"(residual {gap:.3g}); use complete branching"
            )
        return sol
    except np.linalg.LinAlgError as exc:
        raise RepresentationError(
            f"singular branch system at node {node}: {exc}"
        ) from None


def martingale_representation(tree: ScenarioTree, payoff, control_index=0):
    """Per-node integrands reproducing the conditional-expectation process.

    payoff: array aligned with tree.leaves (or callable on leaf states).
    Returns integrands such that the forward accumulation from y0 equals
    the payoff at every leaf.
    """
    spec = tree.spec
    marks = spec.marks
    if callable(payoff):
        payoff = np.asarray(payoff(tree.states[tree.leaves]), dtype=float)
    payoff = np.asarray(payoff, dtype=float).reshape(-1)
    if payoff.shape[0] != tree.leaves.shape[0]:
        raise ValueError("need one payoff per leaf")
    if not np.all(np.isfinite(payoff)):
        raise ValueError("payoff must be finite at all leaves")

    values = np.empty(tree.n_nodes)
    values[tree.leaves] = payoff
    mat = _branch_matrix(tree)
    alpha, gamma = {}, {}
    d = spec.d

    for row in range(len(tree.interior) - 1, -1, -1):
        node = int(tree.interior[row])
        targets = values[tree.succ[row, control_index]]
        sol = _solve_branch_system(mat, targets, node)
        values[node] = float(sol[0])
        alpha[node] = sol[1 : 1 + d].copy()
        gamma[node] = sol[1 + d :].reshape(marks.n_processes, marks.n_marks).copy()

    return MartingaleRepresentation(
        y0=float(values[tree.root]),
        alpha=alpha,
        gamma=gamma,
        control_index=control_index,
    )


def reconstruct_leaves(tree: ScenarioTree, rep: MartingaleRepresentation):
    """Forward accumulation of the representation; (leaf values, max spread).

    On a deduplicated tree several paths can reach one leaf; the spread
    reports the largest disagreement between them (0 for exact
    representations).
    """
    mat = _branch_matrix(tree)
    acc = {tree.root: [rep.y0]}
    for row in range(len(tree.interior)):
        node = int(tree.interior[row])
        if node not in acc:
            continue
        ys = acc.pop(node)
        z = np.concatenate(
            ([0.0], rep.alpha[node], rep.gamma[node].reshape(-1))
        )
        incr = mat @ z  # per-branch increment
        for bi in range(len(tree.branches)):
            nid = int(tree.succ[row, rep.control_index, bi])
            acc.setdefault(nid, []).extend(y + incr[bi] for y in ys)
    leaf_vals = np.full(tree.leaves.shape[0], np.nan)
    spread = 0.0
    for k, leaf in enumerate(tree.leaves):
        ys = acc.get(int(leaf))
        if ys is None:
            continue  # leaf unreachable under this control index
        leaf_vals[k] = ys[0]
        spread = max(spread, max(ys) - min(ys))
    return leaf_vals, spread
