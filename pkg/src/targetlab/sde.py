"""Path simulation of the controlled pair (X, Y) on a uniform Euler grid.

Brownian increments are Gaussian; each point process jumps at most once per
step via Bernoulli thinning with probability min(1, m_i(E) dt), the mark
drawn proportional to m_i(e).  Every path owns an RNG stream seeded by
(seed, path index), so results do not depend on how paths are split into
blocks or worker threads.  Coefficient evaluators must be pointwise in the
batch axes (no coupling across paths).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import numpy as np

from .model import Coefficients, ControlValue, ProblemSpec

__all__ = [
    "ConstantPolicy",
    "FeedbackPolicy",
    "SwitchedPolicy",
    "FixedTime",
    "BoxExit",
    "concatenate",
    "PathBundle",
    "SimulationError",
    "simulate",
    "check_admissibility",
    "exp_rescaling_deviation",
]


class SimulationError(RuntimeError):
    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class ConstantPolicy:
    value: ControlValue

    def initial_state(self):
        return None

    def control(self, s, x, y, state):
        return self.value, state


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Markov policy (s, x, y) -> ControlValue."""

    fn: callable

    def initial_state(self):
        return None

    def control(self, s, x, y, state):
        return self.fn(s, x, y), state


@dataclass(frozen=True, eq=False)
class FixedTime:
    time: float

    def triggered(self, s, x, y):
        return s >= self.time


@dataclass(frozen=True, eq=False)
class BoxExit:
    """Fires the first time (x, y) leaves the box (closed box, exit strict)."""

    x_box: np.ndarray
    y_box: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_box", np.atleast_2d(np.asarray(self.x_box, float)))
        object.__setattr__(self, "y_box", np.asarray(self.y_box, float).reshape(2))

    def triggered(self, s, x, y):
        x = np.asarray(x, dtype=float).reshape(-1)
        if np.any(x < self.x_box[:, 0]) or np.any(x > self.x_box[:, 1]):
            return True
        return y < self.y_box[0] or y > self.y_box[1]


@dataclass(frozen=True, eq=False)
class SwitchedPolicy:
    """first before the rule fires, second from then on (per path, sticky)."""

    first: object
    second: object
    rule: object

    def initial_state(self):
        return [False, self.first.initial_state(), self.second.initial_state()]

    def control(self, s, x, y, state):
        switched, st1, st2 = state
        if not switched and self.rule.triggered(s, x, y):
            switched = True
        if switched:
            u, st2 = self.second.control(s, x, y, st2)
        else:
            u, st1 = self.first.control(s, x, y, st1)
        return u, [switched, st1, st2]


def concatenate(nu1, nu2, tau):
    """Policy equal to nu1 strictly before tau and nu2 from tau on."""
    return SwitchedPolicy(nu1, nu2, tau)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Right-continuous step paths: values at index k hold on [t_k, t_{k+1}).

    jump_log[p] lists (step, process, mark) for jumps realized during step
    `step` of path p (applied in the state at step + 1).
    """

    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    jump_log: tuple
    seed: int

    @property
    def n_paths(self):
        return self.X.shape[0]

    @property
    def n_steps(self):
        return self.X.shape[1] - 1

    def to_csv(self, path):
        """Columns: path, step, time, x0..x{d-1}, y, jump_i/mark_i per process."""
        d = self.X.shape[2]
        n_proc = 0
        for log in self.jump_log:
            for _, i, _ in log:
                n_proc = max(n_proc, i + 1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"# seed={self.seed}"])
            header = (
                ["path", "step", "time"]
                + [f"x{i}" for i in range(d)]
                + ["y"]
                + [f"jump{i}" for i in range(n_proc)]
                + [f"mark{i}" for i in range(n_proc)]
            )
            writer.writerow(header)
            for p in range(self.n_paths):
                jumps_by_step = {}
                for step, i, e in self.jump_log[p]:
                    jumps_by_step.setdefault(step + 1, []).append((i, e))
                for k in range(self.n_steps + 1):
                    flags = ["0"] * n_proc
                    marks = [""] * n_proc
                    for i, e in jumps_by_step.get(k, ()):
                        flags[i] = "1"
                        marks[i] = repr(float(e))
                    row = (
                        [p, k, repr(float(self.times[k]))]
                        + [repr(float(v)) for v in self.X[p, k]]
                        + [repr(float(self.Y[p, k]))]
                        + flags
                        + marks
                    )
                    writer.writerow(row)


# ---------------------------------------------------------------------------
# engine


def _draw_block(seed, paths, n_steps, d, n_proc):
    """Per-path streams stacked into (B, n_steps, ...) arrays."""
    normals = np.empty((len(paths), n_steps, d))
    jump_u = np.empty((len(paths), n_steps, n_proc))
    mark_u = np.empty((len(paths), n_steps, n_proc))
    for row, p in enumerate(paths):
        rng = np.random.default_rng((seed, int(p)))
        normals[row] = rng.standard_normal((n_steps, d))
        jump_u[row] = rng.random((n_steps, n_proc))
        mark_u[row] = rng.random((n_steps, n_proc))
    return normals, jump_u, mark_u


def _bshape(arr, shape):
    return np.broadcast_to(np.asarray(arr, dtype=float), shape)


def _sweep_block(spec, policy, times, x0, y0, paths, seed, out_X, out_Y, logs):
    """Advance one block of paths; policies may carry per-path state."""
    co = spec.coefficients
    marks = spec.marks
    d, n_proc = spec.d, marks.n_processes
    n_steps = len(times) - 1
    B = len(paths)
    normals, jump_u, mark_u = _draw_block(seed, paths, n_steps, d, n_proc)

    # per-step thinning probability; dt is uniform
    dt = times[1] - times[0] if n_steps else 0.0
    p_jump = np.array(
        [min(1.0, marks.process_mass(i) * dt) for i in range(n_proc)]
    )
    cums = [
        np.cumsum(marks.weights[i]) / marks.process_mass(i) if marks.n_marks else None
        for i in range(n_proc)
    ]

    X = np.broadcast_to(np.asarray(x0, float).reshape(-1), (B, d)).copy()
    Y = np.full(B, float(y0))
    out_X[paths, 0] = X
    out_Y[paths, 0] = Y

    constant = isinstance(policy, ConstantPolicy)
    states = None if constant else [policy.initial_state() for _ in range(B)]

    for k in range(n_steps):
        t_k = times[k]
        dW = np.sqrt(dt) * normals[:, k]  # (B, d)
        jumped = jump_u[:, k] < p_jump  # (B, n_proc)
        mark_idx = np.zeros((B, n_proc), dtype=int)
        for i in range(n_proc):
            if marks.n_marks:
                mark_idx[:, i] = np.searchsorted(cums[i], mark_u[:, k, i], side="right")
                mark_idx[:, i] = np.minimum(mark_idx[:, i], marks.n_marks - 1)

        if constant:
            u = policy.value
            Xn, Yn = _step_batch(co, marks, t_k, dt, X, Y, u, dW, jumped, mark_idx, d)
        else:
            Xn = np.empty_like(X)
            Yn = np.empty_like(Y)
            for row in range(B):
                u, states[row] = policy.control(t_k, X[row], Y[row], states[row])
                xr, yr = _step_batch(
                    co,
                    marks,
                    t_k,
                    dt,
                    X[row : row + 1],
                    Y[row : row + 1],
                    u,
                    dW[row : row + 1],
                    jumped[row : row + 1],
                    mark_idx[row : row + 1],
                    d,
                )
                Xn[row], Yn[row] = xr[0], yr[0]

        bad = ~(np.isfinite(Xn).all(axis=1) & np.isfinite(Yn))
        if bad.any():
            row = int(np.nonzero(bad)[0][0])
            raise SimulationError(
                f"nonfinite state at path {paths[row]}, step {k}",
                path=int(paths[row]),
                step=k,
            )

        for i in range(n_proc):
            rows = np.nonzero(jumped[:, i])[0]
            for row in rows:
                logs[paths[row]].append((k, i, float(marks.points[mark_idx[row, i]])))

        X, Y = Xn, Yn
        out_X[paths, k + 1] = X
        out_Y[paths, k + 1] = Y


def _step_batch(co, marks, t, dt, X, Y, u, dW, jumped, mark_idx, d):
    B = X.shape[0]
    mu_x = _bshape(co.mu_X(t, X, u), (B, d))
    sig = _bshape(co.sigma_X(t, X, u), (B, d, d))
    mu_y = _bshape(co.mu_Y(t, X, Y, u), (B,))
    sig_y = _bshape(co.sigma_Y(t, X, Y, u), (B, d))

    Xn = X + mu_x * dt + np.einsum("bij,bj->bi", sig, dW)
    Yn = Y + mu_y * dt + np.einsum("bi,bi->b", sig_y, dW)

    n_proc = marks.n_processes
    for i in range(n_proc):
        if not jumped[:, i].any():
            continue
        for m in np.unique(mark_idx[jumped[:, i], i]):
            sel = jumped[:, i] & (mark_idx[:, i] == m)
            e = float(marks.points[m])
            u2e = u.u2[e] if e in u.u2 else np.zeros(0)
            nsel = int(sel.sum())
            beta = _bshape(co.beta(t, X[sel], u.u1, u2e, e), (nsel, d, n_proc))
            bvec = _bshape(co.b(t, X[sel], Y[sel], u.u1, u2e, e), (nsel, n_proc))
            Xn[sel] += beta[:, :, i]
            Yn[sel] += bvec[:, i]
    return Xn, Yn


def simulate(
    spec: ProblemSpec,
    policy,
    t,
    x,
    y,
    n_paths,
    n_steps,
    seed,
    n_workers=1,
    block_size=4096,
):
    """Euler paths of (X, Y) on [t, T]; deterministic given the seed.

    Per-path outputs are identical for any worker count or block size.
    """
    if not (0.0 <= t < spec.T):
        raise ValueError("need 0 <= t < T")
    if n_steps < 1 or n_paths < 1:
        raise ValueError("need n_steps >= 1 and n_paths >= 1")
    times = np.linspace(t, spec.T, n_steps + 1)
    out_X = np.empty((n_paths, n_steps + 1, spec.d))
    out_Y = np.empty((n_paths, n_steps + 1))
    logs = [[] for _ in range(n_paths)]

    blocks = [
        np.arange(lo, min(lo + block_size, n_paths))
        for lo in range(0, n_paths, block_size)
    ]

    def run(block):
        _sweep_block(spec, policy, times, x, y, block, seed, out_X, out_Y, logs)

    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, blocks))
    else:
        for block in blocks:
            run(block)

    return PathBundle(
        times=times,
        X=out_X,
        Y=out_Y,
        jump_log=tuple(tuple(lg) for lg in logs),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# admissibility


def check_admissibility(spec, policy, x_box, y_box, K, bundle: PathBundle, counts=5):
    """True iff every realized simultaneous-jump sum stays within K on a
    lattice over the compact window (x_box, y_box).

    At each step with jumps the control is the one the policy produced at
    that step's left endpoint; the jump sum is evaluated at lattice (x, y)
    points, not the path state.
    """
    x_box = np.atleast_2d(np.asarray(x_box, dtype=float))
    y_box = np.asarray(y_box, dtype=float).reshape(2)
    axes = [np.linspace(lo, hi, counts) for lo, hi in x_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice_x = np.stack([m.ravel() for m in mesh], axis=1)  # (L, d)
    lattice_y = np.linspace(y_box[0], y_box[1], counts)
    co = spec.coefficients

    for p in range(bundle.n_paths):
        by_step = {}
        for step, i, e in bundle.jump_log[p]:
            by_step.setdefault(step, []).append((i, e))
        if not by_step:
            continue
        state = policy.initial_state()
        for k in range(bundle.n_steps):
            u, state = policy.control(
                bundle.times[k], bundle.X[p, k], bundle.Y[p, k], state
            )
            if k not in by_step:
                continue
            t_k = bundle.times[k]
            for yv in lattice_y:
                total = np.zeros(lattice_x.shape[0])
                for i, e in by_step[k]:
                    u2e = u.u2[float(e)] if float(e) in u.u2 else np.zeros(0)
                    bvec = _bshape(
                        co.b(t_k, lattice_x, np.full(lattice_x.shape[0], yv), u.u1, u2e, e),
                        (lattice_x.shape[0], spec.marks.n_processes),
                    )
                    total = total + bvec[:, i]
                if np.any(np.abs(total) > K):
                    return False
    return True


# ---------------------------------------------------------------------------
# exponential rescaling identity


def _rescaled_coefficients(co: Coefficients, c):
    def mu_Y(t, x, y, u):
        y = np.asarray(y, dtype=float)
        return c * y + np.exp(c * t) * np.asarray(
            co.mu_Y(t, x, np.exp(-c * t) * y, u), dtype=float
        )

    def sigma_Y(t, x, y, u):
        y = np.asarray(y, dtype=float)
        return np.exp(c * t) * np.asarray(
            co.sigma_Y(t, x, np.exp(-c * t) * y, u), dtype=float
        )

    def b(t, x, y, u1, u2e, e):
        y = np.asarray(y, dtype=float)
        return np.exp(c * t) * np.asarray(
            co.b(t, x, np.exp(-c * t) * y, u1, u2e, e), dtype=float
        )

    return Coefficients(
        mu_X=co.mu_X,
        sigma_X=co.sigma_X,
        beta=co.beta,
        mu_Y=mu_Y,
        sigma_Y=sigma_Y,
        b=b,
        lipschitz_L=co.lipschitz_L,
        growth_C=co.growth_C,
    )


def exp_rescaling_deviation(spec, policy, c, t, x, y, n_paths, n_steps, seed):
    """Max pathwise gap in the identity  Ytilde(s) e^{-cs} = Y(s)  where
    Ytilde runs the exponentially rescaled coefficients from y and Y runs
    the original ones from y e^{-ct}, both on identical noise streams.
    """
    if c < 0:
        raise ValueError("need c >= 0")
    rescaled = ProblemSpec(
        coefficients=_rescaled_coefficients(spec.coefficients, c),
        marks=spec.marks,
        T=spec.T,
        g=spec.g,
        d=spec.d,
        q=spec.q,
        n=spec.n,
        g_bound=spec.g_bound,
        x_box=spec.x_box,
        y_box=spec.y_box,
        u1_box=spec.u1_box,
        u2_box=spec.u2_box,
    )
    tilde = simulate(rescaled, policy, t, x, y, n_paths, n_steps, seed)
    plain = simulate(spec, policy, t, x, y * np.exp(-c * t), n_paths, n_steps, seed)
    scale = np.exp(-c * tilde.times)[None, :]
    return float(np.max(np.abs(tilde.Y * scale - plain.Y)))
