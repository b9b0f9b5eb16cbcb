"""Backward-in-time explicit monotone finite differences (one space dim).

The sweep uses upwind first differences chosen by the drift sign per
control, central second differences, and the nonlocal term as an exact
finite sum with multilinear interpolation at the shifted points (clamped
at the box edge, which preserves monotonicity).  The time step must pass
the CFL bound

    dt <= 1 / sup_u ( |mu_X| / h + |sigma sigma'| / h^2 + mhat(E) ),

which is exactly the coefficient-positivity condition of the explicit
stencil, so a passing certificate doubles as a monotonicity certificate.

Grids and fields carry general-d shapes, but the sweeps are implemented
for d = 1 (every bundled model is one-dimensional) and refuse otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
import numpy as np

from .model import ControlGrid, ControlValue, ProblemSpec

__all__ = [
    "SpaceTimeGrid",
    "ValueField",
    "FieldSlice",
    "ConstraintOperator",
    "CflCertificate",
    "CflError",
    "ConvergenceError",
    "cfl_check",
    "solve_hjb",
    "solve_terminal",
    "SolveResult",
    "TerminalResult",
]


class CflError(RuntimeError):
    def __init__(self, message, dt_bound):
        super().__init__(message)
        self.dt_bound = dt_bound


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    """Uniform tensor grid on [t0, T] x box, with a boundary policy.

    axes     : tuple of (lo, hi, count) per space dimension
    boundary : "clamp" or "linear-extrapolate"
    """

    t0: float
    T: float
    n_steps: int
    axes: tuple
    boundary: str = "clamp"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("need n_steps >= 1")
        if self.T <= self.t0:
            raise ValueError("need T > t0")
        if self.boundary not in ("clamp", "linear-extrapolate"):
            raise ValueError("boundary must be clamp or linear-extrapolate")
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        for lo, hi, n in axes:
            if n < 3 or hi <= lo:
                raise ValueError("each axis needs hi > lo and at least 3 nodes")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "_cfl_certificate", None)

    @property
    def cfl_certificate(self):
        """Latest certificate from cfl_check on this grid (None before)."""
        return self._cfl_certificate

    @property
    def d(self):
        return len(self.axes)

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def nodes(self, axis=0):
        lo, hi, n = self.axes[axis]
        return np.linspace(lo, hi, n)

    def spacing(self, axis=0):
        lo, hi, n = self.axes[axis]
        return (hi - lo) / (n - 1)


@dataclass(frozen=True, eq=False)
class ValueField:
    """Node values per time slice; multilinear interpolation in space and
    linear interpolation in time.  Sentinel +-inf values are legal and
    propagate through interpolation."""

    grid: SpaceTimeGrid
    values: np.ndarray  # (n_steps+1, Nx)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ValueError("one slice per time step required")
        object.__setattr__(self, "values", vals)

    def slice_at(self, k):
        return self.values[k]

    def at(self, t, x):
        times = self.grid.times
        t = float(np.clip(t, times[0], times[-1]))
        k = min(int((t - times[0]) / self.grid.dt), self.grid.n_steps - 1)
        w = (t - times[k]) / self.grid.dt
        xs = self.grid.nodes(0)
        xq = np.asarray(x, dtype=float).reshape(-1)
        v0 = np.interp(xq, xs, self.values[k])
        v1 = np.interp(xq, xs, self.values[k + 1])
        out = (1.0 - w) * v0 + w * v1
        return float(out[0]) if out.size == 1 else out

    def to_csv(self, path):
        xs = self.grid.nodes(0)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x0", "value"])
            for k, t in enumerate(self.grid.times):
                for j, x in enumerate(xs):
                    writer.writerow([repr(float(t)), repr(float(x)), repr(float(self.values[k, j]))])


class FieldSlice:
    """One time slice exposed through the test-function protocol.

    Derivatives come from central differences on the grid; values off the
    grid from interpolation with the grid's boundary policy.
    """

    def __init__(self, grid: SpaceTimeGrid, values):
        self.grid = grid
        self.vals = np.asarray(values, dtype=float)
        self.d = grid.d
        self.xs = grid.nodes(0)
        self.h = grid.spacing(0)

    def _interp(self, xq):
        xq = np.asarray(xq, dtype=float).reshape(-1)
        out = np.interp(xq, self.xs, self.vals)
        if self.grid.boundary == "linear-extrapolate":
            lo, hi = self.xs[0], self.xs[-1]
            below = xq < lo
            above = xq > hi
            if below.any():
                slope = (self.vals[1] - self.vals[0]) / self.h
                out[below] = self.vals[0] + slope * (xq[below] - lo)
            if above.any():
                slope = (self.vals[-1] - self.vals[-2]) / self.h
                out[above] = self.vals[-1] + slope * (xq[above] - hi)
        return out

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            return float(self._interp(x.reshape(-1))[0])
        return self._interp(x[..., 0].ravel()).reshape(x.shape[:-1])

    def shifted_difference(self, t, x, points):
        points = np.asarray(points, dtype=float).reshape(-1, self.d)
        return self._interp(points[:, 0]) - self.value(t, x)

    def time_derivative(self, t, x):
        return 0.0

    def gradient(self, t, x):
        xv = float(np.asarray(x).reshape(-1)[0])
        h = self.h
        return np.array(
            [(self._interp([xv + h])[0] - self._interp([xv - h])[0]) / (2 * h)]
        )

    def hessian(self, t, x):
        xv = float(np.asarray(x).reshape(-1)[0])
        h = self.h
        v = (
            self._interp([xv + h])[0]
            - 2.0 * self._interp([xv])[0]
            + self._interp([xv - h])[0]
        ) / (h * h)
        return np.array([[v]])


# ---------------------------------------------------------------------------
# constraint operator


@dataclass(frozen=True, eq=False)
class ConstraintOperator:
    """Lower semicontinuous constraint G with its y-feasibility bound.

    fn(t, x, y, p, A, phi) evaluates G; lower_bound(t, x, p, A, phi)
    returns the least y with G <= 0 (-inf when the constraint never
    binds).  The two implication flags assert, by configuration only,
    that finiteness of the Hamiltonian and G <= 0 imply each other in
    the intended direction; nothing verifies them.
    """

    fn: callable
    lower_bound: callable
    name: str = "G"
    h_implies_g: bool = True
    g_implies_h: bool = True

    def spot_check_lsc(self, spec, grid, n_points=16, radius=1e-3, rate=10.0, seed=0):
        """Sample-based lower-semicontinuity probe.

        At each sampled argument the value may exceed the minimum over
        nearby perturbations only by the allowance rate*(1+|value|)*radius
        (the drop a continuous function of moderate slope can produce);
        larger drops flag a downward discontinuity.  Returns the worst
        excess; <= 0 passes.
        """
        rng = np.random.default_rng(seed)
        xs = grid.nodes(0)
        worst = -np.inf
        for _ in range(n_points):
            t = float(rng.uniform(grid.t0, grid.T))
            x = np.array([float(rng.uniform(xs[0], xs[-1]))])
            y = float(rng.uniform(-1.0, 1.0))
            p = rng.uniform(-1.0, 1.0, size=1)
            A = np.asarray([[float(rng.uniform(-1.0, 1.0))]])
            phi = FieldSlice(grid, np.zeros_like(xs))
            center = self.fn(t, x, y, p, A, phi)
            nearby = min(
                self.fn(
                    t,
                    x + radius * rng.uniform(-1, 1, size=1),
                    y + radius * rng.uniform(-1, 1),
                    p + radius * rng.uniform(-1, 1, size=1),
                    A,
                    phi,
                )
                for _ in range(8)
            )
            allowance = rate * (1.0 + abs(center)) * radius
            worst = max(worst, center - nearby - allowance)
        return worst

    @classmethod
    def constant(cls, c):
        c = float(c)

        def fn(t, x, y, p, A, phi):
            return c

        def lb(t, x, p, A, phi):
            return -np.inf if c <= 0.0 else np.inf

        return cls(fn=fn, lower_bound=lb, name=f"const({c:g})")

    @classmethod
    def payoff_gap(cls, g, margin=0.0):
        """G = y - g(x) - margin; an upper-bound constraint (never projects)."""
        margin = float(margin)

        def fn(t, x, y, p, A, phi):
            xv = np.asarray(x, dtype=float).reshape(1, -1)
            return float(y - np.asarray(g(xv), dtype=float)[0] - margin)

        def lb(t, x, p, A, phi):
            return -np.inf

        return cls(fn=fn, lower_bound=lb, name=f"payoff-gap({margin:g})")

    @classmethod
    def control_residual(cls, grid: ControlGrid, bound, spec: ProblemSpec, y_window=None):
        """G = min_u |volatility mismatch| - bound; illustrative built-in.

        The feasibility bound scans then bisects in y, assuming the
        residual is nonincreasing in y on the window.
        """
        from .operators import volatility_mismatch

        bound = float(bound)
        lo_w, hi_w = (-1e3, 1e3) if y_window is None else map(float, y_window)

        def fn(t, x, y, p, A, phi):
            return (
                min(
                    float(np.linalg.norm(volatility_mismatch(t, x, y, p, u, spec)))
                    for u in grid
                )
                - bound
            )

        def lb(t, x, p, A, phi):
            ys = np.linspace(lo_w, hi_w, 33)
            vals = [fn(t, x, yv, p, A, phi) for yv in ys]
            hit = next((i for i, v in enumerate(vals) if v <= 0.0), None)
            if hit is None:
                return np.inf
            if hit == 0:
                return -np.inf
            lo, hi = ys[hit - 1], ys[hit]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if fn(t, x, mid, p, A, phi) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi

        return cls(fn=fn, lower_bound=lb, name=f"control-residual({bound:g})")


# ---------------------------------------------------------------------------
# CFL


@dataclass(frozen=True, eq=False)
class CflCertificate:
    dt_bound: float
    dt: float
    passed: bool
    sup_term: float

    def summary(self):
        verdict = "pass" if self.passed else "FAIL"
        return f"CFL {verdict}: dt = {self.dt:.6g}, bound = {self.dt_bound:.6g}"


def cfl_check(spec: ProblemSpec, grid: SpaceTimeGrid, controls: ControlGrid):
    """Largest stable dt for the explicit stencil over the control grid.

    Coefficients are sampled at every space node at the initial, middle,
    and terminal times.
    """
    _require_1d(grid)
    xs = grid.nodes(0)[:, None]  # (Nx, 1)
    h = grid.spacing(0)
    mhat = spec.marks.total_mass()
    co = spec.coefficients
    sup = 0.0
    for t in (grid.t0, 0.5 * (grid.t0 + grid.T), grid.T):
        for u in controls:
            mu = np.broadcast_to(
                np.asarray(co.mu_X(t, xs, u), dtype=float), (xs.shape[0], 1)
            )
            sig = np.broadcast_to(
                np.asarray(co.sigma_X(t, xs, u), dtype=float), (xs.shape[0], 1, 1)
            )
            a = sig[:, 0, 0] ** 2
            term = np.abs(mu[:, 0]) / h + np.abs(a) / (h * h) + mhat
            sup = max(sup, float(term.max()))
    dt_bound = np.inf if sup == 0.0 else 1.0 / sup
    cert = CflCertificate(
        dt_bound=dt_bound, dt=grid.dt, passed=grid.dt <= dt_bound, sup_term=sup
    )
    object.__setattr__(grid, "_cfl_certificate", cert)
    return cert


def _require_1d(grid):
    if grid.d != 1:
        raise NotImplementedError(
            "finite-difference sweeps are implemented for one space dimension"
        )


# ---------------------------------------------------------------------------
# difference helpers


def _ghosted(V, boundary):
    if boundary == "clamp":
        return np.concatenate(([V[0]], V, [V[-1]]))
    return np.concatenate(([2 * V[0] - V[1]], V, [2 * V[-1] - V[-2]]))


def _diffs(V, h, boundary):
    ext = _ghosted(V, boundary)
    fwd = (ext[2:] - ext[1:-1]) / h
    bwd = (ext[1:-1] - ext[:-2]) / h
    cen = (ext[2:] - ext[:-2]) / (2 * h)
    second = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / (h * h)
    return fwd, bwd, cen, second


def _interp_clamped(grid, xs, V, xq):
    out = np.interp(xq, xs, V)
    if grid.boundary == "linear-extrapolate":
        h = grid.spacing(0)
        below = xq < xs[0]
        above = xq > xs[-1]
        if below.any():
            out[below] = V[0] + (V[1] - V[0]) / h * (xq[below] - xs[0])
        if above.any():
            out[above] = V[-1] + (V[-1] - V[-2]) / h * (xq[above] - xs[-1])
    return out


def _upwind(mu, fwd, bwd, cen):
    return np.where(mu > 0.0, fwd, np.where(mu < 0.0, bwd, cen))


# ---------------------------------------------------------------------------
# the sweep


@dataclass(frozen=True, eq=False)
class SolveResult:
    field: ValueField
    certificate: CflCertificate
    empty_admissible_nodes: int
    form: str


def _nonlocal_sum(spec, grid, t, xs, V, u):
    """(Nx,) array of sum_i sum_e (V(x + beta_i) - V(x)) m_i(e)."""
    marks = spec.marks
    if marks.n_marks == 0:
        return np.zeros_like(V)
    co = spec.coefficients
    out = np.zeros_like(V)
    xb = xs[:, None]
    for j, e in enumerate(marks.points):
        u2e = u.u2[float(e)] if float(e) in u.u2 else np.zeros(spec.n)
        beta = np.broadcast_to(
            np.asarray(co.beta(t, xb, u.u1, u2e, e), dtype=float),
            (xs.shape[0], 1, marks.n_processes),
        )
        for i in range(marks.n_processes):
            shifted = _interp_clamped(grid, xs, V, xs + beta[:, 0, i])
            out = out + (shifted - V) * marks.weights[i, j]
    return out


def solve_hjb(
    spec: ProblemSpec,
    terminal,
    grid: SpaceTimeGrid,
    form,
    controls,
    G: ConstraintOperator = None,
    eps=1e-9,
    eta=1e-9,
    enforce_cfl=True,
):
    """Explicit backward sweep for the interior equation.

    form="control": node update V <- V + dt * min_u (nonlocal + mu p + a A).
    form="target" : per node, H is the best drift term over controls whose
    volatility mismatch is within eps and whose jump margins clear eta;
    nodes with no feasible control carry the constraint bound alone and
    are counted.  Afterwards every node is projected onto the constraint's
    feasibility region (V <- max(V, bound)).

    `controls` is a ControlGrid, or (target form) any object with a
    .controls(spec, t, x, p_resolver, phi) method synthesizing per-node
    control values; its .cfl_grid is then used for the CFL certificate.
    """
    _require_1d(grid)
    xs = grid.nodes(0)
    h = grid.spacing(0)
    dt = grid.dt
    co = spec.coefficients
    times = grid.times

    cfl_grid = controls if isinstance(controls, ControlGrid) else controls.cfl_grid
    cert = cfl_check(spec, grid, cfl_grid)
    if enforce_cfl and not cert.passed:
        raise CflError(
            f"dt = {grid.dt:.6g} violates the stability bound {cert.dt_bound:.6g}",
            dt_bound=cert.dt_bound,
        )

    V = np.asarray(terminal, dtype=float).copy()
    if V.shape != xs.shape:
        raise ValueError("terminal slice must match the space grid")
    out = np.empty((grid.n_steps + 1, xs.shape[0]))
    out[-1] = V
    empty_nodes = 0
    xb = xs[:, None]

    # sentinel slices (-inf where no control is feasible) flow through the
    # remaining sweep arithmetically; the count is the diagnostic
    with np.errstate(invalid="ignore"):
        for k in range(grid.n_steps - 1, -1, -1):
            t_next = float(times[k + 1])
            fwd, bwd, cen, second = _diffs(V, h, grid.boundary)

            if form == "control":
                best = None
                for u in controls:
                    mu = np.broadcast_to(
                        np.asarray(co.mu_X(t_next, xb, u), dtype=float), (xs.size, 1)
                    )[:, 0]
                    sig = np.broadcast_to(
                        np.asarray(co.sigma_X(t_next, xb, u), dtype=float),
                        (xs.size, 1, 1),
                    )[:, 0, 0]
                    cand = (
                        _nonlocal_sum(spec, grid, t_next, xs, V, u)
                        + mu * _upwind(mu, fwd, bwd, cen)
                        + 0.5 * sig * sig * second
                    )
                    best = cand if best is None else np.minimum(best, cand)
                Vn = V + dt * best
            elif form == "target":
                if isinstance(controls, ControlGrid):
                    Vn, n_empty = _target_step_grid(
                        spec, grid, t_next, xs, V, controls, eps, eta,
                        fwd, bwd, cen, second, dt, G,
                    )
                else:
                    Vn, n_empty = _target_step_pernode(
                        spec, grid, t_next, xs, V, controls, eps, eta,
                        fwd, bwd, cen, second, dt, G,
                    )
                empty_nodes += n_empty
            else:
                raise ValueError("form must be 'control' or 'target'")

            if G is not None:
                phi = FieldSlice(grid, V)
                for j in range(xs.size):
                    lbv = G.lower_bound(
                        t_next, xs[j : j + 1], np.array([cen[j]]),
                        np.array([[second[j]]]), phi,
                    )
                    if lbv > Vn[j]:
                        Vn[j] = lbv
            V = Vn
            out[k] = V

    return SolveResult(
        field=ValueField(grid=grid, values=out),
        certificate=cert,
        empty_admissible_nodes=empty_nodes,
        form=form,
    )


def _target_step_grid(
    spec, grid, t, xs, V, controls, eps, eta, fwd, bwd, cen, second, dt, G
):
    co = spec.coefficients
    marks = spec.marks
    xb = xs[:, None]
    H = np.full(xs.size, -np.inf)
    feasible_any = np.zeros(xs.size, dtype=bool)
    for u in controls:
        mu = np.broadcast_to(
            np.asarray(co.mu_X(t, xb, u), dtype=float), (xs.size, 1)
        )[:, 0]
        sig = np.broadcast_to(
            np.asarray(co.sigma_X(t, xb, u), dtype=float), (xs.size, 1, 1)
        )[:, 0, 0]
        p_up = _upwind(mu, fwd, bwd, cen)
        sy = np.broadcast_to(
            np.asarray(co.sigma_Y(t, xb, V, u), dtype=float), (xs.size, 1)
        )[:, 0]
        mismatch = np.abs(sy - sig * p_up)
        margins = np.full(xs.size, np.inf)
        for j, e in enumerate(marks.points):
            u2e = u.u2[float(e)] if float(e) in u.u2 else np.zeros(spec.n)
            beta = np.broadcast_to(
                np.asarray(co.beta(t, xb, u.u1, u2e, e), dtype=float),
                (xs.size, 1, marks.n_processes),
            )
            bvec = np.broadcast_to(
                np.asarray(co.b(t, xb, V, u.u1, u2e, e), dtype=float),
                (xs.size, marks.n_processes),
            )
            for i in range(marks.n_processes):
                shifted = _interp_clamped(grid, xs, V, xs + beta[:, 0, i])
                margins = np.minimum(margins, bvec[:, i] - (shifted - V))
        ok = (mismatch <= eps) & (margins >= eta)
        if not ok.any():
            continue
        mu_y = np.broadcast_to(
            np.asarray(co.mu_Y(t, xb, V, u), dtype=float), (xs.size,)
        )
        F = mu_y - mu * p_up - 0.5 * sig * sig * second
        H = np.where(ok, np.maximum(H, F), H)
        feasible_any |= ok

    H_safe = np.where(feasible_any, H, 0.0)
    Vn = np.where(feasible_any, V - dt * H_safe, -np.inf)
    return Vn, int((~feasible_any).sum())


def _target_step_pernode(
    spec, grid, t, xs, V, provider, eps, eta, fwd, bwd, cen, second, dt, G
):
    co = spec.coefficients
    phi = FieldSlice(grid, V)
    Vn = np.empty_like(V)
    n_empty = 0
    for j in range(xs.size):
        xj = xs[j : j + 1]

        def p_resolver(u, j=j):
            mu = float(
                np.asarray(co.mu_X(t, xj.reshape(1, 1), u), dtype=float).reshape(-1)[0]
            )
            if mu > 0:
                return np.array([fwd[j]])
            if mu < 0:
                return np.array([bwd[j]])
            return np.array([cen[j]])

        best = -np.inf
        found = False
        for u in provider.controls(spec, t, xj, p_resolver, phi):
            p = p_resolver(u)
            mu = float(np.asarray(co.mu_X(t, xj, u), dtype=float).reshape(-1)[0])
            sig = float(
                np.asarray(co.sigma_X(t, xj, u), dtype=float).reshape(-1)[0]
            )
            sy = float(
                np.asarray(co.sigma_Y(t, xj, V[j], u), dtype=float).reshape(-1)[0]
            )
            if abs(sy - sig * p[0]) > eps:
                continue
            margin = np.inf
            marks = spec.marks
            for jm, e in enumerate(marks.points):
                u2e = u.u2[float(e)] if float(e) in u.u2 else np.zeros(spec.n)
                beta = np.asarray(
                    co.beta(t, xj, u.u1, u2e, e), dtype=float
                ).reshape(1, marks.n_processes)
                bvec = np.asarray(
                    co.b(t, xj, V[j], u.u1, u2e, e), dtype=float
                ).reshape(marks.n_processes)
                for i in range(marks.n_processes):
                    shifted = _interp_clamped(
                        grid, xs, V, np.array([xs[j] + beta[0, i]])
                    )[0]
                    margin = min(margin, bvec[i] - (shifted - V[j]))
            if margin < eta:
                continue
            mu_y = float(np.asarray(co.mu_Y(t, xj, V[j], u), dtype=float))
            F = mu_y - mu * p[0] - 0.5 * sig * sig * second[j]
            best = max(best, F)
            found = True
        if found:
            Vn[j] = V[j] - dt * best
        else:
            Vn[j] = -np.inf
            n_empty += 1
    return Vn, n_empty


# ---------------------------------------------------------------------------
# terminal layer


@dataclass(frozen=True, eq=False)
class TerminalResult:
    values: np.ndarray
    iterations: int
    max_residual: float


def solve_terminal(
    spec: ProblemSpec,
    G: ConstraintOperator,
    grid: SpaceTimeGrid,
    delta_infinite=True,
    delta_kwargs=None,
    omega=1.0,
    tol=1e-10,
    max_iter=500,
):
    """Damped fixed point for the terminal-layer equation

        min{ max{phi - g, G phi}, delta phi } = 0 .

    With the delta_infinite flag the gap term drops (the embedding case);
    otherwise delta is evaluated per node from the boundary-gap lattice
    classification using delta_kwargs = dict(controls=..., box=...,
    counts=..., [tolerance=...]).
    """
    _require_1d(grid)
    from .operators import boundary_gap

    xs = grid.nodes(0)
    g_vals = spec.payoff(xs[:, None])
    phi_vals = g_vals.copy()
    residual = np.zeros_like(phi_vals)

    for it in range(max_iter + 1):
        phi = FieldSlice(grid, phi_vals)
        _, _, cen, second = _diffs(phi_vals, grid.spacing(0), grid.boundary)
        for j in range(xs.size):
            gv = G.fn(
                spec.T, xs[j : j + 1], phi_vals[j],
                np.array([cen[j]]), np.array([[second[j]]]), phi,
            )
            res = max(phi_vals[j] - g_vals[j], gv)
            if not delta_infinite:
                dk = delta_kwargs or {}
                gap = boundary_gap(
                    spec.T, xs[j : j + 1], phi_vals[j], np.array([cen[j]]),
                    phi, dk["controls"], spec, dk["box"], dk["counts"],
                    tolerance=dk.get("tolerance"),
                ).delta
                res = min(res, gap)
            residual[j] = res
        worst = float(np.max(np.abs(residual)))
        if worst <= tol:
            return TerminalResult(values=phi_vals, iterations=it, max_residual=worst)
        phi_vals = phi_vals - omega * residual

    raise ConvergenceError(
        f"terminal layer did not reach tol {tol:g} in {max_iter} sweeps "
        f"(residual {worst:.3g})",
        residual=residual,
    )
