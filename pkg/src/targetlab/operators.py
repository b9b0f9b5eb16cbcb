"""Operator algebra for the target-problem HJB equation.

Everything here is an exact pointwise evaluation over a finite control
grid.  The one deliberate approximation is the pair hamiltonian_upper /
hamiltonian_lower, which replace the relaxed semi-limits (shrinking
tolerances, perturbed arguments, perturbed test functions) by a finite
schedule of levels with sampled perturbations; no function in this module
claims to compute a true limsup or liminf.

Conventions: p is the gradient slot, A the symmetric Hessian slot, phi a
smooth test function; the empty supremum is -inf.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
import numpy as np

from .model import ControlGrid, ControlValue, MarkSpace, ProblemSpec

__all__ = [
    "OperatorPoint",
    "TestFunction",
    "RelaxationSchedule",
    "drift_term",
    "volatility_mismatch",
    "jump_margins",
    "jump_margin",
    "worst_jump_margin",
    "control_feasible",
    "hamiltonian",
    "hamiltonian_upper",
    "hamiltonian_lower",
    "apply_generator",
    "nonlocal_term",
    "control_form_hamiltonian",
    "boundary_gap",
    "BoundaryGapResult",
    "dump_operator_rows",
]


@dataclass(frozen=True, eq=False)
class OperatorPoint:
    """Argument bundle (t, x, y, p, A) the interior operators act on."""

    t: float
    x: np.ndarray
    y: float
    p: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape != (x.size, x.size) or p.size != x.size:
            raise ValueError("inconsistent dimensions in operator point")
        if self.t < 0.0:
            raise ValueError("time slot must be nonnegative")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0.0):
            raise ValueError("second-order slot must be symmetric")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "A", 0.5 * (A + A.T))

    @property
    def d(self):
        return self.x.size


# ---------------------------------------------------------------------------
# test functions


class TestFunction:
    """Polynomial in (t, x), optionally augmented with smooth radial bumps.

    terms : list of (coef, tpow, xpows) with xpows a length-d tuple
    bumps : list of (amp, center, radius); each bump is
            amp * exp(-1 / (1 - |x-center|^2 / radius^2)) inside its ball

    Derivatives are exact; `value` accepts x of shape (d,) or (..., d).
    """

    __test__ = False  # keep pytest from collecting the Test* name

    def __init__(self, d, terms=(), bumps=()):
        self.d = int(d)
        self.terms = [
            (float(c), int(tp), tuple(int(k) for k in xp)) for c, tp, xp in terms
        ]
        for _, _, xp in self.terms:
            if len(xp) != self.d:
                raise ValueError("monomial power tuple has wrong length")
        self.bumps = [
            (float(a), np.asarray(c, dtype=float).reshape(self.d), float(r))
            for a, c, r in bumps
        ]

    # constructors ---------------------------------------------------------

    @classmethod
    def zero(cls, d):
        return cls(d)

    @classmethod
    def constant(cls, d, c):
        return cls(d, terms=[(c, 0, (0,) * d)])

    @classmethod
    def coordinate(cls, d, axis=0, coef=1.0):
        xp = [0] * d
        xp[axis] = 1
        return cls(d, terms=[(coef, 0, tuple(xp))])

    @classmethod
    def from_monomials(cls, d, monomials):
        """monomials: iterable of (coef, tpow, xpows)."""
        return cls(d, terms=list(monomials))

    def plus_constant(self, c):
        return TestFunction(
            self.d, terms=self.terms + [(float(c), 0, (0,) * self.d)], bumps=self.bumps
        )

    def plus(self, other):
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return TestFunction(
            self.d, terms=self.terms + other.terms, bumps=self.bumps + other.bumps
        )

    # evaluation -----------------------------------------------------------

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        xb = x if not scalar else x.reshape(1, -1)
        out = np.zeros(xb.shape[:-1])
        for c, tp, xp in self.terms:
            term = c * (float(t) ** tp)
            mono = np.ones(xb.shape[:-1])
            for i, k in enumerate(xp):
                if k:
                    mono = mono * xb[..., i] ** k
            out = out + term * mono
        for amp, center, radius in self.bumps:
            out = out + _bump_value(xb, amp, center, radius)
        return float(out[0]) if scalar else out

    def shifted_difference(self, t, x, points):
        """phi(t, points[k]) - phi(t, x), accumulated term by term.

        Computing the difference per monomial makes the result bitwise
        invariant under adding a constant term (each constant contributes
        an exact 0.0), which the jump margins rely on.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        points = np.asarray(points, dtype=float).reshape(-1, self.d)
        out = np.zeros(points.shape[0])
        for c, tp, xp in self.terms:
            coef = c * (float(t) ** tp)
            mono_p = np.ones(points.shape[0])
            mono_x = 1.0
            for i, k in enumerate(xp):
                if k:
                    mono_p = mono_p * points[:, i] ** k
                    mono_x = mono_x * x[i] ** k
            out = out + coef * (mono_p - mono_x)
        for amp, center, radius in self.bumps:
            out = out + (
                _bump_value(points, amp, center, radius)
                - _bump_value(x.reshape(1, -1), amp, center, radius)[0]
            )
        return out

    def time_derivative(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        out = 0.0
        for c, tp, xp in self.terms:
            if tp == 0:
                continue
            mono = 1.0
            for i, k in enumerate(xp):
                if k:
                    mono *= x[i] ** k
            out += c * tp * float(t) ** (tp - 1) * mono
        return out

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        g = np.zeros(self.d)
        for c, tp, xp in self.terms:
            coef = c * (float(t) ** tp)
            for i, k in enumerate(xp):
                if k == 0:
                    continue
                mono = k
                for j, kj in enumerate(xp):
                    pw = kj - 1 if j == i else kj
                    if pw:
                        mono *= x[j] ** pw
                g[i] += coef * mono
        for amp, center, radius in self.bumps:
            g += _bump_gradient(x, amp, center, radius)
        return g

    def hessian(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        H = np.zeros((self.d, self.d))
        for c, tp, xp in self.terms:
            coef = c * (float(t) ** tp)
            for i in range(self.d):
                for j in range(self.d):
                    ki, kj = xp[i], xp[j]
                    if i == j:
                        if ki < 2:
                            continue
                        mono = ki * (ki - 1)
                        for m, km in enumerate(xp):
                            pw = km - 2 if m == i else km
                            if pw:
                                mono *= x[m] ** pw
                    else:
                        if ki == 0 or kj == 0:
                            continue
                        mono = ki * kj
                        for m, km in enumerate(xp):
                            pw = km
                            if m == i or m == j:
                                pw -= 1
                            if pw:
                                mono *= x[m] ** pw
                    H[i, j] += coef * mono
        for amp, center, radius in self.bumps:
            H += _bump_hessian(x, amp, center, radius)
        return H


def _bump_rho(x, center, radius):
    diff = x - center
    return np.sum(diff * diff, axis=-1) / (radius * radius), diff


def _bump_value(x, amp, center, radius):
    rho, _ = _bump_rho(x, center, radius)
    out = np.zeros(rho.shape)
    inside = rho < 1.0 - 1e-12
    if np.any(inside):
        out[inside] = amp * np.exp(-1.0 / (1.0 - rho[inside]))
    return out

def _bump_gradient(x, amp, center, radius):
    rho, diff = _bump_rho(x.reshape(1, -1), center, radius)
    rho = float(rho[0])
    if rho >= 1.0 - 1e-12:
        return np.zeros(x.size)
    base = amp * np.exp(-1.0 / (1.0 - rho))
    fp = -1.0 / (1.0 - rho) ** 2
    return base * fp * 2.0 * diff[0] / (radius * radius)


def _bump_hessian(x, amp, center, radius):
    d = x.size
    rho, diff = _bump_rho(x.reshape(1, -1), center, radius)
    rho = float(rho[0])
    if rho >= 1.0 - 1e-12:
        return np.zeros((d, d))
    base = amp * np.exp(-1.0 / (1.0 - rho))
    fp = -1.0 / (1.0 - rho) ** 2
    fpp = -2.0 / (1.0 - rho) ** 3
    v = diff[0]
    r2 = radius * radius
    outer = np.outer(v, v) * (4.0 / (r2 * r2))
    return base * ((fp * fp + fpp) * outer + fp * (2.0 / r2) * np.eye(d))


# ---------------------------------------------------------------------------
# pointwise operators


def drift_term(theta: OperatorPoint, u: ControlValue, spec: ProblemSpec):
    """mu_Y - mu_X . p - (1/2) tr[sigma_X sigma_X' A], the sup's objective."""
    co = spec.coefficients
    mu_y = float(np.asarray(co.mu_Y(theta.t, theta.x, theta.y, u), dtype=float))
    mu_x = np.asarray(co.mu_X(theta.t, theta.x, u), dtype=float).reshape(-1)
    sig = np.atleast_2d(np.asarray(co.sigma_X(theta.t, theta.x, u), dtype=float))
    val = mu_y - float(mu_x @ theta.p) - 0.5 * float(np.trace(sig @ sig.T @ theta.A))
    if not np.isfinite(val):
        raise FloatingPointError("nonfinite coefficient in drift term")
    return val


def volatility_mismatch(t, x, y, p, u: ControlValue, spec: ProblemSpec):
    """sigma_Y - sigma_X' p, the Brownian-direction hedging residual."""
    co = spec.coefficients
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    sy = np.asarray(co.sigma_Y(t, x, y, u), dtype=float).reshape(-1)
    sx = np.atleast_2d(np.asarray(co.sigma_X(t, x, u), dtype=float))
    out = sy - sx.T @ p
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("nonfinite coefficient in volatility mismatch")
    return out


def jump_margins(t, x, y, u: ControlValue, e, phi: TestFunction, spec: ProblemSpec):
    """Per-process margins b_i - phi(t, x + beta_i) + phi(t, x) at mark e."""
    co = spec.coefficients
    x = np.asarray(x, dtype=float).reshape(-1)
    u2e = u.u2_at(e)
    bvec = np.asarray(co.b(t, x, y, u.u1, u2e, e), dtype=float).reshape(-1)
    beta = np.atleast_2d(np.asarray(co.beta(t, x, u.u1, u2e, e), dtype=float))
    if beta.shape != (x.size, bvec.size):
        beta = beta.reshape(x.size, bvec.size)
    out = bvec - phi.shifted_difference(t, x, x[None, :] + beta.T)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("nonfinite coefficient in jump margin")
    return out


def jump_margin(t, x, y, u, e, phi, spec):
    """min_i of the per-process margins at mark e."""
    return float(np.min(jump_margins(t, x, y, u, e, phi, spec)))


def worst_jump_margin(t, x, y, u, phi, spec):
    """Infimum of the margins over all marks and processes; +inf if markless."""
    if spec.marks.n_marks == 0:
        return np.inf
    return min(jump_margin(t, x, y, u, e, phi, spec) for e in spec.marks.points)


def control_feasible(t, x, y, p, u, eps, eta, phi, spec):
    """|volatility mismatch| <= eps and every jump margin >= eta."""
    if float(np.linalg.norm(volatility_mismatch(t, x, y, p, u, spec))) > eps:
        return False
    for e in spec.marks.points:
        if jump_margin(t, x, y, u, e, phi, spec) < eta:
            return False
    return True


def hamiltonian(theta: OperatorPoint, phi, eps, eta, grid: ControlGrid, spec):
    """sup of the drift term over feasible grid controls; -inf if none pass.

    Nondecreasing in eps and nonincreasing in eta for a fixed grid.  Ties
    keep the first grid index.
    """
    best = -np.inf
    for u in grid:
        if control_feasible(theta.t, theta.x, theta.y, theta.p, u, eps, eta, phi, spec):
            v = drift_term(theta, u, spec)
            if v > best:
                best = v
    return best


def hamiltonian_with_count(theta, phi, eps, eta, grid, spec):
    """(value, number of feasible grid controls); value is -inf when 0."""
    best, count = -np.inf, 0
    for u in grid:
        if control_feasible(theta.t, theta.x, theta.y, theta.p, u, eps, eta, phi, spec):
            count += 1
            v = drift_term(theta, u, spec)
            if v > best:
                best = v
    return best, count


def apply_generator(t, x, u: ControlValue, phi: TestFunction, spec):
    """phi_t + mu_X . Dphi + (1/2) tr[sigma_X sigma_X' D^2 phi] at (t, x)."""
    co = spec.coefficients
    x = np.asarray(x, dtype=float).reshape(-1)
    mu_x = np.asarray(co.mu_X(t, x, u), dtype=float).reshape(-1)
    sig = np.atleast_2d(np.asarray(co.sigma_X(t, x, u), dtype=float))
    return (
        phi.time_derivative(t, x)
        + float(mu_x @ phi.gradient(t, x))
        + 0.5 * float(np.trace(sig @ sig.T @ phi.hessian(t, x)))
    )


def nonlocal_term(t, x, u: ControlValue, phi, spec):
    """sum_i sum_e (phi(t, x + beta_i) - phi(t, x)) m_i(e)."""
    marks = spec.marks
    if marks.n_marks == 0:
        return 0.0
    co = spec.coefficients
    x = np.asarray(x, dtype=float).reshape(-1)
    total = 0.0
    for j, e in enumerate(marks.points):
        u2e = u.u2[float(e)] if float(e) in u.u2 else np.zeros(spec.n)
        beta = np.atleast_2d(np.asarray(co.beta(t, x, u.u1, u2e, e), dtype=float))
        beta = beta.reshape(x.size, marks.n_processes)
        diffs = phi.shifted_difference(t, x, x[None, :] + beta.T)  # (I,)
        total += float(np.sum(diffs * marks.weights[:, j]))
    return total


def control_form_hamiltonian(t, x, p, A, phi, grid: ControlGrid, spec):
    """sup_u of -nonlocal - mu_X . p - (1/2) tr[sigma sigma' A] (control form)."""
    co = spec.coefficients
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    best = -np.inf
    for u in grid:
        mu_x = np.asarray(co.mu_X(t, x, u), dtype=float).reshape(-1)
        sig = np.atleast_2d(np.asarray(co.sigma_X(t, x, u), dtype=float))
        v = (
            -nonlocal_term(t, x, u, phi, spec)
            - float(mu_x @ p)
            - 0.5 * float(np.trace(sig @ sig.T @ A))
        )
        if v > best:
            best = v
    return best


# ---------------------------------------------------------------------------
# semi-limit surrogates


@dataclass(frozen=True, eq=False)
class RelaxationSchedule:
    """Finite surrogate for the semi-limit index set.

    Each sequence is strictly decreasing with positive final entry; the
    level index advances all four together (shorter sequences clamp at
    their last value).  At every level the unperturbed argument is always
    evaluated alongside the sampled perturbations, which yields

        hamiltonian_lower <= hamiltonian(theta, phi, eps_f, eta_f)
                          <= hamiltonian_upper

    at the final entries (eps_f, eta_f), and monotone growth of the upper
    (shrinkage of the lower) value under schedule extension.
    """

    eps_sequence: tuple
    eta_sequence: tuple
    theta_radii: tuple
    phi_scales: tuple
    n_samples: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("eps_sequence", "eta_sequence", "theta_radii", "phi_scales"):
            seq = tuple(float(v) for v in getattr(self, name))
            if not seq:
                raise ValueError(f"{name} must be nonempty")
            if any(b >= a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name} must be strictly decreasing")
            if seq[-1] <= 0.0:
                raise ValueError(f"{name} must end positive")
            object.__setattr__(self, name, seq)
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")

    @property
    def n_levels(self):
        return max(
            len(self.eps_sequence),
            len(self.eta_sequence),
            len(self.theta_radii),
            len(self.phi_scales),
        )

    def level(self, k):
        def pick(seq):
            return seq[min(k, len(seq) - 1)]

        return (
            pick(self.eps_sequence),
            pick(self.eta_sequence),
            pick(self.theta_radii),
            pick(self.phi_scales),
        )


def perturb_point(theta: OperatorPoint, radius, T, rng):
    t = float(np.clip(theta.t + radius * rng.uniform(-1, 1), 0.0, T))
    x = theta.x + radius * rng.uniform(-1, 1, size=theta.d)
    y = theta.y + radius * rng.uniform(-1, 1)
    p = theta.p + radius * rng.uniform(-1, 1, size=theta.d)
    dA = rng.uniform(-1, 1, size=(theta.d, theta.d))
    A = theta.A + radius * 0.5 * (dA + dA.T)
    return OperatorPoint(t, x, y, p, A)


def perturb_test_function(phi: TestFunction, scale, center, rng):
    """phi plus a small random polynomial and a small bump near `center`."""
    d = phi.d
    extra = []
    for axis in range(d):
        xp1 = [0] * d
        xp1[axis] = 1
        xp2 = [0] * d
        xp2[axis] = 2
        extra.append((scale * rng.uniform(-1, 1), 0, tuple(xp1)))
        extra.append((scale * rng.uniform(-1, 1), 0, tuple(xp2)))
    extra.append((scale * rng.uniform(-1, 1), 1, (0,) * d))
    bump_center = np.asarray(center, dtype=float).reshape(d) + rng.uniform(
        -0.5, 0.5, size=d
    )
    bump = (scale * rng.uniform(-1, 1), bump_center, 2.0)
    return TestFunction(d, terms=phi.terms + extra, bumps=phi.bumps + [bump])


def _schedule_values(theta, phi, schedule, grid, spec):
    rng = np.random.default_rng(schedule.seed)
    vals = []
    for k in range(schedule.n_levels):
        eps, eta, radius, scale = schedule.level(k)
        vals.append(hamiltonian(theta, phi, eps, eta, grid, spec))
        for _ in range(schedule.n_samples):
            th = perturb_point(theta, radius, spec.T, rng)
            ps = perturb_test_function(phi, scale, theta.x, rng)
            vals.append(hamiltonian(th, ps, eps, eta, grid, spec))
    return vals


def hamiltonian_upper(theta, phi, schedule: RelaxationSchedule, grid, spec):
    """Max of the Hamiltonian over the schedule's evaluation set."""
    return max(_schedule_values(theta, phi, schedule, grid, spec))


def hamiltonian_lower(theta, phi, schedule: RelaxationSchedule, grid, spec):
    """Min of the Hamiltonian over the schedule's evaluation set."""
    return min(_schedule_values(theta, phi, schedule, grid, spec))


# ---------------------------------------------------------------------------
# boundary gap


@dataclass(frozen=True, eq=False)
class BoundaryGapResult:
    """Lattice rendering of the attainable (r, s) set and its gap.

    delta = dist(0, complement) - dist(0, set) on the lattice, with +inf
    when the set fills the whole box and -inf when it misses it entirely.
    """

    delta: float
    dist_inside: float
    dist_outside: float
    in_set: np.ndarray
    grids: tuple
    tolerance: float

    @property
    def saturated(self):
        return not np.isfinite(self.delta)

    def ball_indices(self, radius):
        """Lattice points with |(r, s)| <= radius, as an index tuple."""
        mesh = np.meshgrid(*self.grids, indexing="ij")
        norm2 = sum(m * m for m in mesh)
        return np.nonzero(norm2 <= radius * radius)


def boundary_gap(
    t,
    x,
    y,
    p,
    phi,
    grid: ControlGrid,
    spec: ProblemSpec,
    box,
    counts,
    tolerance=None,
):
    """Classify a lattice over the (r, s) box against the attainable set.

    A lattice point (r, s) is attainable when some grid control u has
    |volatility_mismatch - r| <= tolerance and every jump margin >= s.
    `box` is a (d+1, 2) array over the d mismatch axes plus the margin
    axis and must contain 0 in its interior; `counts` gives lattice nodes
    per axis.  Default tolerance is half the lattice cell diagonal over
    the mismatch axes.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    d = x.size
    box = np.asarray(box, dtype=float).reshape(d + 1, 2)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (d + 1,))
    if np.any(box[:, 0] >= 0.0) or np.any(box[:, 1] <= 0.0):
        raise ValueError("search box must contain 0 in its interior")
    axes = [np.linspace(box[i, 0], box[i, 1], counts[i]) for i in range(d + 1)]
    spacings = [(box[i, 1] - box[i, 0]) / (counts[i] - 1) for i in range(d + 1)]
    if tolerance is None:
        tolerance = 0.5 * float(np.sqrt(np.sum(np.asarray(spacings[:d]) ** 2)))

    mismatches = []
    margins = []
    for u in grid:
        mismatches.append(volatility_mismatch(t, x, y, p, u, spec))
        margins.append(worst_jump_margin(t, x, y, u, phi, spec))

    mesh = np.meshgrid(*axes, indexing="ij")
    r_stack = np.stack(mesh[:d], axis=-1)  # (..., d)
    s_grid = mesh[d]
    in_set = np.zeros(s_grid.shape, dtype=bool)
    for nvec, mg in zip(mismatches, margins):
        dist_r = np.sqrt(np.sum((r_stack - nvec) ** 2, axis=-1))
        in_set |= (dist_r <= tolerance) & (s_grid <= mg)

    norms = np.sqrt(sum(m * m for m in mesh))
    dist_in = float(norms[in_set].min()) if in_set.any() else np.inf
    outside = ~in_set
    dist_out = float(norms[outside].min()) if outside.any() else np.inf

    if not outside.any():
        delta = np.inf
    elif not in_set.any():
        delta = -np.inf
    else:
        delta = dist_out - dist_in
    return BoundaryGapResult(
        delta=delta,
        dist_inside=dist_in,
        dist_outside=dist_out,
        in_set=in_set,
        grids=tuple(axes),
        tolerance=float(tolerance),
    )


# ---------------------------------------------------------------------------
# audit dump


def dump_operator_rows(rows, path):
    """Write (operator, point, value, admissible_count) rows to CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["operator", "point", "value", "admissible_count"])
        for op, point, value, count in rows:
            writer.writerow([op, point, repr(float(value)), count])
