"""Problem description for controlled jump-diffusion target problems.

A problem couples a state process X in R^d and a scalar account process Y,
both driven by a d-dimensional Brownian motion and I marked point processes
with marks in a finite set E.  Controls have two parts: a vector u1 in a box
U1 of R^q and a per-mark vector u2(e) in R^n.

Coefficient evaluators follow numpy broadcasting over the leading axes of
x and y (a constant evaluator may return an unbatched array; callers
broadcast).  Signatures:

    mu_X(t, x, u)            -> (..., d)
    sigma_X(t, x, u)         -> (..., d, d)
    beta(t, x, u1, u2e, e)   -> (..., d, I)
    mu_Y(t, x, y, u)         -> (...,)
    sigma_Y(t, x, y, u)      -> (..., d)
    b(t, x, y, u1, u2e, e)   -> (..., I)

where u is a ControlValue and u2e = u.u2[e].
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

__all__ = [
    "MarkSpace",
    "ControlValue",
    "ControlGrid",
    "Coefficients",
    "ProblemSpec",
    "ValidationReport",
    "Violation",
    "control_norm",
    "validate_problem",
    "constant_coefficient",
    "affine_coefficient",
    "table_coefficient",
    "make_payoff",
    "PAYOFFS",
]


class DomainError(ValueError):
    """A value lies outside the domain a contract requires."""


# ---------------------------------------------------------------------------
# mark space


@dataclass(frozen=True, eq=False)
class MarkSpace:
    """Finite mark set E with per-process weights m_i(e) > 0.

    points   : (M,) array of scalar marks
    weights  : (I, M) array, weights[i, j] = m_i(points[j])
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        if w.shape[1] != pts.shape[0]:
            raise ValueError(
                f"weights shape {w.shape} does not match {pts.shape[0]} marks"
            )
        if pts.shape[0] != np.unique(pts).shape[0]:
            raise ValueError("mark points must be distinct")
        if pts.size and not np.all(w > 0.0):
            # support condition: every mark is charged by every process
            raise ValueError("every mark needs m_i(e) > 0 for every process")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(pts)):
            raise ValueError("marks and weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, n_processes=0):
        return cls(np.zeros(0), np.zeros((n_processes, 0)))

    @property
    def n_marks(self):
        return self.points.shape[0]

    @property
    def n_processes(self):
        return self.weights.shape[0]

    def total_mass(self):
        """m_hat(E) = sum_i sum_e m_i(e)."""
        return float(self.weights.sum())

    def process_mass(self, i):
        """m_i(E)."""
        return float(self.weights[i].sum())

    def mhat_per_mark(self):
        """(M,) array of m_hat({e}) = sum_i m_i(e)."""
        return self.weights.sum(axis=0)

    def index_of(self, e):
        hits = np.nonzero(self.points == e)[0]
        if hits.size == 0:
            raise DomainError(f"mark {e!r} is not in the mark space")
        return int(hits[0])


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True, eq=False)
class ControlValue:
    """One control point u = (u1, u2): u1 in R^q, u2 maps each mark to R^n."""

    u1: np.ndarray
    u2: dict

    def __post_init__(self):
        object.__setattr__(self, "u1", np.asarray(self.u1, dtype=float).reshape(-1))
        object.__setattr__(
            self,
            "u2",
            {float(e): np.asarray(v, dtype=float).reshape(-1) for e, v in self.u2.items()},
        )

    @classmethod
    def pure(cls, u1):
        """Control with empty mark part."""
        return cls(np.asarray(u1, dtype=float), {})

    def u2_at(self, e):
        try:
            return self.u2[float(e)]
        except KeyError:
            raise DomainError(f"control has no u2 value for mark {e!r}") from None

    def u2_stack(self, marks: MarkSpace):
        """(M, n) array of u2 values aligned with marks.points."""
        if marks.n_marks == 0:
            return np.zeros((0, 0))
        return np.stack([self.u2_at(e) for e in marks.points])

    def close_to(self, other, tol=0.0):
        if self.u1.shape != other.u1.shape or set(self.u2) != set(other.u2):
            return False
        if np.max(np.abs(self.u1 - other.u1), initial=0.0) > tol:
            return False
        return all(
            np.max(np.abs(self.u2[e] - other.u2[e]), initial=0.0) <= tol for e in self.u2
        )


def control_norm(u: ControlValue, marks: MarkSpace):
    """|u1| + (sum_i sum_e |u2(e)|^2 m_i(e))^(1/2), Euclidean norms throughout."""
    base = float(np.linalg.norm(u.u1))
    if marks.n_marks == 0:
        return base
    stack = u.u2_stack(marks)          # (M, n)
    sq = np.sum(stack * stack, axis=1)  # (M,)
    return base + float(np.sqrt(np.sum(sq * marks.mhat_per_mark())))


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Finite stand-in for the (unbounded) control set.

    values             : nonempty list of distinct ControlValue
    truncation_radius  : bound on the control norm the grid covers
    """

    values: tuple
    truncation_radius: float

    def __post_init__(self):
        vals = tuple(self.values)
        if not vals:
            raise ValueError("control grid must be nonempty")
        for i, a in enumerate(vals):
            for b in vals[i + 1 :]:
                if a.close_to(b):
                    raise ValueError("control grid entries must be pairwise distinct")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "truncation_radius", float(self.truncation_radius))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def index_of(self, u: ControlValue, tol=0.0):
        for k, v in enumerate(self.values):
            if v.close_to(u, tol):
                return k
        raise DomainError("control value is not on the grid")

    @classmethod
    def singleton(cls, u: ControlValue):
        return cls((u,), truncation_radius=np.inf)

    @classmethod
    def lattice(
        cls,
        marks: MarkSpace,
        u1_box,
        u1_counts,
        u2_values=(),
        truncation_radius=np.inf,
        max_size=20000,
    ):
        """Uniform u1 lattice over a box, crossed with per-mark u2 lattice values.

        u1_box     : (q, 2) array of per-coordinate bounds
        u1_counts  : per-coordinate node counts (int or sequence)
        u2_values  : values taken by every u2 component (same list for each
                     mark and component); empty means u2 = 0 everywhere
        Entries with control norm above truncation_radius are dropped.
        """
        u1_box = np.atleast_2d(np.asarray(u1_box, dtype=float))
        q = u1_box.shape[0]
        counts = np.broadcast_to(np.asarray(u1_counts, dtype=int), (q,))
        axes = [np.linspace(u1_box[i, 0], u1_box[i, 1], counts[i]) for i in range(q)]
        mesh = np.meshgrid(*axes, indexing="ij") if q else []
        u1s = (
            np.stack([m.ravel() for m in mesh], axis=1) if q else np.zeros((1, 0))
        )

        u2_values = tuple(float(v) for v in u2_values)
        n = 1 if u2_values else 0
        m_marks = marks.n_marks
        if u2_values and m_marks:
            convert = [np.array([v]) for v in u2_values]
            import itertools

            u2_choices = [
                {float(e): pick[j] for j, e in enumerate(marks.points)}
                for pick in itertools.product(convert, repeat=m_marks)
            ]
        else:
            u2_choices = [{float(e): np.zeros(n) for e in marks.points}]

        if u1s.shape[0] * len(u2_choices) > max_size:
            raise ValueError(
                f"lattice would have {u1s.shape[0] * len(u2_choices)} points "
                f"(budget {max_size})"
            )
        out = []
        for u1 in u1s:
            for u2 in u2_choices:
                cand = ControlValue(u1, dict(u2))
                if control_norm(cand, marks) <= truncation_radius:
                    out.append(cand)
        if not out:
            raise ValueError("truncation radius removed every lattice point")
        return cls(tuple(out), truncation_radius=truncation_radius)


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Evaluators for the controlled dynamics plus declared constants.

    lipschitz_L : Lipschitz/growth constant the evaluators are declared
                  to satisfy (checked by validate_problem, never assumed)
    growth_C    : optional constant bounding |mu_Y + int b dm| by C(1+|y|)
    """

    mu_X: callable
    sigma_X: callable
    beta: callable
    mu_Y: callable
    sigma_Y: callable
    b: callable
    lipschitz_L: float = 1.0
    growth_C: float | None = None

    @classmethod
    def zero(cls, d=1, n_processes=0, **kw):
        """All-zero dynamics; X and Y stay put."""
        return cls(
            mu_X=constant_coefficient(np.zeros(d)),
            sigma_X=constant_coefficient(np.zeros((d, d))),
            beta=constant_coefficient(np.zeros((d, n_processes))),
            mu_Y=constant_coefficient(0.0),
            sigma_Y=constant_coefficient(np.zeros(d)),
            b=constant_coefficient(np.zeros(n_processes)),
            **kw,
        )


def constant_coefficient(value):
    """Evaluator returning a fixed array regardless of the arguments."""
    value = np.asarray(value, dtype=float)

    def ev(*args):
        return value

    ev.kind = "constant"
    ev.value = value
    return ev


def affine_coefficient(base, x_mat=None, y_vec=None, u1_mat=None, u2_mat=None, e_vec=None):
    """Evaluator  base + x_mat.x + y_vec*y + u1_mat.u1 + u2_mat.u2e + e_vec*e.

    base determines the output shape S; each supplied matrix maps its input
    onto S (x_mat has shape S+(d,), u1_mat S+(q,), u2_mat S+(n,), y_vec and
    e_vec have shape S).  Arguments the signature does not provide are
    simply never used; passing a matrix for them is an error at call time.
    """
    base = np.asarray(base, dtype=float)
    x_mat = None if x_mat is None else np.asarray(x_mat, dtype=float)
    y_vec = None if y_vec is None else np.asarray(y_vec, dtype=float)
    u1_mat = None if u1_mat is None else np.asarray(u1_mat, dtype=float)
    u2_mat = None if u2_mat is None else np.asarray(u2_mat, dtype=float)
    e_vec = None if e_vec is None else np.asarray(e_vec, dtype=float)

    def dispatch(*args):
        if len(args) == 3:  # (t, x, u): mu_X / sigma_X
            _, x, u = args
            return (
                base
                + _affine_term(x_mat, x)
                + _affine_term(u1_mat, u.u1)
            )
        if len(args) == 4:  # (t, x, y, u): mu_Y / sigma_Y
            _, x, y, u = args
            return (
                base
                + _affine_term(x_mat, x)
                + _scalar_term(y_vec, y)
                + _affine_term(u1_mat, u.u1)
            )
        if len(args) == 5:  # (t, x, u1, u2e, e): beta
            _, x, u1, u2e, e = args
            return (
                base
                + _affine_term(x_mat, x)
                + _affine_term(u1_mat, u1)
                + _affine_term(u2_mat, u2e)
                + _scalar_term(e_vec, e)
            )
        if len(args) == 6:  # (t, x, y, u1, u2e, e): b
            _, x, y, u1, u2e, e = args
            return (
                base
                + _affine_term(x_mat, x)
                + _scalar_term(y_vec, y)
                + _affine_term(u1_mat, u1)
                + _affine_term(u2_mat, u2e)
                + _scalar_term(e_vec, e)
            )
        raise TypeError(f"affine coefficient called with {len(args)} arguments")

    dispatch.kind = "affine"
    return dispatch


def _affine_term(mat, arg):
    if mat is None:
        return 0.0
    arg = np.asarray(arg, dtype=float)
    # tensordot contracts arg's component axis against mat's trailing axis,
    # then the batch axes of arg must come first
    out = np.tensordot(arg, mat, axes=([-1], [mat.ndim - 1]))
    return out


def _scalar_term(vec, arg):
    if vec is None:
        return 0.0
    arg = np.asarray(arg, dtype=float)
    if arg.ndim == 0:
        return vec * float(arg)
    return arg[(...,) + (None,) * vec.ndim] * vec


def table_coefficient(times, values):
    """Piecewise-linear interpolation in t between tabulated constant arrays."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or values.shape[0] != times.shape[0]:
        raise ValueError("need one value array per table time")

    def ev(t, *args):
        t = float(t)
        if t <= times[0]:
            return values[0]
        if t >= times[-1]:
            return values[-1]
        j = int(np.searchsorted(times, t)) - 1
        w = (t - times[j]) / (times[j + 1] - times[j])
        return (1.0 - w) * values[j] + w * values[j + 1]

    ev.kind = "table"
    return ev


# ---------------------------------------------------------------------------
# payoffs


def _payoff_constant(params, d):
    c = float(params.get("value", 0.0))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], c)

    return g, abs(c)


def _payoff_linear(params, d):
    w = np.asarray(params.get("weights", np.ones(d)), dtype=float)
    b0 = float(params.get("offset", 0.0))

    def g(x):
        return np.asarray(x, dtype=float) @ w + b0

    return g, None


def _payoff_tanh(params, d):
    scale = float(params.get("scale", 1.0))
    shift = float(params.get("shift", 0.0))

    def g(x):
        s = np.asarray(x, dtype=float).sum(axis=-1)
        return np.tanh(scale * (s - shift))

    return g, 1.0


def _payoff_abs(params, d):
    shift = float(params.get("shift", 0.0))
    scale = float(params.get("scale", 1.0))

    def g(x):
        s = np.asarray(x, dtype=float).sum(axis=-1)
        return scale * np.abs(s - shift)

    return g, None


PAYOFFS = {
    "constant": _payoff_constant,
    "linear": _payoff_linear,
    "tanh": _payoff_tanh,
    "abs": _payoff_abs,
}


def make_payoff(name, params=None, d=1):
    """Build a named payoff; returns (evaluator, natural bound or None)."""
    try:
        factory = PAYOFFS[name]
    except KeyError:
        raise ValueError(f"unknown payoff {name!r}; known: {sorted(PAYOFFS)}") from None
    return factory(params or {}, d)


# ---------------------------------------------------------------------------
# problem spec


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything a run needs: dynamics, marks, horizon, payoff, boxes.

    The boxes bound where validation samples and where control lattices
    live; they are working windows, not hard domain walls.
    """

    coefficients: Coefficients
    marks: MarkSpace
    T: float
    g: callable
    d: int = 1
    q: int = 1
    n: int = 0
    g_bound: float | None = None
    x_box: np.ndarray | None = None
    y_box: np.ndarray | None = None
    u1_box: np.ndarray | None = None
    u2_box: np.ndarray | None = None
    neutral_control: ControlValue | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "x_box", _as_box(self.x_box, self.d, 1.0))
        object.__setattr__(self, "y_box", _as_box(self.y_box, 1, 1.0)[0])
        object.__setattr__(self, "u1_box", _as_box(self.u1_box, self.q, 1.0))
        object.__setattr__(self, "u2_box", _as_box(self.u2_box, max(self.n, 1), 1.0))

    @property
    def n_processes(self):
        return self.marks.n_processes

    def payoff(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        return np.asarray(self.g(x), dtype=float)


def _as_box(box, dim, default_half_width):
    if box is None:
        box = np.stack(
            [np.full(dim, -default_half_width), np.full(dim, default_half_width)], axis=1
        )
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = box.reshape(1, 2) if dim == 1 else np.tile(box, (dim, 1))
    if box.shape != (dim, 2) or np.any(box[:, 0] > box[:, 1]):
        raise ValueError(f"bad box of shape {box.shape} for dimension {dim}")
    return box


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    location: dict
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    n_samples: int
    seed: int
    slack: float
    violations: tuple

    @property
    def ok(self):
        return len(self.violations) == 0

    def summary(self):
        head = f"{len(self.violations)} violation(s) over {self.n_samples} samples"
        lines = [head] + [f"  [{v.kind}] {v.detail}" for v in self.violations[:20]]
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return "\n".join(lines)


def _sample_control(spec, rng):
    u1 = rng.uniform(spec.u1_box[:, 0], spec.u1_box[:, 1])
    u2 = {
        float(e): rng.uniform(spec.u2_box[: max(spec.n, 1), 0], spec.u2_box[: max(spec.n, 1), 1])[
            : spec.n
        ]
        for e in spec.marks.points
    }
    return ControlValue(u1, u2)


def validate_problem(spec: ProblemSpec, n_samples, seed, slack=1e-6):
    """Spot-check the declared growth and Lipschitz bounds on sampled points.

    Checks, at points sampled in the configured boxes,
      |mu_X| + |sigma_X| <= L (1 + |x| + |u|_U)
      |mu_Y| + |sigma_Y| <= L (1 + |y| + |u|_U)
    and difference quotients in z = (x, y) against L (1 + slack).  When
    g_bound is set, |g(x)| <= g_bound is spot-checked too.  Violations are
    report entries, never exceptions.
    """
    if n_samples < 1:
        raise ValueError("need n_samples >= 1")
    rng = np.random.default_rng(seed)
    co = spec.coefficients
    L = co.lipschitz_L
    bound = L * (1.0 + slack)
    out = []

    for k in range(n_samples):
        t = rng.uniform(0.0, spec.T)
        x = rng.uniform(spec.x_box[:, 0], spec.x_box[:, 1])
        y = float(rng.uniform(spec.y_box[0], spec.y_box[1]))
        u = _sample_control(spec, rng)
        nu = control_norm(u, spec.marks)

        mu_x = np.asarray(co.mu_X(t, x, u), dtype=float)
        sg_x = np.asarray(co.sigma_X(t, x, u), dtype=float)
        lhs_x = float(np.linalg.norm(mu_x) + np.linalg.norm(sg_x))
        rhs_x = L * (1.0 + float(np.linalg.norm(x)) + nu) * (1.0 + slack)
        if lhs_x > rhs_x:
            out.append(
                Violation(
                    "growth-X",
                    {"sample": k, "t": t, "x": x.tolist(), "y": y},
                    f"|mu_X|+|sigma_X| = {lhs_x:.6g} exceeds L(1+|x|+|u|) = {rhs_x:.6g}",
                )
            )

        mu_y = float(np.asarray(co.mu_Y(t, x, y, u), dtype=float))
        sg_y = np.asarray(co.sigma_Y(t, x, y, u), dtype=float)
        lhs_y = abs(mu_y) + float(np.linalg.norm(sg_y))
        rhs_y = L * (1.0 + abs(y) + nu) * (1.0 + slack)
        if lhs_y > rhs_y:
            out.append(
                Violation(
                    "growth-Y",
                    {"sample": k, "t": t, "x": x.tolist(), "y": y},
                    f"|mu_Y|+|sigma_Y| = {lhs_y:.6g} exceeds L(1+|y|+|u|) = {rhs_y:.6g}",
                )
            )

        # difference quotient in z = (x, y) at fixed (t, u)
        x2 = rng.uniform(spec.x_box[:, 0], spec.x_box[:, 1])
        y2 = float(rng.uniform(spec.y_box[0], spec.y_box[1]))
        dz = float(np.sqrt(np.sum((x - x2) ** 2) + (y - y2) ** 2))
        if dz > 1e-9:
            dx_quot = (
                np.linalg.norm(np.asarray(co.mu_X(t, x2, u), dtype=float) - mu_x)
                + np.linalg.norm(np.asarray(co.sigma_X(t, x2, u), dtype=float) - sg_x)
            ) / dz
            dy_quot = (
                abs(float(np.asarray(co.mu_Y(t, x2, y2, u), dtype=float)) - mu_y)
                + np.linalg.norm(np.asarray(co.sigma_Y(t, x2, y2, u), dtype=float) - sg_y)
            ) / dz
            if dx_quot > bound:
                out.append(
                    Violation(
                        "lipschitz-X",
                        {"sample": k, "t": t},
                        f"X-quotient {dx_quot:.6g} exceeds L(1+slack) = {bound:.6g}",
                    )
                )
            if dy_quot > bound:
                out.append(
                    Violation(
                        "lipschitz-Y",
                        {"sample": k, "t": t},
                        f"Y-quotient {dy_quot:.6g} exceeds L(1+slack) = {bound:.6g}",
                    )
                )

        if spec.g_bound is not None:
            gx = float(spec.payoff(x.reshape(1, -1))[0])
            if abs(gx) > spec.g_bound * (1.0 + slack):
                out.append(
                    Violation(
                        "payoff-bound",
                        {"sample": k, "x": x.tolist()},
                        f"|g(x)| = {abs(gx):.6g} exceeds declared bound {spec.g_bound:.6g}",
                    )
                )

    return ValidationReport(
        n_samples=n_samples, seed=seed, slack=slack, violations=tuple(out)
    )
