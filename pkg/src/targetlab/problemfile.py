"""Problem and experiment files: INI sections, strictly validated.

Unknown sections and unknown keys are hard errors; the full schema is
documented in the repository README.  Coefficients are chosen from named
builders (constant, affine, table) so a run is reproducible from its file
alone, with no expression parsing anywhere.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .model import (
    Coefficients,
    ControlValue,
    MarkSpace,
    ProblemSpec,
    affine_coefficient,
    constant_coefficient,
    make_payoff,
    table_coefficient,
)

__all__ = ["ProblemFileError", "load_problem", "ExperimentConfig", "load_experiment"]


class ProblemFileError(ValueError):
    pass


_COEFF_SECTIONS = ("mu_X", "sigma_X", "beta", "mu_Y", "sigma_Y", "b")

_PROBLEM_KEYS = {
    "d", "q", "n", "processes", "t_horizon", "lipschitz_l", "growth_c",
    "payoff", "payoff_params", "g_bound", "neutral_u1",
}
_MARKS_KEYS_FIXED = {"points"}
_BOX_KEYS = {"x", "y", "u1", "u2"}
_COEFF_KEYS = {"kind", "value", "base", "x", "y", "u1", "u2", "e", "times", "values"}


def _floats(text):
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ProblemFileError(f"expected numbers, got {text!r}") from exc


def _read_ini(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str.lower
    found = parser.read(path)
    if not found:
        raise ProblemFileError(f"cannot read {path}")
    return parser


def _check_keys(section_name, section, allowed):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ProblemFileError(
            f"unknown key(s) {sorted(unknown)} in section [{section_name}]"
        )


def _coeff_shapes(name, d, q, n, I):
    """(output shape, input dims for the affine blocks)."""
    shapes = {
        "mu_X": (d,),
        "sigma_X": (d, d),
        "beta": (d, I),
        "mu_Y": (),
        "sigma_Y": (d,),
        "b": (I,),
    }
    return shapes[name]


def _build_coefficient(name, section, d, q, n, I):
    _check_keys(name, section, _COEFF_KEYS)
    kind = section.get("kind", "constant")
    shape = _coeff_shapes(name, d, q, n, I)

    def reshaped(key, extra=()):
        vals = _floats(section[key])
        target = shape + tuple(extra)
        want = int(np.prod(target)) if target else 1
        if vals.size != want:
            raise ProblemFileError(
                f"[{name}] {key} needs {want} number(s) for shape {target}, got {vals.size}"
            )
        return vals.reshape(target) if target else float(vals[0])

    if kind == "constant":
        if "value" not in section:
            raise ProblemFileError(f"[{name}] constant kind needs `value`")
        return constant_coefficient(reshaped("value"))
    if kind == "affine":
        kwargs = {}
        if "base" in section:
            base = reshaped("base")
        else:
            base = np.zeros(shape) if shape else 0.0
        if "x" in section:
            kwargs["x_mat"] = reshaped("x", (d,))
        if "y" in section:
            kwargs["y_vec"] = reshaped("y")
        if "u1" in section:
            width = q if name in ("mu_X", "sigma_X", "mu_Y", "sigma_Y") else q
            kwargs["u1_mat"] = reshaped("u1", (width,))
        if "u2" in section:
            kwargs["u2_mat"] = reshaped("u2", (n,))
        if "e" in section:
            kwargs["e_vec"] = reshaped("e")
        return affine_coefficient(base, **kwargs)
    if kind == "table":
        if "times" not in section or "values" not in section:
            raise ProblemFileError(f"[{name}] table kind needs `times` and `values`")
        times = _floats(section["times"])
        rows = [
            _floats(chunk) for chunk in section["values"].split("|") if chunk.strip()
        ]
        want = int(np.prod(shape)) if shape else 1
        if len(rows) != times.size or any(r.size != want for r in rows):
            raise ProblemFileError(f"[{name}] table needs one {want}-number row per time")
        values = np.stack([r.reshape(shape) if shape else r[0] for r in rows])
        return table_coefficient(times, values)
    raise ProblemFileError(f"[{name}] unknown coefficient kind {kind!r}")


def load_problem(path):
    """Build a ProblemSpec from an INI problem file."""
    parser = _read_ini(path)
    known_sections = {"problem", "marks", "box", *_COEFF_SECTIONS}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ProblemFileError(f"unknown section(s) {sorted(unknown)}")
    if "problem" not in parser:
        raise ProblemFileError("missing [problem] section")
    prob = parser["problem"]
    _check_keys("problem", prob, _PROBLEM_KEYS)

    d = prob.getint("d", 1)
    q = prob.getint("q", 1)
    n = prob.getint("n", 0)
    I = prob.getint("processes", 0)
    T = prob.getfloat("t_horizon", 1.0)
    L = prob.getfloat("lipschitz_l", 1.0)
    growth_C = prob.getfloat("growth_c", fallback=None)
    g_bound = prob.getfloat("g_bound", fallback=None)

    if "marks" in parser:
        msec = parser["marks"]
        allowed = _MARKS_KEYS_FIXED | {f"m_{i + 1}" for i in range(I)}
        _check_keys("marks", msec, allowed)
        points = _floats(msec.get("points", ""))
        weights = []
        for i in range(I):
            key = f"m_{i + 1}"
            if key not in msec:
                raise ProblemFileError(f"[marks] missing weights {key}")
            w = _floats(msec[key])
            if w.size != points.size:
                raise ProblemFileError(f"[marks] {key} needs one weight per point")
            weights.append(w)
        marks = MarkSpace(points, np.stack(weights) if weights else np.zeros((0, points.size)))
    else:
        if I > 0:
            raise ProblemFileError("processes > 0 requires a [marks] section")
        marks = MarkSpace.empty(0)

    boxes = {}
    if "box" in parser:
        bsec = parser["box"]
        _check_keys("box", bsec, _BOX_KEYS)
        dims = {"x": d, "y": 1, "u1": q, "u2": max(n, 1)}
        for key in bsec:
            vals = _floats(bsec[key])
            dim = dims[key]
            if vals.size == 2:
                vals = np.tile(vals, dim)
            if vals.size != 2 * dim:
                raise ProblemFileError(f"[box] {key} needs 2 or {2 * dim} numbers")
            boxes[key] = vals.reshape(dim, 2)

    payoff_params = {}
    for item in prob.get("payoff_params", "").split():
        if "=" not in item:
            raise ProblemFileError("payoff_params entries look like key=value")
        k, v = item.split("=", 1)
        payoff_params[k] = float(v)
    g, natural_bound = make_payoff(prob.get("payoff", "constant"), payoff_params, d)
    if g_bound is None:
        g_bound = natural_bound

    coeffs = {}
    for name in _COEFF_SECTIONS:
        if name in parser:
            coeffs[name] = _build_coefficient(name, parser[name], d, q, n, I)
        else:
            shape = _coeff_shapes(name, d, q, n, I)
            coeffs[name] = constant_coefficient(np.zeros(shape) if shape else 0.0)

    neutral = None
    if "neutral_u1" in prob:
        u1 = _floats(prob["neutral_u1"])
        if u1.size != q:
            raise ProblemFileError(f"neutral_u1 needs {q} number(s)")
        neutral = ControlValue(u1, {float(e): np.zeros(n) for e in marks.points})

    return ProblemSpec(
        coefficients=Coefficients(
            mu_X=coeffs["mu_X"],
            sigma_X=coeffs["sigma_X"],
            beta=coeffs["beta"],
            mu_Y=coeffs["mu_Y"],
            sigma_Y=coeffs["sigma_Y"],
            b=coeffs["b"],
            lipschitz_L=L,
            growth_C=growth_C,
        ),
        marks=marks,
        T=T,
        g=g,
        d=d,
        q=q,
        n=n,
        g_bound=g_bound,
        x_box=boxes.get("x"),
        y_box=boxes.get("y").reshape(2) if "y" in boxes else None,
        u1_box=boxes.get("u1"),
        u2_box=boxes.get("u2"),
        neutral_control=neutral,
    )


# ---------------------------------------------------------------------------
# experiment configs


_KINDS = (
    "validate", "simulate", "operators", "solve",
    "tree", "certify", "embed", "sweep",
)

_EXPERIMENT_KEYS = {"kind", "problem", "seed", "out", "workers"}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    problem_path: str
    seed: int
    out: str | None
    workers: int
    sections: dict  # kind-specific raw sections (dicts of strings)
    config_path: str

    def section(self, name):
        return dict(self.sections.get(name, {}))


def load_experiment(path):
    parser = _read_ini(path)
    if "experiment" not in parser:
        raise ProblemFileError("missing [experiment] section")
    exp = parser["experiment"]
    _check_keys("experiment", exp, _EXPERIMENT_KEYS)
    kind = exp.get("kind")
    if kind not in _KINDS:
        raise ProblemFileError(f"kind must be one of {_KINDS}, got {kind!r}")
    if "problem" not in exp:
        raise ProblemFileError("experiment needs a problem file path")
    base = Path(path).parent
    problem_path = str((base / exp["problem"]).resolve())

    allowed_sections = {"experiment", "grid", kind}
    unknown = set(parser.sections()) - allowed_sections
    if unknown:
        raise ProblemFileError(
            f"unknown section(s) {sorted(unknown)} for kind {kind!r}"
        )
    sections = {
        name: dict(parser[name]) for name in parser.sections() if name != "experiment"
    }
    return ExperimentConfig(
        kind=kind,
        problem_path=problem_path,
        seed=exp.getint("seed", 0),
        out=exp.get("out", fallback=None),
        workers=exp.getint("workers", 1),
        sections=sections,
        config_path=str(Path(path).resolve()),
    )
