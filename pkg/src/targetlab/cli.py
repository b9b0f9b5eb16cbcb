"""Experiment runner: one subcommand per experiment kind.

Every run writes its artifacts plus a manifest.json holding the resolved
configuration, package and interpreter versions, and timings, so any
deterministic run can be reproduced bit for bit from the manifest alone.

Exit codes: 0 success, 2 configuration or parse error, 3 validation
failure, 4 numerical failure (CFL refusal, budget, non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path
import numpy as np

from . import __version__
from .model import ControlGrid, ControlValue, control_norm, validate_problem
from .operators import (
    OperatorPoint,
    TestFunction,
    boundary_gap,
    control_form_hamiltonian,
    apply_generator,
    hamiltonian_with_count,
)
from .certify import (
    ConfigurationError,
    certify_subsolution,
    certify_supersolution,
    exponential_subsolution,
    exponential_supersolution,
    sandwich_check,
)
from .embed import embedded_target_spec, lifted_grid
from .pde import (
    CflError,
    ConstraintOperator,
    ConvergenceError,
    SpaceTimeGrid,
    cfl_check,
    solve_hjb,
    solve_terminal,
)
from .problemfile import ExperimentConfig, ProblemFileError, load_experiment, load_problem
from .sde import ConstantPolicy, SimulationError, simulate, check_admissibility
from .tree import (
    RepresentationError,
    TreeBudgetError,
    build_tree,
    martingale_representation,
    target_value,
    tree_expectation,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

_NUMERICAL_ERRORS = (
    CflError,
    ConvergenceError,
    TreeBudgetError,
    RepresentationError,
    SimulationError,
    ConfigurationError,
)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="targetlab",
        description="target-problem experiments: validate, simulate, operators, "
        "solve, tree, certify, embed, sweep",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in ("validate", "simulate", "operators", "solve", "tree", "certify", "embed", "sweep"):
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = load_experiment(args.config)
        if config.kind != args.kind:
            raise ProblemFileError(
                f"config kind {config.kind!r} does not match subcommand {args.kind!r}"
            )
        seed = config.seed if args.seed is None else args.seed
        workers = config.workers if args.workers is None else args.workers
        out_dir = args.out or config.out
        if out_dir is None:
            raise ProblemFileError("no output directory (use --out or config)")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        spec = load_problem(config.problem_path)
    except (ProblemFileError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = time.time()
    try:
        runner = _RUNNERS[config.kind]
        status, summary, outputs = runner(spec, config, seed, workers, out)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, CflError):
            print(f"required dt bound: {exc.dt_bound:.9g}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ProblemFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    _write_manifest(out, config, seed, workers, outputs, time.time() - started)
    (out / "summary.txt").write_text(summary)
    print(summary)
    return status


def _write_manifest(out, config: ExperimentConfig, seed, workers, outputs, elapsed):
    manifest = {
        "kind": config.kind,
        "config_path": config.config_path,
        "problem_path": config.problem_path,
        "seed": seed,
        "workers": workers,
        "sections": config.sections,
        "outputs": outputs,
        "versions": {
            "targetlab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "elapsed_seconds": elapsed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _floats(text, default=None):
    if text is None:
        return default
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _control_grid(spec, section):
    """ControlGrid from a [grid] section (defaults to the spec's u1 box)."""
    u1_box = spec.u1_box
    if "u1" in section:
        vals = _floats(section["u1"])
        u1_box = (
            np.tile(vals, spec.q).reshape(spec.q, 2)
            if vals.size == 2
            else vals.reshape(spec.q, 2)
        )
    counts = int(section.get("u1_counts", 3))
    u2_values = _floats(section.get("u2_values"), np.zeros(0))
    radius = float(section.get("radius", np.inf))
    return ControlGrid.lattice(
        spec.marks,
        u1_box,
        counts,
        u2_values=tuple(u2_values) if spec.n else (),
        truncation_radius=radius,
    )


def _phi_from_name(name, d):
    if name == "coordinate":
        return TestFunction.coordinate(d)
    if name == "quadratic":
        return TestFunction(d, terms=[(1.0, 0, tuple(2 if i == j else 0 for i in range(d))) for j in range(d)])
    if name.startswith("constant:"):
        return TestFunction.constant(d, float(name.split(":", 1)[1]))
    raise ProblemFileError(f"unknown test function {name!r}")


def _g_operator(spec, text):
    if text in (None, "", "none"):
        return None
    if text.startswith("const:"):
        return ConstraintOperator.constant(float(text.split(":", 1)[1]))
    if text.startswith("payoff-gap:"):
        return ConstraintOperator.payoff_gap(spec.g, float(text.split(":", 1)[1]))
    raise ProblemFileError(f"unknown G operator {text!r}")


# ---------------------------------------------------------------------------
# runners (each returns status, summary text, list of artifact names)


def _run_validate(spec, config, seed, workers, out):
    sec = config.section("validate")
    n_samples = int(sec.get("n_samples", 200))
    slack = float(sec.get("slack", 1e-6))
    report = validate_problem(spec, n_samples, seed, slack=slack)
    _write_csv(
        out / "violations.csv",
        ["kind", "detail"],
        [[v.kind, v.detail] for v in report.violations],
    )
    summary = report.summary()
    status = EXIT_OK if report.ok else EXIT_VALIDATION
    return status, summary, ["violations.csv"]


def _run_simulate(spec, config, seed, workers, out):
    sec = config.section("simulate")
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    y = float(sec.get("y", 0.0))
    n_paths = int(sec.get("n_paths", 100))
    n_steps = int(sec.get("n_steps", 50))
    u1 = _floats(sec.get("u1", None))
    u1 = np.zeros(spec.q) if u1 is None else u1
    u = ControlValue(u1, {float(e): np.zeros(spec.n) for e in spec.marks.points})
    bundle = simulate(
        spec, ConstantPolicy(u), t, x, y, n_paths, n_steps, seed, n_workers=workers
    )
    bundle.to_csv(out / "paths.csv")
    n_jumps = sum(len(lg) for lg in bundle.jump_log)
    summary = (
        f"simulated {n_paths} paths x {n_steps} steps from t={t:g}\n"
        f"jumps realized: {n_jumps}\n"
        f"mean X(T): {bundle.X[:, -1].mean(axis=0)}\n"
        f"mean Y(T): {bundle.Y[:, -1].mean():.9g}\n"
    )
    return EXIT_OK, summary, ["paths.csv"]


def _run_operators(spec, config, seed, workers, out):
    sec = config.section("operators")
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    y = float(sec.get("y", 0.0))
    p = _floats(sec.get("p", "0"), np.zeros(spec.d))
    A = np.diag(_floats(sec.get("a", "0"), np.zeros(spec.d)))
    phi = _phi_from_name(sec.get("phi", "quadratic"), spec.d)
    eps = float(sec.get("eps", 0.1))
    eta = float(sec.get("eta", 0.0))
    grid = _control_grid(spec, config.section("grid"))
    theta = OperatorPoint(t, x, y, p, A)

    rows = []
    point = f"t={t:g} x={x} y={y:g}"
    H, count = hamiltonian_with_count(theta, phi, eps, eta, grid, spec)
    rows.append([f"H(eps={eps:g},eta={eta:g})", point, _fmt(H), count])
    rows.append([
        "generator(first control)", point,
        _fmt(apply_generator(t, x, grid.values[0], phi, spec)), "",
    ])
    rows.append([
        "control_form_H", point,
        _fmt(control_form_hamiltonian(t, x, p, A, phi, grid, spec)), "",
    ])
    box = np.array([[-1.0, 1.0]] * (spec.d + 1))
    gap = boundary_gap(t, x, y, p, phi, grid, spec, box, 11)
    rows.append(["boundary_gap", point, _fmt(gap.delta), int(gap.in_set.sum())])
    _write_csv(out / "operators.csv", ["operator", "point", "value", "admissible_count"], rows)
    summary = "\n".join(f"{r[0]}: {r[2]}" for r in rows)
    return EXIT_OK, summary, ["operators.csv"]


def _run_solve(spec, config, seed, workers, out):
    sec = config.section("solve")
    form = sec.get("form", "control")
    x_box = _floats(sec.get("x", "-5 5"))
    nx = int(sec.get("nx", 200))
    n_steps = int(sec.get("n_steps", 100))
    t0 = float(sec.get("t0", 0.0))
    boundary = sec.get("boundary", "clamp")
    eps = float(sec.get("eps", 1e-9))
    eta = float(sec.get("eta", 1e-9))
    G = _g_operator(spec, sec.get("g_operator", "none"))
    grid = SpaceTimeGrid(t0, spec.T, n_steps, axes=((x_box[0], x_box[1], nx),), boundary=boundary)
    controls = _control_grid(spec, config.section("grid"))

    terminal = solve_terminal(
        spec, G or ConstraintOperator.constant(-1.0), grid, delta_infinite=True
    )
    result = solve_hjb(spec, terminal.values, grid, form, controls, G=G, eps=eps, eta=eta)
    result.field.to_csv(out / "field.csv")
    probe = float(sec.get("probe_x", 0.5 * (x_box[0] + x_box[1])))
    v = result.field.at(t0, probe)
    summary = (
        f"{form}-form solve on {nx} x {n_steps} grid\n"
        f"{result.certificate.summary()}\n"
        f"terminal layer: {terminal.iterations} sweeps, residual {terminal.max_residual:.3g}\n"
        f"empty-admissible nodes: {result.empty_admissible_nodes}\n"
        f"value at (t0, {probe:g}): {v:.9g}\n"
    )
    return EXIT_OK, summary, ["field.csv"]


def _run_tree(spec, config, seed, workers, out):
    sec = config.section("tree")
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    depth = int(sec.get("depth", 4))
    mode = sec.get("mode", "product")
    grid = _control_grid(spec, config.section("grid"))
    tree = build_tree(spec, t, x, depth, grid, mode=mode)
    profile = target_value(tree)
    rows = [
        [node, int(tree.level[node]), _fmt(tree.node_time(node))]
        + [_fmt(v) for v in tree.states[node]]
        + [_fmt(profile.values[node])]
        for node in range(tree.n_nodes)
    ]
    _write_csv(
        out / "profile.csv",
        ["node", "level", "t"] + [f"x{i}" for i in range(spec.d)] + ["min_y"],
        rows,
    )
    summary = (
        f"{mode} tree, depth {depth}: {tree.n_nodes} nodes, {len(tree.leaves)} leaves\n"
        f"root minimal y: {profile.root_value:.9g}\n"
    )
    return EXIT_OK, summary, ["profile.csv"]


def _run_certify(spec, config, seed, workers, out):
    sec = config.section("certify")
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    depth = int(sec.get("depth", 4))
    mode = sec.get("mode", "product")
    grid = _control_grid(spec, config.section("grid"))
    tree = build_tree(spec, t, x, depth, grid, mode=mode)

    sup = exponential_supersolution(spec, grid)
    sub = exponential_subsolution(spec)
    cert_sup = certify_supersolution(sup, tree)
    cert_sub = certify_subsolution(sub, tree)
    profile = target_value(tree)
    sandwich = sandwich_check(
        [sub] if cert_sub.certified else [],
        [sup] if cert_sup.certified else [],
        tree,
        profile.values,
    )
    rows = [
        ["exp-super", cert_sup.verdict, cert_sup.checked_nodes, json.dumps(cert_sup.witness)],
        ["exp-sub", cert_sub.verdict, cert_sub.checked_nodes, json.dumps(cert_sub.witness)],
        ["sandwich", "ok" if sandwich.ok else "violated", sandwich.checked_nodes,
         json.dumps(len(sandwich.violations))],
    ]
    _write_csv(out / "certificates.csv", ["candidate", "verdict", "checked_nodes", "witness"], rows)
    summary = "\n".join(f"{r[0]}: {r[1]}" for r in rows)
    return EXIT_OK, summary, ["certificates.csv"]


def _run_embed(spec, config, seed, workers, out):
    sec = config.section("embed")
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    depth = int(sec.get("depth", 6))
    nu_grid = _control_grid(spec, config.section("grid"))
    embedded = embedded_target_spec(spec)
    tree = build_tree(embedded, t, x, depth, lifted_grid(spec, nu_grid), mode="complete")
    profile = target_value(tree, representation=True)
    dp_root, _ = tree_expectation(tree, minimize=True)
    gap = abs(profile.root_value - dp_root)
    _write_csv(
        out / "embed.csv",
        ["quantity", "value"],
        [
            ["target_root", _fmt(profile.root_value)],
            ["dp_root", _fmt(dp_root)],
            ["abs_gap", _fmt(gap)],
        ],
    )
    summary = (
        f"complete tree depth {depth}: {tree.n_nodes} nodes\n"
        f"target root = {profile.root_value:.12g}\n"
        f"DP root     = {dp_root:.12g}\n"
        f"gap         = {gap:.3g}\n"
    )
    return EXIT_OK, summary, ["embed.csv"]


def _run_sweep(spec, config, seed, workers, out):
    sec = config.section("sweep")
    radii = _floats(sec.get("radii", "0.5 1 2 4"))
    t = float(sec.get("t", 0.0))
    x = _floats(sec.get("x", "0"), np.zeros(spec.d))
    y = float(sec.get("y", 0.0))
    p = _floats(sec.get("p", "0"), np.zeros(spec.d))
    A = np.diag(_floats(sec.get("a", "0"), np.zeros(spec.d)))
    eps = float(sec.get("eps", 0.1))
    eta = float(sec.get("eta", 0.0))
    phi = _phi_from_name(sec.get("phi", "quadratic"), spec.d)
    counts = int(config.section("grid").get("u1_counts", 3))
    u2_base = _floats(config.section("grid").get("u2_values"), np.zeros(0))
    theta = OperatorPoint(t, x, y, p, A)

    rows = []
    for r in radii:
        box = np.stack([-r * np.ones(spec.q), r * np.ones(spec.q)], axis=1)
        grid = ControlGrid.lattice(
            spec.marks, box, counts,
            u2_values=tuple(r * u2_base) if spec.n else (),
            truncation_radius=float(2 * r * (1 + spec.q)),
        )
        H, count = hamiltonian_with_count(theta, phi, eps, eta, grid, spec)
        rows.append([_fmt(r), _fmt(H), count, len(grid)])
    _write_csv(out / "sweep.csv", ["radius", "H", "admissible", "grid_size"], rows)
    summary = "\n".join(f"radius {r[0]}: H = {r[1]} ({r[2]} admissible)" for r in rows)
    return EXIT_OK, summary, ["sweep.csv"]


_RUNNERS = {
    "validate": _run_validate,
    "simulate": _run_simulate,
    "operators": _run_operators,
    "solve": _run_solve,
    "tree": _run_tree,
    "certify": _run_certify,
    "embed": _run_embed,
    "sweep": _run_sweep,
}


if __name__ == "__main__":
    sys.exit(main())
