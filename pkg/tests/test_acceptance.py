"""Acceptance suite: one test per criterion, one printed verdict line each.

Every tolerance is pinned here, not configured elsewhere.  Run with
`pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import time
from math import exp, factorial
from pathlib import Path

import numpy as np
import pytest

from targetlab.certify import (
    certify_subsolution,
    certify_supersolution,
    exponential_subsolution,
    exponential_supersolution,
    sandwich_check,
)
from targetlab.cli import main as cli_main
from targetlab.embed import embedded_target_spec, lifted_grid, spanning_grid
from targetlab.model import ControlGrid, ControlValue, affine_coefficient
from targetlab.operators import (
    OperatorPoint,
    RelaxationSchedule,
    TestFunction,
    boundary_gap,
    hamiltonian,
    hamiltonian_lower,
    hamiltonian_upper,
    jump_margins,
)
from targetlab.pde import SpaceTimeGrid, solve_hjb
from targetlab.sde import ConstantPolicy, exp_rescaling_deviation, simulate
from targetlab.tree import (
    build_tree,
    martingale_representation,
    reconstruct_leaves,
    target_value,
    tree_expectation,
)

from conftest import grid_of, make_spec, one_mark, zero_control


def verdict(tag, ok, detail):
    line = f"criterion {tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def tanh_g(x):
    return np.tanh(np.asarray(x)[..., 0])


def controlled_jump_spec():
    """d = 1, one process, one mark; drift steered by the control."""
    return make_spec(
        marks=one_mark(e=1.0, weight=0.5), n=0,
        mu_X=affine_coefficient(np.zeros(1), u1_mat=np.eye(1)),
        sigma_X=0.6, beta=1.0, g=tanh_g, g_bound=1.0, L=2.0,
    )


def test_criterion_01_embedding_equivalence():
    started = time.perf_counter()
    base = controlled_jump_spec()
    nu_grid = grid_of(base, -1.0, 0.0, 1.0)
    emb = embedded_target_spec(base)
    tree = build_tree(emb, 0.0, [0.0], 6, lifted_grid(base, nu_grid), mode="complete")
    profile = target_value(tree, representation=True)
    dp_root, _ = tree_expectation(tree, minimize=True)
    gap = abs(profile.root_value - dp_root)
    elapsed = time.perf_counter() - started
    verdict(
        "01 embedding-equivalence",
        gap <= 1e-9 and elapsed < 10.0,
        f"gap={gap:.3g}, {tree.n_nodes} nodes, {elapsed:.2f}s",
    )


def test_criterion_02_boundary_gap_degeneracy():
    base = controlled_jump_spec()
    emb = embedded_target_spec(base)
    rng = np.random.default_rng(42)
    box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    nu = zero_control(base)
    hits = 0
    for _ in range(100):
        t = float(rng.uniform(0.0, base.T))
        x = rng.uniform(-2.0, 2.0, size=1)
        y = float(rng.uniform(-1.0, 1.0))
        p = rng.uniform(-1.5, 1.5, size=1)
        phi = TestFunction(
            1,
            terms=[
                (float(rng.uniform(-1, 1)), 0, (1,)),
                (float(rng.uniform(-0.5, 0.5)), 0, (2,)),
            ],
        )
        grid = spanning_grid(base, emb, t, x, y, p, phi, box, 9, [nu])
        res = boundary_gap(t, x, y, p, phi, grid, emb, box, 9)
        hits += res.delta == np.inf
    verdict("02 gap-degeneracy", hits == 100, f"{hits}/100 samples returned +inf")


def test_criterion_03_pde_vs_monte_carlo():
    started = time.perf_counter()
    spec = make_spec(
        marks=one_mark(e=0.0, weight=0.5), n=1, beta=1.0, g=tanh_g, g_bound=1.0
    )
    grid = SpaceTimeGrid(0.0, 1.0, 200, axes=((-8.0, 10.0, 400),))
    controls = ControlGrid.singleton(zero_control(spec))
    res = solve_hjb(spec, spec.payoff(grid.nodes(0)[:, None]), grid, "control", controls)
    v0 = res.field.at(0.0, 0.0)
    bundle = simulate(
        spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.0, 100000, 200, seed=7
    )
    samples = spec.payoff(bundle.X[:, -1, :])
    mc = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(samples.size))
    tol = max(2.0 * se, 5e-3)
    elapsed = time.perf_counter() - started
    verdict(
        "03 pde-vs-monte-carlo",
        abs(v0 - mc) <= tol and elapsed < 120.0,
        f"|V-MC|={abs(v0 - mc):.4g} <= {tol:.4g}, {elapsed:.1f}s",
    )


def _certification_model():
    """Bounded payoff, neutral control, nondecreasing Y-drift, jump growth."""
    u0 = ControlValue(np.zeros(1), {1.0: np.zeros(1)})
    return make_spec(
        marks=one_mark(e=1.0, weight=0.5), n=1,
        sigma_X=0.8, beta=0.6,
        mu_Y=affine_coefficient(0.0, y_vec=np.asarray(0.5)),
        g=tanh_g, g_bound=1.0, L=1.0, C=1.0, neutral=u0,
    )


def test_criterion_04_builtin_certification():
    spec = _certification_model()
    grid = ControlGrid.singleton(spec.neutral_control)
    tree = build_tree(spec, 0.0, [0.0], 5, grid)
    sup = exponential_supersolution(spec, grid)
    sub = exponential_subsolution(spec)
    cert_sup = certify_supersolution(sup, tree)
    cert_sub = certify_subsolution(sub, tree)

    leaf_slack = min(
        sup.value(spec.T, x) - gv
        for x, gv in zip(tree.states[tree.leaves], spec.payoff(tree.states[tree.leaves]))
    )
    corrupted = sup.shifted(-(leaf_slack + 0.25))
    cert_bad = certify_supersolution(corrupted, tree)
    refuted_at_leaf = (
        not cert_bad.certified
        and cert_bad.witness["kind"] == "terminal"
        and tree.level[cert_bad.witness["node"]] == tree.depth
    )
    verdict(
        "04 builtin-certification",
        cert_sup.certified and cert_sub.certified and refuted_at_leaf,
        f"super={cert_sup.verdict}, sub={cert_sub.verdict}, corruption witness at leaf={refuted_at_leaf}",
    )


def test_criterion_05_sandwich():
    spec = _certification_model()
    grid = ControlGrid.singleton(spec.neutral_control)
    tree = build_tree(spec, 0.0, [0.0], 5, grid)
    sup = exponential_supersolution(spec, grid)
    sub = exponential_subsolution(spec)
    assert certify_supersolution(sup, tree).certified
    assert certify_subsolution(sub, tree).certified
    profile = target_value(tree)
    report = sandwich_check([sub], [sup], tree, profile.values)
    verdict(
        "05 sandwich",
        report.ok,
        f"{len(report.violations)} violations over {report.checked_nodes} nodes",
    )


def test_criterion_06_operator_property_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(1234)
    n = 1000
    ball_triggers = 0
    h = 1e-4
    for k in range(n):
        beta_v = float(rng.uniform(-0.8, 0.8))
        b_v = float(rng.uniform(0.0, 1.0))
        spec = make_spec(
            marks=one_mark(e=1.0, weight=float(rng.uniform(0.2, 1.0))), n=1,
            mu_X=float(rng.uniform(-1, 1)),
            sigma_X=float(rng.uniform(0, 1)),
            mu_Y=affine_coefficient(0.0, u1_mat=np.array([1.0])),
            sigma_Y=affine_coefficient(np.zeros(1), u1_mat=np.eye(1)),
            beta=beta_v, b=b_v,
        )
        grid = grid_of(spec, *np.linspace(-1.0, 1.0, 5))
        phi = TestFunction(
            1,
            terms=[
                (float(rng.uniform(-1, 1)), 0, (1,)),
                (float(rng.uniform(-0.5, 0.5)), 0, (2,)),
                (float(rng.uniform(-0.5, 0.5)), 1, (1,)),
            ],
            bumps=[(float(rng.uniform(-0.3, 0.3)), rng.uniform(-1, 1, size=1), 2.0)],
        )
        theta = OperatorPoint(
            float(rng.uniform(0, 1)), rng.uniform(-1, 1, size=1),
            float(rng.uniform(-1, 1)), rng.uniform(-1, 1, size=1),
            np.asarray([[float(rng.uniform(-1, 1))]]),
        )

        # (a) monotone in eps and -eta
        e1, e2 = sorted(rng.uniform(0, 0.8, size=2))
        n2, n1 = sorted(rng.uniform(-0.8, 0.8, size=2))
        assert hamiltonian(theta, phi, e1, n1, grid, spec) <= hamiltonian(
            theta, phi, e2, n2, grid, spec
        )

        # (b) lower envelope below upper envelope
        sched = RelaxationSchedule(
            eps_sequence=(0.4, 0.2), eta_sequence=(0.3, 0.1),
            theta_radii=(0.3, 0.1), phi_scales=(0.2, 0.05),
            n_samples=1, seed=int(rng.integers(0, 2 ** 31)),
        )
        assert hamiltonian_lower(theta, phi, sched, grid, spec) <= hamiltonian_upper(
            theta, phi, sched, grid, spec
        )

        # (c) jump margins exactly invariant under constant shifts
        u = grid.values[int(rng.integers(0, len(grid)))]
        m0 = jump_margins(theta.t, theta.x, theta.y, u, 1.0, phi, spec)
        m1 = jump_margins(
            theta.t, theta.x, theta.y, u, 1.0,
            phi.plus_constant(float(rng.uniform(-50, 50))), spec,
        )
        assert np.array_equal(m0, m1)

        # (d) analytic derivatives vs central differences
        x0 = theta.x
        grad = phi.gradient(theta.t, x0)[0]
        fd = (phi.value(theta.t, x0 + h) - phi.value(theta.t, x0 - h)) / (2 * h)
        scale = max(1.0, abs(grad))
        assert abs(fd - grad) / scale <= 1e-6
        hess = phi.hessian(theta.t, x0)[0, 0]
        fd2 = (
            phi.value(theta.t, x0 + h)
            - 2 * phi.value(theta.t, x0)
            + phi.value(theta.t, x0 - h)
        ) / (h * h)
        assert abs(fd2 - hess) / max(1.0, abs(hess)) <= 1e-6

        # (e) positive gap puts a ball inside the attainable set
        res = boundary_gap(
            theta.t, theta.x, theta.y, theta.p, phi,
            grid_of(spec, *np.linspace(-1.0, 1.0, 11)), spec,
            box=[[-1.0, 1.0], [-1.0, 1.0]], counts=11,
        )
        diam = float(np.hypot(0.2, 0.2))
        if res.delta > diam:
            ball_triggers += 1
            idx = res.ball_indices(diam)
            assert bool(res.in_set[idx].all())

    elapsed = time.perf_counter() - started
    verdict(
        "06 operator-properties",
        elapsed < 30.0 and ball_triggers > 0,
        f"{n} instances, {ball_triggers} gap-ball activations, {elapsed:.1f}s",
    )


def test_criterion_07_exponential_rescaling():
    spec = make_spec(mu_Y=1.0)
    pol = ConstantPolicy(zero_control(spec))
    dev_c0 = exp_rescaling_deviation(spec, pol, 0.0, 0.0, [0.0], 0.5, 3, 64, seed=5)
    d1 = exp_rescaling_deviation(spec, pol, 1.0, 0.0, [0.0], 0.5, 3, 64, seed=5)
    d2 = exp_rescaling_deviation(spec, pol, 1.0, 0.0, [0.0], 0.5, 3, 128, seed=5)
    ratio = d2 / d1
    ok = dev_c0 <= 1e-12 and 0.4 <= ratio <= 0.6 and d1 <= 10.0 / 64
    verdict(
        "07 exponential-rescaling",
        ok,
        f"c=0 dev={dev_c0:.2g}, halving ratio={ratio:.3f}, dev={d1:.3g}",
    )


def test_criterion_08_discrete_comparison():
    rng = np.random.default_rng(2024)
    spec = make_spec(
        marks=one_mark(e=1.0, weight=0.4), n=1,
        mu_X=0.3, sigma_X=0.5, beta=0.6, g=tanh_g,
    )
    grid = SpaceTimeGrid(0.0, 1.0, 60, axes=((-3.0, 3.0, 31),))
    controls = grid_of(spec, 0.0)
    xs = grid.nodes(0)
    worst = -np.inf
    for _ in range(20):
        g1 = np.tanh(xs + rng.uniform(-1.0, 1.0)) * rng.uniform(0.5, 1.0)
        g2 = g1 + rng.uniform(0.0, 0.5, size=xs.size)
        v1 = solve_hjb(spec, g1, grid, "control", controls).field.values
        v2 = solve_hjb(spec, g2, grid, "control", controls).field.values
        worst = max(worst, float(np.max(v1 - v2)))
    verdict("08 discrete-comparison", worst <= 1e-12, f"max(V1-V2)={worst:.3g}")


def test_criterion_09_martingale_representation():
    spec = make_spec(
        marks=one_mark(e=1.0, weight=0.5), n=1,
        mu_X=0.1, sigma_X=0.7, beta=1.0,
    )
    tree = build_tree(spec, 0.0, [0.0], 6, grid_of(spec, 0.0), mode="complete")
    payoff = np.tanh(tree.states[tree.leaves][:, 0]) ** 3 + 0.4 * np.cos(
        tree.states[tree.leaves][:, 0]
    )
    rep = martingale_representation(tree, payoff)
    vals, spread = reconstruct_leaves(tree, rep)
    err = float(np.max(np.abs(vals - payoff)))
    verdict(
        "09 martingale-representation",
        err <= 1e-10 and spread <= 1e-10,
        f"max leaf error={err:.2g}, path spread={spread:.2g}",
    )


def test_criterion_10_deterministic_artifacts(tmp_path):
    root = Path(__file__).resolve().parents[1]
    zero = root / "problems" / "zero.ini"
    purejump = root / "problems" / "purejump.ini"
    controlled = root / "problems" / "drift_jump_control.ini"

    def run(kind, body, problem, out, extra=()):
        cfg = tmp_path / f"{kind}_{out}.ini"
        cfg.write_text(
            f"[experiment]\nkind = {kind}\nproblem = {problem}\nseed = 11\n\n{body}"
        )
        target = tmp_path / out
        code = cli_main([kind, "--config", str(cfg), "--out", str(target), *extra])
        assert code == 0
        return target

    checks = []
    grids = "[grid]\nu1 = -1 1\nu1_counts = 3\n\n"

    a = run("validate", "[validate]\nn_samples = 60\n", zero, "val_a")
    b = run("validate", "[validate]\nn_samples = 60\n", zero, "val_b")
    checks.append((a / "violations.csv").read_bytes() == (b / "violations.csv").read_bytes())

    sim_body = "[simulate]\nn_paths = 50\nn_steps = 40\n"
    a = run("simulate", sim_body, purejump, "sim_a")
    b = run("simulate", sim_body, purejump, "sim_b")
    c = run("simulate", sim_body, purejump, "sim_c", extra=("--workers", "4"))
    checks.append((a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes())
    checks.append((a / "paths.csv").read_bytes() == (c / "paths.csv").read_bytes())

    tree_body = grids + "[tree]\ndepth = 4\n"
    a = run("tree", tree_body, purejump, "tree_a")
    b = run("tree", tree_body, purejump, "tree_b")
    checks.append((a / "profile.csv").read_bytes() == (b / "profile.csv").read_bytes())

    embed_body = grids + "[embed]\ndepth = 5\n"
    a = run("embed", embed_body, controlled, "emb_a")
    b = run("embed", embed_body, controlled, "emb_b")
    checks.append((a / "embed.csv").read_bytes() == (b / "embed.csv").read_bytes())

    solve_body = "[solve]\nform = control\nx = -6 8\nnx = 81\nn_steps = 50\n"
    a = run("solve", solve_body, purejump, "solve_a")
    b = run("solve", solve_body, purejump, "solve_b")
    checks.append((a / "field.csv").read_bytes() == (b / "field.csv").read_bytes())

    verdict(
        "10 deterministic-artifacts",
        all(checks),
        f"{sum(checks)}/{len(checks)} byte-identical artifact comparisons",
    )
