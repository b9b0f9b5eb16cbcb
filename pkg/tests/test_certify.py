import numpy as np
import pytest

from targetlab.certify import (
    CandidateFunction,
    ConfigurationError,
    certify_subsolution,
    certify_supersolution,
    exponential_subsolution,
    exponential_supersolution,
    sandwich_check,
)
from targetlab.model import ControlGrid, ControlValue, affine_coefficient
from targetlab.tree import build_tree, target_value, y_transition

from conftest import grid_of, make_spec, one_mark, zero_control


def const_candidate(c, side):
    return CandidateFunction(
        fn=lambda t, x: c, growth_C=abs(c) + 1.0, growth_n=0,
        terminal_side=side, name=f"const({c})",
    )


def bounded_spec(**kw):
    defaults = dict(
        marks=one_mark(weight=0.5), n=1, sigma_X=0.8,
        g=lambda x: np.tanh(x[..., 0]), g_bound=1.0,
    )
    defaults.update(kw)
    return make_spec(**defaults)


class TestSupersolution:
    def test_constant_above_payoff_certifies_with_frozen_y(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        cert = certify_supersolution(const_candidate(2.0, "above-g"), tree)
        assert cert.certified
        assert set(cert.maintaining_controls) == set(int(v) for v in tree.interior)

    def test_terminal_violation_refutes_with_leaf_witness(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        cert = certify_supersolution(const_candidate(-2.0, "above-g"), tree)
        assert not cert.certified
        assert cert.witness["kind"] == "terminal"
        leaf = cert.witness["node"]
        assert tree.level[leaf] == tree.depth

    def test_growth_violation_refutes(self):
        spec = bounded_spec(sigma_X=2.0)
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        w = CandidateFunction(
            fn=lambda t, x: 10.0, growth_C=1.0, growth_n=0,
            terminal_side="above-g", name="too-big",
        )
        cert = certify_supersolution(w, tree)
        assert not cert.certified and cert.witness["kind"] == "growth"

    def test_maintenance_refutation_carries_replayable_witness(self):
        # Y drains fast under the only control; a flat candidate cannot be held
        spec = bounded_spec(mu_Y=affine_coefficient(0.0, y_vec=np.asarray(-3.0)))
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        w = const_candidate(2.0, "above-g")
        cert = certify_supersolution(w, tree)
        assert not cert.certified
        wit = cert.witness
        assert wit["kind"] == "maintenance"
        node = wit["node"]
        row = list(tree.interior).index(node)
        t_k = tree.node_time(node)
        for ci, data in wit["per_control"].items():
            u = tree.controls[ci]
            succ = tree.succ[row, ci]
            nxt = [
                float(y_transition(spec, t_k, tree.states[node], u, br, tree.dt, wit["y"]))
                for br in tree.branches
            ]
            targets = [w.value(t_k + tree.dt, tree.states[int(s)]) for s in succ]
            assert any(v < tv for v, tv in zip(nxt, targets))

    def test_monotone_certification_upwards(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        base = const_candidate(1.5, "above-g")
        higher = const_candidate(2.5, "above-g")
        c1 = certify_supersolution(base, tree)
        c2 = certify_supersolution(higher, tree)
        assert c1.certified and c2.certified
        assert c1.maintaining_controls == c2.maintaining_controls

    def test_ladder_used_for_non_affine_dynamics(self):
        spec = bounded_spec(
            mu_Y=lambda t, x, y, u: 0.1 * np.square(np.asarray(y)),
        )
        tree = build_tree(spec, 0.0, [0.0], 2, grid_of(spec, 0.0))
        cert = certify_supersolution(const_candidate(2.0, "above-g"), tree)
        assert cert.ladder_used


class TestSubsolution:
    def test_constant_below_payoff_certifies_with_frozen_y(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        cert = certify_subsolution(const_candidate(-2.0, "below-g"), tree)
        assert cert.certified

    def test_terminal_violation_refutes(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        cert = certify_subsolution(const_candidate(5.0, "below-g"), tree)
        assert not cert.certified and cert.witness["kind"] == "terminal"

    def test_payoff_plus_constant_refuted_at_terminal(self):
        spec = bounded_spec()
        tree = build_tree(spec, 0.0, [0.0], 3, grid_of(spec, 0.0))
        w = CandidateFunction(
            fn=lambda t, x: float(spec.payoff(np.asarray(x).reshape(1, -1))[0]) + 10.0,
            growth_C=12.0, growth_n=0, terminal_side="below-g", name="g+10",
        )
        cert = certify_subsolution(w, tree)
        assert not cert.certified and cert.witness["kind"] == "terminal"

    def test_escape_failure_refutes_with_witness(self):
        # strong upward drift: from just below a flat candidate every branch
        # ends at or above it, so there is no escape
        spec = bounded_spec(mu_Y=5.0, sigma_X=0.0)
        tree = build_tree(spec, 0.0, [0.0], 2, grid_of(spec, 0.0))
        cert = certify_subsolution(const_candidate(-1.5, "below-g"), tree)
        assert not cert.certified
        wit = cert.witness
        assert wit["kind"] == "escape"
        node, ci, y = wit["node"], wit["control"], wit["y"]
        row = list(tree.interior).index(node)
        t_k = tree.node_time(node)
        u = tree.controls[ci]
        targets = wit["targets"]
        nxt = [
            float(y_transition(spec, t_k, tree.states[node], u, br, tree.dt, y))
            for br in tree.branches
        ]
        assert all(v >= tv for v, tv in zip(nxt, targets))


class TestExponentialCandidates:
    def conforming_spec(self):
        u0 = ControlValue(np.zeros(1), {1.0: np.zeros(1)})
        return bounded_spec(
            mu_Y=affine_coefficient(0.0, y_vec=np.asarray(0.5)),
            L=1.0, C=1.0, neutral=u0,
        )

    def test_supersolution_formula(self):
        spec = self.conforming_spec()
        w = exponential_supersolution(spec)
        # k = 2, gamma = 1 + e^2
        assert w.value(0.0, [0.0]) == pytest.approx(1.0 + np.exp(2.0) - 1.0)
        assert w.value(1.0, [3.0]) == pytest.approx(1.0)  # = |g|_inf at T
        assert w.terminal_side == "above-g"

    def test_subsolution_formula(self):
        spec = self.conforming_spec()
        w = exponential_subsolution(spec)
        # k = 2, gamma = 2 + e^2
        assert w.value(0.0, [0.0]) == pytest.approx(1.0 - (2.0 + np.exp(2.0)))
        assert w.value(1.0, [0.0]) == pytest.approx(-2.0)  # = -|g|_inf - 1
        assert w.terminal_side == "below-g"

    def test_requires_bound_and_neutral_control(self):
        with pytest.raises(ConfigurationError):
            exponential_supersolution(bounded_spec(g_bound=None))
        with pytest.raises(ConfigurationError):
            exponential_supersolution(bounded_spec())  # no neutral control
        with pytest.raises(ConfigurationError):
            exponential_subsolution(bounded_spec(C=None))

    def test_neutral_control_must_sit_on_grid(self):
        spec = self.conforming_spec()
        other = grid_of(spec, 0.5)
        with pytest.raises(ConfigurationError):
            exponential_supersolution(spec, other)

    def test_neutral_spot_check_rejects_risky_control(self):
        u0 = ControlValue(np.zeros(1), {1.0: np.zeros(1)})
        spec = bounded_spec(sigma_Y=1.0, neutral=u0)
        with pytest.raises(ConfigurationError):
            exponential_supersolution(spec)

    def test_both_certify_on_conforming_model(self):
        spec = self.conforming_spec()
        grid = ControlGrid.singleton(spec.neutral_control)
        tree = build_tree(spec, 0.0, [0.0], 5, grid)
        assert certify_supersolution(exponential_supersolution(spec, grid), tree).certified
        assert certify_subsolution(exponential_subsolution(spec), tree).certified

    def test_super_dominates_sub_everywhere(self):
        spec = self.conforming_spec()
        grid = ControlGrid.singleton(spec.neutral_control)
        tree = build_tree(spec, 0.0, [0.0], 5, grid)
        sup = exponential_supersolution(spec, grid)
        sub = exponential_subsolution(spec)
        for node in range(tree.n_nodes):
            t, x = tree.node_time(node), tree.states[node]
            assert sup.value(t, x) >= sub.value(t, x)

    def test_gamma_reduced_corruption_refuted_at_leaf(self):
        spec = self.conforming_spec()
        grid = ControlGrid.singleton(spec.neutral_control)
        tree = build_tree(spec, 0.0, [0.0], 5, grid)
        w = exponential_supersolution(spec, grid)
        leaf_g = spec.payoff(tree.states[tree.leaves])
        slack = float(min(w.value(spec.T, x) - gv for x, gv in zip(tree.states[tree.leaves], leaf_g)))
        corrupted = w.shifted(-(slack + 0.25))
        cert = certify_supersolution(corrupted, tree)
        assert not cert.certified
        assert cert.witness["kind"] == "terminal"
        assert tree.level[cert.witness["node"]] == tree.depth


class TestSandwich:
    def test_builtin_pair_brackets_frozen_profile(self):
        spec = TestExponentialCandidates().conforming_spec()
        grid = ControlGrid.singleton(spec.neutral_control)
        tree = build_tree(spec, 0.0, [0.0], 4, grid)
        profile = target_value(tree)
        sup = exponential_supersolution(spec, grid)
        sub = exponential_subsolution(spec)
        report = sandwich_check([sub], [sup], tree, profile.values)
        assert report.ok

    def test_empty_sides_are_vacuous(self):
        spec = make_spec(sigma_X=1.0, g=lambda x: np.tanh(x[..., 0]))
        tree = build_tree(spec, 0.0, [0.0], 2, grid_of(spec, 0.0))
        profile = target_value(tree)
        assert sandwich_check([], [], tree, profile.values).ok

    def test_corrupted_super_reports_violations(self):
        spec = TestExponentialCandidates().conforming_spec()
        grid = ControlGrid.singleton(spec.neutral_control)
        tree = build_tree(spec, 0.0, [0.0], 4, grid)
        profile = target_value(tree)
        bad = exponential_supersolution(spec, grid).shifted(-100.0)
        report = sandwich_check([], [bad], tree, profile.values)
        assert not report.ok
        assert all(v["kind"] == "above" for v in report.violations)
