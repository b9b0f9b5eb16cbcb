import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from targetlab.model import (
    ControlGrid,
    ControlValue,
    MarkSpace,
    affine_coefficient,
    constant_coefficient,
    control_norm,
    make_payoff,
    table_coefficient,
    validate_problem,
)
from targetlab.model import DomainError

from conftest import make_spec, one_mark


class TestControlNorm:
    def test_zero_control_is_zero(self):
        marks = one_mark()
        u = ControlValue(np.zeros(2), {1.0: np.zeros(1)})
        assert control_norm(u, marks) == 0.0

    def test_euclidean_part_only(self):
        marks = one_mark()
        u = ControlValue(np.array([3.0, 4.0]), {1.0: np.zeros(1)})
        assert control_norm(u, marks) == 5.0

    def test_weighted_mark_part(self):
        # single process, m({e}) = 0.25, u2(e) = 2: sqrt(4 * 0.25) = 1
        marks = one_mark(weight=0.25)
        u = ControlValue(np.zeros(1), {1.0: np.array([2.0])})
        assert control_norm(u, marks) == pytest.approx(1.0, abs=0.0)

    def test_missing_mark_is_domain_error(self):
        marks = one_mark()
        u = ControlValue(np.zeros(1), {})
        with pytest.raises(DomainError):
            control_norm(u, marks)

    @given(
        lam=st.floats(-50, 50, allow_nan=False),
        comps=st.lists(st.floats(-10, 10, width=32), min_size=1, max_size=3),
    )
    @settings(max_examples=120, deadline=None)
    def test_absolutely_homogeneous_in_u2(self, lam, comps):
        marks = MarkSpace(np.array([0.5]), np.array([[0.7]]))
        base = np.asarray(comps, dtype=float)
        u = ControlValue(np.zeros(1), {0.5: base})
        scaled = ControlValue(np.zeros(1), {0.5: lam * base})
        assert control_norm(scaled, marks) == pytest.approx(
            abs(lam) * control_norm(u, marks), rel=1e-12, abs=1e-12
        )


class TestMarkSpace:
    def test_support_condition_enforced(self):
        with pytest.raises(ValueError):
            MarkSpace(np.array([1.0, 2.0]), np.array([[0.5, 0.0]]))

    def test_masses(self):
        ms = MarkSpace(np.array([1.0, 2.0]), np.array([[0.5, 0.25], [1.0, 0.25]]))
        assert ms.total_mass() == 2.0
        assert ms.process_mass(0) == 0.75
        assert np.allclose(ms.mhat_per_mark(), [1.5, 0.5])

    def test_duplicate_points_rejected(self):
        with pytest.raises(ValueError):
            MarkSpace(np.array([1.0, 1.0]), np.array([[0.5, 0.5]]))


class TestControlGrid:
    def test_lattice_respects_box_and_radius(self):
        marks = one_mark()
        grid = ControlGrid.lattice(
            marks, [[-2.0, 2.0]], 5, u2_values=(), truncation_radius=1.0
        )
        norms = [control_norm(u, marks) for u in grid]
        assert all(v <= 1.0 for v in norms)
        assert len(grid) == 3  # -1, 0, 1 survive the radius cut

    def test_duplicates_rejected(self):
        u = ControlValue(np.zeros(1), {})
        with pytest.raises(ValueError):
            ControlGrid((u, ControlValue(np.zeros(1), {})), truncation_radius=1.0)

    def test_u2_lattice_counts(self):
        marks = MarkSpace(np.array([1.0, 2.0]), np.array([[0.5, 0.5]]))
        grid = ControlGrid.lattice(
            marks, [[0.0, 0.0]], 1, u2_values=(-1.0, 1.0)
        )
        # one u1 point, 2 choices per mark over 2 marks
        assert len(grid) == 4


class TestCoefficientBuilders:
    def test_constant_ignores_arguments(self):
        ev = constant_coefficient([1.0, 2.0])
        assert np.allclose(ev(0.3, np.zeros(5), None), [1.0, 2.0])

    def test_affine_matches_hand_formula(self):
        ev = affine_coefficient(
            np.array([1.0]), x_mat=np.array([[2.0]]), u1_mat=np.array([[3.0]])
        )
        u = ControlValue(np.array([0.5]), {})
        out = ev(0.0, np.array([[1.0], [2.0]]), u)
        assert np.allclose(out, [[1.0 + 2.0 + 1.5], [1.0 + 4.0 + 1.5]])

    def test_affine_y_and_jump_signature(self):
        ev = affine_coefficient(np.zeros(1), y_vec=np.array([2.0]))
        u = ControlValue(np.zeros(1), {})
        assert np.allclose(ev(0.0, np.zeros(1), 3.0, u), [6.0])
        evj = affine_coefficient(np.zeros(1), u2_mat=np.array([[1.0]]), e_vec=np.array([2.0]))
        out = evj(0.0, np.zeros(1), np.zeros(1), np.array([0.5]), 1.5)
        assert np.allclose(out, [0.5 + 3.0])

    def test_table_interpolates_in_time(self):
        ev = table_coefficient([0.0, 1.0], [np.array([0.0]), np.array([2.0])])
        assert np.allclose(ev(0.25), [0.5])
        assert np.allclose(ev(-1.0), [0.0])
        assert np.allclose(ev(5.0), [2.0])


class TestPayoffs:
    def test_tanh_is_bounded(self):
        g, bound = make_payoff("tanh", {}, d=1)
        assert bound == 1.0
        assert abs(g(np.array([[50.0]]))[0]) <= 1.0

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            make_payoff("nope", {}, d=1)


class TestValidateProblem:
    def test_zero_model_is_clean(self):
        spec = make_spec(marks=one_mark(), n=1)
        report = validate_problem(spec, 100, seed=0)
        assert report.ok

    def test_growth_violation_is_reported(self):
        # mu_Y = 2y against L = 1 fails once |y| > 1
        spec = make_spec(
            mu_Y=affine_coefficient(0.0, y_vec=np.asarray(2.0)), L=1.0,
            y_box=(-2.0, 2.0),
        )
        report = validate_problem(spec, 300, seed=1)
        kinds = {v.kind for v in report.violations}
        assert "growth-Y" in kinds
        assert "lipschitz-Y" in kinds

    def test_linear_model_within_bounds(self):
        spec = make_spec(
            mu_X=affine_coefficient(np.zeros(1), x_mat=np.eye(1)),
            sigma_X=1.0,
            L=1.0,
        )
        report = validate_problem(spec, 300, seed=2)
        assert report.ok

    def test_deterministic_given_seed(self):
        spec = make_spec(mu_Y=affine_coefficient(0.0, y_vec=np.asarray(2.0)))
        r1 = validate_problem(spec, 50, seed=7)
        r2 = validate_problem(spec, 50, seed=7)
        assert [v.detail for v in r1.violations] == [v.detail for v in r2.violations]

    def test_payoff_bound_spot_check(self):
        spec = make_spec(g=lambda x: 2.0 * np.ones(x.shape[:-1]), g_bound=1.0)
        report = validate_problem(spec, 20, seed=3)
        assert any(v.kind == "payoff-bound" for v in report.violations)
