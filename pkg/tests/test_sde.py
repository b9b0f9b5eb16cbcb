import numpy as np
import pytest

from targetlab.model import ControlValue, MarkSpace, affine_coefficient, constant_coefficient
from targetlab.sde import (
    BoxExit,
    ConstantPolicy,
    FeedbackPolicy,
    FixedTime,
    SimulationError,
    check_admissibility,
    concatenate,
    exp_rescaling_deviation,
    simulate,
)

from conftest import make_spec, one_mark, zero_control


class TestSimulate:
    def test_zero_dynamics_freezes_both_processes(self):
        spec = make_spec(marks=one_mark(), n=1)
        b = simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.5], 0.25, 6, 9, seed=3)
        assert np.all(b.X == 0.5)
        assert np.all(b.Y == 0.25)

    def test_unit_drift_integrates_exactly(self):
        spec = make_spec(mu_Y=1.0)
        # 8 steps: dt is an exact binary fraction, so the sum is exact
        b = simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.5, 3, 8, seed=1)
        assert np.all(b.Y[:, -1] == 1.5)

    def test_brownian_variance_matches(self):
        spec = make_spec(sigma_X=1.0)
        b = simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.0, 100000, 20, seed=2)
        xt = b.X[:, -1, 0]
        var = xt.var(ddof=1)
        se = var * np.sqrt(2.0 / (len(xt) - 1))
        assert abs(var - 1.0) <= 3 * se

    def test_deterministic_and_worker_independent(self):
        spec = make_spec(
            marks=one_mark(weight=2.0), n=1,
            mu_X=0.1, sigma_X=0.4, beta=0.7, sigma_Y=0.2, b=0.1,
        )
        pol = ConstantPolicy(zero_control(spec))
        runs = [
            simulate(spec, pol, 0.0, [0.0], 0.0, 37, 25, seed=9, n_workers=w, block_size=bs)
            for w, bs in ((1, 37), (1, 5), (3, 5), (4, 8))
        ]
        for other in runs[1:]:
            assert np.array_equal(runs[0].X, other.X)
            assert np.array_equal(runs[0].Y, other.Y)
            assert runs[0].jump_log == other.jump_log

    def test_jump_count_bounded_by_steps_times_processes(self):
        marks = MarkSpace(np.array([1.0, 2.0]), np.array([[5.0, 5.0], [5.0, 5.0]]))
        spec = make_spec(marks=marks, n=1, beta=1.0)
        b = simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.0, 20, 10, seed=4)
        for log in b.jump_log:
            assert len(log) <= 10 * 2
            steps_and_procs = [(s, i) for s, i, _ in log]
            assert len(steps_and_procs) == len(set(steps_and_procs))

    def test_nonfinite_coefficient_reports_path_and_step(self):
        def bad_mu(t, x, u):
            return np.where(t > 0.5, np.nan, 0.0) * np.ones(1)

        spec = make_spec(mu_X=bad_mu)
        with pytest.raises(SimulationError) as err:
            simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.0, 3, 10, seed=5)
        assert err.value.path is not None and err.value.step is not None

    def test_csv_roundtrip_is_bit_identical(self, tmp_path):
        spec = make_spec(marks=one_mark(weight=1.5), n=1, sigma_X=0.3, beta=0.5)
        pol = ConstantPolicy(zero_control(spec))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        simulate(spec, pol, 0.0, [0.0], 0.0, 11, 13, seed=6).to_csv(p1)
        simulate(spec, pol, 0.0, [0.0], 0.0, 11, 13, seed=6, n_workers=2, block_size=4).to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().startswith("# seed=6")


class TestConcatenation:
    def drift_spec(self):
        # Y drift equal to the control value, so switches are visible
        return make_spec(mu_Y=affine_coefficient(0.0, u1_mat=np.array([1.0])))

    def test_switch_at_start_uses_second_policy(self):
        spec = self.drift_spec()
        pol = concatenate(
            ConstantPolicy(ControlValue.pure([1.0])),
            ConstantPolicy(ControlValue.pure([-2.0])),
            FixedTime(0.0),
        )
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 1, 4, seed=1)
        assert b.Y[0, -1] == pytest.approx(-2.0)

    def test_switch_at_horizon_keeps_first_policy(self):
        spec = self.drift_spec()
        pol = concatenate(
            ConstantPolicy(ControlValue.pure([1.0])),
            ConstantPolicy(ControlValue.pure([-2.0])),
            FixedTime(1.0),
        )
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 1, 4, seed=1)
        assert b.Y[0, -1] == pytest.approx(1.0)

    def test_switch_at_interior_grid_time(self):
        spec = self.drift_spec()
        pol = concatenate(
            ConstantPolicy(ControlValue.pure([1.0])),
            ConstantPolicy(ControlValue.pure([-2.0])),
            FixedTime(0.5),
        )
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 1, 10, seed=1)
        # +1 drift for the first five steps, -2 afterwards
        assert b.Y[0, 5] == pytest.approx(0.5)
        assert b.Y[0, -1] == pytest.approx(0.5 - 2.0 * 0.5)

    def test_box_exit_rule_switches_and_sticks(self):
        # X drifts right at rate 1 and exits [0, 0.35]; afterwards the
        # second policy holds even though X keeps moving
        spec = make_spec(
            mu_X=1.0,
            mu_Y=affine_coefficient(0.0, u1_mat=np.array([1.0])),
        )
        rule = BoxExit([[-10.0, 0.35]], [-10.0, 10.0])
        pol = concatenate(
            ConstantPolicy(ControlValue.pure([0.0])),
            ConstantPolicy(ControlValue.pure([1.0])),
            rule,
        )
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 1, 10, seed=1)
        # exits at x=0.4 (step 4), so drift 1 applies from step 4 on
        assert b.Y[0, 4] == pytest.approx(0.0)
        assert b.Y[0, -1] == pytest.approx(0.6)

    def test_feedback_policy_sees_state(self):
        spec = make_spec(
            mu_X=1.0,
            mu_Y=affine_coefficient(0.0, u1_mat=np.array([1.0])),
        )
        pol = FeedbackPolicy(lambda s, x, y: ControlValue.pure([1.0 if x[0] >= 0.5 else 0.0]))
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 1, 10, seed=1)
        assert b.Y[0, -1] == pytest.approx(0.5)


class TestAdmissibility:
    def test_zero_jump_component_admissible(self):
        spec = make_spec(marks=one_mark(weight=3.0), n=1, beta=1.0)
        b = simulate(spec, ConstantPolicy(zero_control(spec)), 0.0, [0.0], 0.0, 10, 10, seed=7)
        assert check_admissibility(spec, ConstantPolicy(zero_control(spec)), [[-1, 1]], [-1, 1], 0.0, b)

    def test_large_jump_sum_fails_small_bound(self):
        spec = make_spec(marks=one_mark(weight=3.0), n=1, b=3.0, beta=0.0)
        pol = ConstantPolicy(zero_control(spec))
        b = simulate(spec, pol, 0.0, [0.0], 0.0, 10, 10, seed=7)
        assert sum(len(lg) for lg in b.jump_log) > 0
        assert not check_admissibility(spec, pol, [[-1, 1]], [-1, 1], 2.0, b)
        assert check_admissibility(spec, pol, [[-1, 1]], [-1, 1], 5.0, b)


class TestExponentialRescaling:
    def drift_spec(self):
        return make_spec(mu_Y=1.0)

    def test_identity_at_c_zero(self):
        spec = self.drift_spec()
        dev = exp_rescaling_deviation(
            spec, ConstantPolicy(zero_control(spec)), 0.0, 0.0, [0.0], 0.5, 4, 40, seed=8
        )
        assert dev <= 1e-12

    def test_zero_initial_data_with_zero_dynamics(self):
        spec = make_spec()
        dev = exp_rescaling_deviation(
            spec, ConstantPolicy(zero_control(spec)), 2.0, 0.0, [0.0], 0.0, 4, 40, seed=8
        )
        assert dev == 0.0

    def test_euler_order_halving(self):
        spec = self.drift_spec()
        pol = ConstantPolicy(zero_control(spec))
        d1 = exp_rescaling_deviation(spec, pol, 1.0, 0.0, [0.0], 0.5, 2, 50, seed=8)
        d2 = exp_rescaling_deviation(spec, pol, 1.0, 0.0, [0.0], 0.5, 2, 100, seed=8)
        assert 0.4 <= d2 / d1 <= 0.6
        assert d1 <= 10.0 * (1.0 / 50)
