"""Planners (model-based and data-driven), their equivalence on exact LTI
data, slack and soft-box behaviour, low-rank truncation, and the
receding-horizon loop."""

import csv

import numpy as np
import pytest

from deepc.behavioral import Trajectory, min_data_length, partition_data
from deepc.controllers import (
    ControlProblem,
    DeepcController,
    InfeasibleStepError,
    MpcController,
    RegularizedDeepcController,
    closed_loop_cost,
    low_rank_approx,
    run_receding_horizon,
    solve_deepc,
    solve_mpc,
    solve_regularized_deepc,
    write_step_diagnostics,
)
from deepc.ltisys import (
    LtiPlant,
    StateSpace,
    lag,
    random_controllable_system,
    reconstruct_initial_state,
    simulate,
)
from deepc.qpcore import QpSettings

TIGHT = QpSettings(eps_abs=1e-8)


def integrator() -> StateSpace:
    return StateSpace(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]])


def pe_data(ss: StateSpace, t_ini: int, horizon: int, seed: int, extra: int = 10):
    """Noiseless excitation record long enough for the data-driven planners."""
    rng = np.random.default_rng(seed)
    samples = min_data_length(ss.m, t_ini, horizon, ss.n) + extra
    u = rng.uniform(-1.0, 1.0, (samples, ss.m))
    y, _ = simulate(ss, np.zeros(ss.n), u)
    return partition_data(Trajectory(u, y), t_ini, horizon)


class TestControlProblemValidation:
    def test_scalar_weights_promoted(self):
        cp = ControlProblem(horizon=3, t_ini=1, Q=2.0, R=0.5)
        np.testing.assert_array_equal(cp.Q, [[2.0]])
        np.testing.assert_array_equal(cp.R, [[0.5]])
        assert (cp.p, cp.m) == (1, 1)

    def test_diagonal_vector_weights_promoted(self):
        cp = ControlProblem(horizon=3, t_ini=1, Q=[1.0, 2.0, 3.0], R=[1.0, 1.0])
        np.testing.assert_array_equal(cp.Q, np.diag([1.0, 2.0, 3.0]))
        assert (cp.p, cp.m) == (3, 2)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError, match="positive semidefinite"):
            ControlProblem(horizon=2, t_ini=1, Q=[[0.0, 1.0], [1.0, 0.0]], R=1.0)
        with pytest.raises(ValueError, match="positive definite"):
            ControlProblem(horizon=2, t_ini=1, Q=1.0, R=0.0)

    def test_invalid_shapes_and_ranges_rejected(self):
        with pytest.raises(ValueError, match="horizon"):
            ControlProblem(horizon=0, t_ini=1, Q=1.0, R=1.0)
        with pytest.raises(ValueError, match="t_ini"):
            ControlProblem(horizon=2, t_ini=-1, Q=1.0, R=1.0)
        with pytest.raises(ValueError, match="lower bounds"):
            ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0, u_min=1.0, u_max=-1.0)
        with pytest.raises(ValueError, match="penalties"):
            ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0, g_penalty=-1.0)
        with pytest.raises(ValueError, match="soft_output_penalty"):
            ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0, soft_output_penalty=0.0)
        with pytest.raises(ValueError, match="steps_per_solve"):
            ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0, steps_per_solve=3)

    def test_scalar_bounds_broadcast(self):
        cp = ControlProblem(horizon=2, t_ini=1, Q=np.eye(2), R=np.eye(3), u_max=2.0)
        np.testing.assert_array_equal(cp.u_max, [2.0, 2.0, 2.0])
        assert np.all(np.isinf(cp.u_min))


class TestSolveMpcHandCases:
    def test_integrator_two_step_plan(self):
        # From rest toward r=(0,1): minimize (u0-1)^2 + u0^2 + u1^2.
        cp = ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0)
        res = solve_mpc(integrator(), [0.0], [[0.0], [1.0]], cp, TIGHT)
        assert res.status == "optimal"
        np.testing.assert_allclose(res.u.ravel(), [0.5, 0.0], atol=1e-7)
        np.testing.assert_allclose(res.y.ravel(), [0.0, 0.5], atol=1e-7)

    def test_regulation_from_origin_is_free(self):
        cp = ControlProblem(horizon=4, t_ini=1, Q=1.0, R=1.0)
        res = solve_mpc(integrator(), [0.0], 0.0, cp, TIGHT)
        np.testing.assert_allclose(res.u, 0.0, atol=1e-8)
        assert res.objective == pytest.approx(0.0, abs=1e-10)

    def test_pinned_input_box(self):
        cp = ControlProblem(horizon=3, t_ini=1, Q=1.0, R=1.0, u_min=0.0, u_max=0.0)
        res = solve_mpc(integrator(), [0.0], 5.0, cp, TIGHT)
        np.testing.assert_allclose(res.u, 0.0, atol=1e-9)

    def test_dimension_mismatch_rejected(self):
        cp = ControlProblem(horizon=2, t_ini=1, Q=np.eye(2), R=1.0)
        with pytest.raises(ValueError, match="dimensions"):
            solve_mpc(integrator(), [0.0], 0.0, cp)


class TestDataDrivenMatchesModelBased:
    def test_integrator_scenario(self):
        cp = ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0)
        dm = pe_data(integrator(), 1, 2, seed=0)
        res = solve_deepc(dm, [[0.0]], [[0.0]], [[0.0], [1.0]], cp, TIGHT)
        assert res.status == "optimal"
        np.testing.assert_allclose(res.u.ravel(), [0.5, 0.0], atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_open_loop_plans_agree_on_random_systems(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        ss = random_controllable_system(n, m, p, seed=rng, spectral_radius=0.95)
        t_ini, horizon = n, 6
        dm = pe_data(ss, t_ini, horizon, seed=seed + 50)
        # A consistent window: simulate a short prefix and keep its tail.
        u_run = rng.uniform(-0.5, 0.5, (t_ini + 3, m))
        y_run, _ = simulate(ss, np.zeros(n), u_run)
        u_ini, y_ini = u_run[-t_ini:], y_run[-t_ini:]
        x_hat = reconstruct_initial_state(ss, u_ini, y_ini)
        r = rng.uniform(-1.0, 1.0, p)
        cp = ControlProblem(
            horizon=horizon, t_ini=t_ini, Q=np.eye(p), R=np.eye(m),
            u_min=-1.0, u_max=1.0,
        )
        res_model = solve_mpc(ss, x_hat, r, cp, TIGHT)
        res_data = solve_deepc(dm, u_ini, y_ini, r, cp, TIGHT)
        assert res_model.status == res_data.status == "optimal"
        assert np.abs(res_model.u - res_data.u).max() <= 1e-5

    def test_single_column_recovers_scaling(self):
        # One stored window and an initialization that is that window
        # scaled: the only consistent weight is the scale itself.
        ss = integrator()
        t_ini, horizon = 1, 2
        u = np.array([[1.0], [0.5], [-0.25]])
        y, _ = simulate(ss, np.zeros(1), u)
        dm = partition_data(Trajectory(u, y), t_ini, horizon)
        assert dm.num_columns == 1
        alpha = -1.5
        cp = ControlProblem(horizon=horizon, t_ini=t_ini, Q=1.0, R=1.0)
        res = solve_deepc(
            dm, alpha * u[:1], alpha * y[:1], 0.0, cp, TIGHT
        )
        np.testing.assert_allclose(res.g, [alpha], atol=1e-6)


class TestRegularizedSlack:
    def _setup(self, seed=3):
        ss = random_controllable_system(3, 1, 1, seed=seed, spectral_radius=0.9)
        t_ini, horizon = 4, 8
        dm = pe_data(ss, t_ini, horizon, seed=seed + 10)
        u_ini = np.full((t_ini, 1), 0.2)
        y_ini, _ = simulate(ss, np.zeros(3), u_ini)
        cp = ControlProblem(
            horizon=horizon, t_ini=t_ini, Q=1.0, R=0.1, slack_penalty=1e5,
            g_penalty=0.5,
        )
        return dm, u_ini, y_ini, cp

    def test_consistent_window_needs_no_slack(self):
        dm, u_ini, y_ini, cp = self._setup()
        res = solve_regularized_deepc(dm, u_ini, y_ini, 0.5, cp)
        assert np.abs(res.output_slack).sum() <= 1e-6

    def test_inconsistent_window_forces_slack(self):
        dm, u_ini, y_ini, cp = self._setup()
        y_bad = y_ini.copy()
        y_bad[-1] += 1.0
        res = solve_regularized_deepc(dm, u_ini, y_bad, 0.5, cp)
        assert np.abs(res.output_slack).sum() >= 0.1

    def test_heavy_slack_penalty_approaches_exact_planner(self):
        dm, u_ini, y_ini, _ = self._setup()
        cp_exact = ControlProblem(horizon=8, t_ini=4, Q=1.0, R=0.1)
        cp_reg = ControlProblem(
            horizon=8, t_ini=4, Q=1.0, R=0.1, slack_penalty=1e8
        )
        exact = solve_deepc(dm, u_ini, y_ini, 0.5, cp_exact, TIGHT)
        reg = solve_regularized_deepc(dm, u_ini, y_ini, 0.5, cp_reg, TIGHT)
        assert np.abs(exact.u - reg.u).max() <= 1e-5

    def test_dominant_g_penalty_kills_the_plan(self):
        dm, _, _, _ = self._setup()
        cp = ControlProblem(
            horizon=8, t_ini=4, Q=1.0, R=0.1, slack_penalty=1e5, g_penalty=1e9
        )
        res = solve_regularized_deepc(
            dm, np.zeros((4, 1)), np.zeros((4, 1)), 0.0, cp
        )
        np.testing.assert_allclose(res.u, 0.0, atol=1e-5)
        np.testing.assert_allclose(res.g, 0.0, atol=1e-6)


class TestSoftOutputBoxes:
    def test_coincides_with_hard_when_feasible(self):
        ss = random_controllable_system(2, 1, 1, seed=9, spectral_radius=0.8)
        cp_hard = ControlProblem(
            horizon=6, t_ini=1, Q=1.0, R=0.5, y_min=-5.0, y_max=5.0,
            u_min=-2.0, u_max=2.0,
        )
        cp_soft = ControlProblem(
            horizon=6, t_ini=1, Q=1.0, R=0.5, y_min=-5.0, y_max=5.0,
            u_min=-2.0, u_max=2.0, soft_output_penalty=1e5,
        )
        x_hat = [0.2, -0.1]
        hard = solve_mpc(ss, x_hat, 0.5, cp_hard, TIGHT)
        # The big penalty weight stretches the cost scales, so the soft
        # solve gets the relative termination test.
        soft = solve_mpc(
            ss, x_hat, 0.5, cp_soft, QpSettings(eps_abs=1e-8, eps_rel=1e-8)
        )
        assert hard.status == soft.status == "optimal"
        assert np.abs(hard.u - soft.u).max() <= 1e-6

    def test_survives_states_outside_the_box(self):
        # An integrator at 5 with |u| <= 0.1 cannot re-enter y <= 1 within
        # the horizon: the hard problem is infeasible, the soft one plans
        # maximum descent.  (The last input steers no output inside the
        # horizon, so the effort weight parks it at zero.)
        cp_hard = ControlProblem(
            horizon=3, t_ini=1, Q=1.0, R=0.01, y_max=1.0,
            u_min=-0.1, u_max=0.1,
        )
        hard = solve_mpc(integrator(), [5.0], 0.0, cp_hard, TIGHT)
        assert hard.status == "infeasible"
        cp_soft = ControlProblem(
            horizon=3, t_ini=1, Q=1.0, R=0.01, y_max=1.0,
            u_min=-0.1, u_max=0.1, soft_output_penalty=1e5,
        )
        soft = solve_mpc(integrator(), [5.0], 0.0, cp_soft, TIGHT)
        assert soft.status == "optimal"
        np.testing.assert_allclose(soft.u.ravel(), [-0.1, -0.1, 0.0], atol=1e-6)
        np.testing.assert_allclose(soft.y.ravel(), [5.0, 4.9, 4.8], atol=1e-6)


class TestLowRankApprox:
    def test_full_rank_truncation_is_identity(self):
        dm = pe_data(random_controllable_system(2, 1, 1, seed=4), 2, 4, seed=4)
        full_rank = int(np.linalg.matrix_rank(dm.stacked()))
        out = low_rank_approx(dm, full_rank)
        np.testing.assert_allclose(out.stacked(), dm.stacked(), atol=1e-10)

    def test_theoretical_rank_preserves_span(self):
        # Noiseless LTI data: the stacked window matrix has rank
        # m*(t_ini+horizon) + n, so truncating there must keep every fresh
        # trajectory of the system inside the span.
        ss = random_controllable_system(3, 1, 1, seed=6)
        t_ini, horizon = 3, 5
        dm = pe_data(ss, t_ini, horizon, seed=6)
        rank = ss.m * (t_ini + horizon) + ss.n
        out = low_rank_approx(dm, rank)
        rng = np.random.default_rng(11)
        u = rng.uniform(-1, 1, (t_ini + horizon, 1))
        y, _ = simulate(ss, rng.standard_normal(3), u)
        window = np.concatenate(
            [u[:t_ini].ravel(), y[:t_ini].ravel(), u[t_ini:].ravel(), y[t_ini:].ravel()]
        )
        stacked = out.stacked()
        coef, *_ = np.linalg.lstsq(stacked, window, rcond=None)
        residual = np.linalg.norm(stacked @ coef - window)
        assert residual <= 1e-6 * max(1.0, np.linalg.norm(window))

    def test_float_threshold_drops_small_directions(self):
        dm = pe_data(random_controllable_system(2, 1, 1, seed=7), 2, 4, seed=7)
        out = low_rank_approx(dm, 0.9999)  # keeps only dominant directions
        sv = np.linalg.svd(out.stacked(), compute_uv=False)
        full_sv = np.linalg.svd(dm.stacked(), compute_uv=False)
        kept = int(np.sum(sv > 1e-9 * sv[0]))
        assert kept < int(np.sum(full_sv > 1e-9 * full_sv[0]))

    def test_invalid_cutoffs_rejected(self):
        dm = pe_data(integrator(), 1, 2, seed=8)
        with pytest.raises(ValueError, match="int rank or a float"):
            low_rank_approx(dm, True)
        with pytest.raises(ValueError, match=">= 1"):
            low_rank_approx(dm, 0)
        with pytest.raises(ValueError, match="in \\(0, 1\\)"):
            low_rank_approx(dm, 1.5)


class TestRecedingHorizon:
    def test_integrator_tracks_constant_reference(self):
        cp = ControlProblem(horizon=6, t_ini=1, Q=1.0, R=0.1)
        plant = LtiPlant(integrator())
        ctrl = MpcController(integrator(), cp, state_fn=lambda: plant.state)
        out = run_receding_horizon(plant, ctrl, cp, 1.0, steps=15)
        assert abs(out.trajectory.y[-1, 0] - 1.0) <= 1e-3
        assert len(out.records) == 15

    def test_rest_stays_at_rest(self):
        cp = ControlProblem(horizon=4, t_ini=2, Q=1.0, R=1.0)
        ss = random_controllable_system(2, 1, 1, seed=13, spectral_radius=0.9)
        plant = LtiPlant(ss)
        dm = pe_data(ss, 2, 4, seed=13)
        out = run_receding_horizon(plant, DeepcController(dm, cp), cp, 0.0, steps=8)
        np.testing.assert_allclose(out.trajectory.u, 0.0, atol=1e-6)
        np.testing.assert_allclose(out.trajectory.y, 0.0, atol=1e-6)

    def test_multi_step_application(self):
        cp2 = ControlProblem(horizon=6, t_ini=1, Q=1.0, R=0.1, steps_per_solve=2)
        plant = LtiPlant(integrator())
        ctrl = MpcController(integrator(), cp2, state_fn=lambda: plant.state)
        out = run_receding_horizon(plant, ctrl, cp2, 1.0, steps=9)
        assert len(out.records) == 9  # one record per applied step
        # Steps applied between solves share the objective of their plan.
        assert out.records[0].objective == out.records[1].objective

    def test_window_reconstruction_equals_exact_state_feedback(self):
        ss = random_controllable_system(3, 1, 1, seed=17, spectral_radius=0.9)
        cp = ControlProblem(horizon=5, t_ini=3, Q=1.0, R=0.5)
        plant_a = LtiPlant(ss)
        plant_b = LtiPlant(ss)
        with_state = MpcController(ss, cp, state_fn=lambda: plant_a.state)
        from_window = MpcController(ss, cp)
        out_a = run_receding_horizon(plant_a, with_state, cp, 0.7, steps=10)
        out_b = run_receding_horizon(plant_b, from_window, cp, 0.7, steps=10)
        assert np.abs(out_a.trajectory.u - out_b.trajectory.u).max() <= 1e-6

    def test_infeasible_step_raises_with_index(self):
        cp = ControlProblem(
            horizon=3, t_ini=1, Q=1.0, R=0.01, y_max=1.0, u_min=-0.1, u_max=0.1
        )
        plant = LtiPlant(integrator(), x0=[5.0])
        ctrl = MpcController(integrator(), cp, state_fn=lambda: plant.state)
        with pytest.raises(InfeasibleStepError) as err:
            run_receding_horizon(plant, ctrl, cp, 0.0, steps=5)
        assert err.value.step == 0

    def test_violations_counted_on_measured_outputs(self):
        # Soft boxes let the planner proceed while the measured output is
        # outside the box, and the per-step records must say so.
        cp = ControlProblem(
            horizon=3, t_ini=1, Q=1.0, R=0.01, y_max=1.0, u_min=-0.1, u_max=0.1,
            soft_output_penalty=1e5,
        )
        plant = LtiPlant(integrator(), x0=[5.0])
        ctrl = MpcController(integrator(), cp, state_fn=lambda: plant.state)
        out = run_receding_horizon(plant, ctrl, cp, 0.0, steps=5)
        assert all(rec.violation_count == 1 for rec in out.records)

    def test_step_count_validation(self):
        cp = ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0)
        with pytest.raises(ValueError, match="steps"):
            run_receding_horizon(
                LtiPlant(integrator()), MpcController(integrator(), cp), cp, 0.0, 0
            )


class TestClosedLoopCost:
    def test_matches_manual_sum(self):
        rng = np.random.default_rng(19)
        u = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 1))
        traj = Trajectory(u, y)
        cp = ControlProblem(horizon=3, t_ini=1, Q=2.0, R=np.diag([1.0, 3.0]))
        ref = 0.5
        manual = sum(
            2.0 * (y[k, 0] - 0.5) ** 2 + u[k, 0] ** 2 + 3.0 * u[k, 1] ** 2
            for k in range(6)
        )
        assert closed_loop_cost(traj, ref, cp) == pytest.approx(manual, rel=1e-12)

    def test_reference_shorter_than_run_holds_last_row(self):
        u = np.zeros((4, 1))
        y = np.ones((4, 1))
        cp = ControlProblem(horizon=2, t_ini=1, Q=1.0, R=1.0)
        ref = np.array([[1.0], [0.0]])  # third and fourth steps compare to 0
        assert closed_loop_cost(Trajectory(u, y), ref, cp) == pytest.approx(3.0)


class TestStepDiagnostics:
    def test_csv_round_trip(self, tmp_path):
        cp = ControlProblem(horizon=4, t_ini=1, Q=1.0, R=0.1)
        plant = LtiPlant(integrator())
        ctrl = MpcController(integrator(), cp, state_fn=lambda: plant.state)
        out = run_receding_horizon(plant, ctrl, cp, 1.0, steps=6)
        path = tmp_path / "steps.csv"
        write_step_diagnostics(out.records, path)
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert rows[0]["solve_status"] == "optimal"
        for rec, row in zip(out.records, rows):
            assert float(row["objective"]) == rec.objective
            assert float(row["u1"]) == rec.u[0]
            assert int(row["violation_count"]) == rec.violation_count

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no records"):
            write_step_diagnostics([], tmp_path / "nothing.csv")
