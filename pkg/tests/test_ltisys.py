"""State-space simulation, observability, and window-based state recovery."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepc.ltisys import (
    InconsistentWindowError,
    LtiPlant,
    StateSpace,
    UnobservableSystemError,
    WindowRankError,
    lag,
    observability_matrix,
    random_controllable_system,
    read_statespace,
    reconstruct_initial_state,
    simulate,
    toeplitz_impulse,
    write_statespace,
)


def double_integrator() -> StateSpace:
    return StateSpace(
        A=[[1.0, 1.0], [0.0, 1.0]],
        B=[[0.0], [1.0]],
        C=[[1.0, 0.0]],
        D=[[0.0]],
    )


class TestStateSpace:
    def test_dimension_properties(self):
        ss = random_controllable_system(3, 2, 1, seed=0)
        assert (ss.n, ss.m, ss.p) == (3, 2, 1)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="square"):
            StateSpace(A=np.ones((2, 3)), B=np.ones((2, 1)), C=np.ones((1, 2)), D=np.zeros((1, 1)))
        with pytest.raises(ValueError, match="B must have"):
            StateSpace(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)), D=np.zeros((1, 1)))
        with pytest.raises(ValueError, match="C must have"):
            StateSpace(A=np.eye(2), B=np.ones((2, 1)), C=np.ones((1, 3)), D=np.zeros((1, 1)))
        with pytest.raises(ValueError, match="D must be"):
            StateSpace(A=np.eye(2), B=np.ones((2, 1)), C=np.ones((1, 2)), D=np.zeros((2, 2)))

    def test_rejects_non_finite(self):
        A = np.eye(2)
        A[0, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            StateSpace(A=A, B=np.ones((2, 1)), C=np.ones((1, 2)), D=np.zeros((1, 1)))


class TestSimulate:
    def test_matches_hand_recursion(self):
        ss = random_controllable_system(3, 2, 2, seed=1)
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal(3)
        u = rng.standard_normal((15, 2))
        ys, x_final = simulate(ss, x0, u)
        x = x0.copy()
        for k in range(15):
            np.testing.assert_allclose(ys[k], ss.C @ x + ss.D @ u[k], atol=1e-12)
            x = ss.A @ x + ss.B @ u[k]
        np.testing.assert_allclose(x_final, x, atol=1e-12)

    def test_superposition(self):
        ss = random_controllable_system(4, 1, 2, seed=2)
        rng = np.random.default_rng(8)
        x1, x2 = rng.standard_normal((2, 4))
        u1, u2 = rng.standard_normal((2, 20, 1))
        a, b = 0.7, -1.3
        y1, _ = simulate(ss, x1, u1)
        y2, _ = simulate(ss, x2, u2)
        y_mix, _ = simulate(ss, a * x1 + b * x2, a * u1 + b * u2)
        np.testing.assert_allclose(y_mix, a * y1 + b * y2, atol=1e-9)

    def test_channel_mismatch_rejected(self):
        ss = double_integrator()
        with pytest.raises(ValueError, match="channels"):
            simulate(ss, np.zeros(2), np.zeros((5, 3)))

    def test_plant_stepping_agrees(self):
        ss = random_controllable_system(3, 2, 1, seed=3)
        rng = np.random.default_rng(9)
        x0 = rng.standard_normal(3)
        u = rng.standard_normal((12, 2))
        ys, x_final = simulate(ss, x0, u)
        plant = LtiPlant(ss, x0=x0)
        stepped = np.array([plant.step(uk) for uk in u])
        np.testing.assert_allclose(stepped, ys, atol=1e-12)
        np.testing.assert_allclose(plant.state, x_final, atol=1e-12)


class TestObservability:
    def test_hand_built_stack(self):
        ss = double_integrator()
        obs = observability_matrix(ss, 3)
        # C, CA, CA^2 for the discrete double integrator.
        np.testing.assert_allclose(obs, [[1, 0], [1, 1], [1, 2]], atol=0)

    def test_lag_of_double_integrator_is_two(self):
        assert lag(double_integrator()) == 2

    def test_full_output_gives_lag_one(self):
        ss = StateSpace(A=np.eye(3) * 0.5, B=np.ones((3, 1)), C=np.eye(3), D=np.zeros((3, 1)))
        assert lag(ss) == 1

    def test_unobservable_mode_raises(self):
        ss = StateSpace(
            A=[[0.5, 0.0], [0.0, 0.3]],
            B=[[1.0], [1.0]],
            C=[[1.0, 0.0]],
            D=[[0.0]],
        )
        with pytest.raises(UnobservableSystemError):
            lag(ss)

    def test_depth_validation(self):
        with pytest.raises(ValueError):
            observability_matrix(double_integrator(), 0)


class TestToeplitzImpulse:
    def test_matches_zero_state_simulation(self):
        ss = random_controllable_system(4, 2, 3, seed=4)
        horizon = 9
        rng = np.random.default_rng(10)
        u = rng.standard_normal((horizon, 2))
        forced = toeplitz_impulse(ss, horizon) @ u.ravel()
        ys, _ = simulate(ss, np.zeros(4), u)
        np.testing.assert_allclose(forced.reshape(horizon, 3), ys, atol=1e-10)

    def test_strictly_causal_structure(self):
        ss = random_controllable_system(3, 2, 2, seed=5)
        top = toeplitz_impulse(ss, 6)
        p, m = ss.p, ss.m
        for i in range(6):
            for j in range(i + 1, 6):
                block = top[i * p : (i + 1) * p, j * m : (j + 1) * m]
                assert np.all(block == 0.0)


class TestReconstructInitialState:
    @pytest.mark.parametrize("seed", range(6))
    def test_exact_recovery_at_lag_window(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        ss = random_controllable_system(n, m, p, seed=rng)
        depth = lag(ss)
        x0 = rng.standard_normal(n)
        u_win = rng.standard_normal((depth, m))
        y_win, x_true = simulate(ss, x0, u_win)
        x_hat = reconstruct_initial_state(ss, u_win, y_win)
        assert np.max(np.abs(x_hat - x_true)) <= 1e-9

    def test_window_shorter_than_lag_rejected(self):
        ss = double_integrator()  # lag 2
        with pytest.raises(WindowRankError):
            reconstruct_initial_state(ss, np.zeros((1, 1)), np.zeros((1, 1)))

    def test_inconsistent_window_rejected(self):
        # A window longer than the lag overdetermines the state, so a
        # corrupted sample leaves a residual no initial state can explain.
        ss = double_integrator()
        u_win = np.zeros((3, 1))
        y_win, _ = simulate(ss, np.array([1.0, 0.0]), u_win)
        y_bad = y_win + np.array([[0.0], [0.0], [5.0]])
        with pytest.raises(InconsistentWindowError):
            reconstruct_initial_state(ss, u_win, y_bad)

    def test_length_mismatch_rejected(self):
        ss = double_integrator()
        with pytest.raises(ValueError, match="same length"):
            reconstruct_initial_state(ss, np.zeros((3, 1)), np.zeros((2, 1)))


class TestRandomControllableSystem:
    def test_seeded_determinism(self):
        a = random_controllable_system(4, 2, 2, seed=42)
        b = random_controllable_system(4, 2, 2, seed=42)
        for x, y in zip((a.A, a.B, a.C, a.D), (b.A, b.B, b.C, b.D)):
            np.testing.assert_array_equal(x, y)

    @pytest.mark.parametrize("seed", range(8))
    def test_spectral_radius_capped(self, seed):
        ss = random_controllable_system(5, 1, 1, seed=seed, spectral_radius=0.9)
        assert max(abs(np.linalg.eigvals(ss.A))) <= 0.9 + 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_draw_is_controllable_and_observable(self, seed):
        n = 4
        ss = random_controllable_system(n, 2, 2, seed=seed)
        ctrb = np.hstack([np.linalg.matrix_power(ss.A, k) @ ss.B for k in range(n)])
        assert np.linalg.matrix_rank(ctrb) == n
        assert np.linalg.matrix_rank(observability_matrix(ss, n)) == n

    def test_accepts_generator_instance(self):
        rng = np.random.default_rng(3)
        ss = random_controllable_system(2, 1, 1, seed=rng)
        assert ss.n == 2


class TestStateSpaceFile:
    def test_round_trip_is_exact(self, tmp_path):
        ss = random_controllable_system(3, 2, 2, seed=11)
        path = tmp_path / "model.txt"
        write_statespace(ss, path)
        back = read_statespace(path)
        for orig, loaded in zip((ss.A, ss.B, ss.C, ss.D), (back.A, back.B, back.C, back.D)):
            np.testing.assert_array_equal(orig, loaded)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("2 1 1\n1.0 0.0\n")
        with pytest.raises(ValueError, match="entries"):
            read_statespace(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("")
        with pytest.raises(ValueError, match="dimensions"):
            read_statespace(path)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(1, 4),
    horizon=st.integers(1, 8),
)
def test_forced_plus_free_response_decomposition(seed, n, horizon):
    """Any simulated output splits into free (initial-state) and forced parts."""
    rng = np.random.default_rng(seed)
    ss = random_controllable_system(n, 1, 1, seed=rng)
    x0 = rng.standard_normal(n)
    u = rng.standard_normal((horizon, 1))
    total, _ = simulate(ss, x0, u)
    free, _ = simulate(ss, x0, np.zeros((horizon, 1)))
    forced = (toeplitz_impulse(ss, horizon) @ u.ravel()).reshape(horizon, 1)
    np.testing.assert_allclose(total, free + forced, atol=1e-8, rtol=1e-8)
