"""Least-squares state-transition fitting used by the model-based baseline."""

import numpy as np
import pytest

from deepc.behavioral import Trajectory
from deepc.ltisys import random_controllable_system, simulate
from deepc.sysid import RankDeficientRegressorWarning, identify_full_state


def state_trajectory(ss, samples, seed, noise_std=0.0):
    """Simulate with full-state outputs (C=I assumed by the estimator)."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, (samples, ss.m))
    x = rng.standard_normal(ss.n)
    states = np.empty((samples, ss.n))
    for k in range(samples):
        states[k] = x
        x = ss.A @ x + ss.B @ u[k]
    states = states + noise_std * rng.standard_normal(states.shape)
    return Trajectory(u, states)


@pytest.mark.parametrize("seed", range(5))
def test_exact_recovery_from_noiseless_data(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    ss = random_controllable_system(n, m, n, seed=rng, spectral_radius=0.95)
    traj = state_trajectory(ss, 40 + 5 * n, seed=seed + 100)
    fit = identify_full_state(traj)
    assert np.abs(fit.ss.A - ss.A).max() <= 1e-8
    assert np.abs(fit.ss.B - ss.B).max() <= 1e-8
    assert np.all(fit.residuals <= 1e-9)
    assert fit.order == n


def test_wrapped_as_full_state_model():
    ss = random_controllable_system(3, 2, 3, seed=1)
    fit = identify_full_state(state_trajectory(ss, 50, seed=2))
    np.testing.assert_array_equal(fit.ss.C, np.eye(3))
    np.testing.assert_array_equal(fit.ss.D, np.zeros((3, 2)))


def test_small_ridge_matches_plain_fit_on_rich_data():
    ss = random_controllable_system(3, 1, 3, seed=3)
    traj = state_trajectory(ss, 80, seed=4)
    plain = identify_full_state(traj)
    ridged = identify_full_state(traj, ridge=1e-10)
    assert np.abs(plain.ss.A - ridged.ss.A).max() <= 1e-6


def test_large_ridge_shrinks_coefficients():
    ss = random_controllable_system(2, 1, 2, seed=5)
    traj = state_trajectory(ss, 60, seed=6)
    sizes = [
        np.abs(identify_full_state(traj, ridge=r).ss.A).max()
        for r in (0.0, 1e2, 1e6)
    ]
    assert sizes[0] > sizes[1] > sizes[2]
    assert sizes[2] <= 1e-2


def test_negative_ridge_rejected():
    ss = random_controllable_system(2, 1, 2, seed=7)
    with pytest.raises(ValueError, match="ridge"):
        identify_full_state(state_trajectory(ss, 30, seed=8), ridge=-1.0)


def test_too_short_record_rejected():
    with pytest.raises(ValueError, match="two samples"):
        identify_full_state(Trajectory(np.zeros((1, 1)), np.zeros((1, 2))))


def test_unexciting_input_warns():
    # Zero input from the origin leaves the regressor rank deficient.
    traj = Trajectory(np.zeros((20, 1)), np.zeros((20, 2)))
    with pytest.warns(RankDeficientRegressorWarning):
        identify_full_state(traj)


def test_noise_degrades_fit_monotonically():
    ss = random_controllable_system(3, 1, 3, seed=9, spectral_radius=0.9)
    errors = []
    for noise in (0.0, 0.01, 0.1):
        # Average over repetitions so the trend is not a single-draw fluke.
        devs = [
            np.abs(
                identify_full_state(
                    state_trajectory(ss, 60, seed=200 + rep, noise_std=noise)
                ).ss.A
                - ss.A
            ).max()
            for rep in range(5)
        ]
        errors.append(np.mean(devs))
    assert errors[0] < errors[1] < errors[2]


def test_identified_model_predicts_one_step():
    ss = random_controllable_system(4, 2, 4, seed=10, spectral_radius=0.95)
    traj = state_trajectory(ss, 70, seed=11)
    fit = identify_full_state(traj)
    # One-step prediction on fresh data from the same system.
    fresh = state_trajectory(ss, 20, seed=12)
    pred = fresh.y[:-1] @ fit.ss.A.T + fresh.u[:-1] @ fit.ss.B.T
    assert np.abs(pred - fresh.y[1:]).max() <= 1e-7
