"""One-step least-squares identification for full-state measurements.

The baseline the data-driven controllers are compared against: fit
x(k+1) = A x(k) + B u(k) by linear least squares on a recorded trajectory
whose outputs are (noisy) states, and wrap the estimate as a StateSpace
with C = I, D = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .behavioral import Trajectory, numeric_rank
from .ltisys import StateSpace


class RankDeficientRegressorWarning(UserWarning):
    """The stacked [state; input] regressor does not have full column rank."""


@dataclass(frozen=True)
class IdResult:
    ss: StateSpace
    residuals: np.ndarray  # per-state-equation RMS one-step error
    order: int


def identify_full_state(traj: Trajectory, ridge: float = 0.0) -> IdResult:
    """Fit (A, B) from state/input data by (optionally ridge) least squares.

    The trajectory's outputs are taken to be direct state measurements, so
    the model order equals the output dimension.  ``ridge`` adds a squared
    penalty on all coefficients; as it grows the estimates shrink to zero.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if traj.samples < 2:
        raise ValueError("need at least two samples to fit a transition")
    n = traj.p
    m = traj.m
    regressor = np.hstack([traj.y[:-1], traj.u[:-1]])
    target = traj.y[1:]
    if numeric_rank(regressor) < n + m:
        warnings.warn(
            "regressor matrix is rank deficient; the input is not "
            "sufficiently exciting for a unique fit",
            RankDeficientRegressorWarning,
            stacklevel=2,
        )
    if ridge > 0.0:
        gram = regressor.T @ regressor + ridge * np.eye(n + m)
        theta = np.linalg.solve(gram, regressor.T @ target)
    else:
        theta, _, _, _ = np.linalg.lstsq(regressor, target, rcond=None)
    A = theta[:n].T
    B = theta[n:].T
    one_step = regressor @ theta - target
    residuals = np.sqrt(np.mean(one_step**2, axis=0))
    ss = StateSpace(A=A, B=B, C=np.eye(n), D=np.zeros((n, m)))
    return IdResult(ss=ss, residuals=residuals, order=n)
