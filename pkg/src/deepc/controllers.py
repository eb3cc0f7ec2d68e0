"""Finite-horizon predictive controllers and the receding-horizon loop.

Three interchangeable planners share one cost/constraint description:

* ``solve_mpc``        -- model-based; predicts through a StateSpace from a
                          state estimate, states eliminated by substitution.
* ``solve_deepc``      -- data-driven; predicts through the column span of
                          recorded data, pinned to the recent window.
* ``solve_regularized_deepc`` -- adds a one-norm penalty on the column
                          weights and a one-norm-penalized slack on the
                          output window so noisy or nonlinear data cannot
                          render the problem infeasible.

All three reduce to one canonical QP.  Predicted inputs and outputs are
substituted into the cost as linear images of the decision variables
(inputs for the model-based planner, column weights for the data-driven
ones), and their boxes enter as general constraint rows, which keeps the
QP dimension at the number of genuine degrees of freedom.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .behavioral import DataMatrices, Trajectory, _as_signal
from .ltisys import (
    StateSpace,
    observability_matrix,
    reconstruct_initial_state,
    toeplitz_impulse,
)
from .qpcore import QpProblem, QpSettings, QpSolution, embed_one_norm, solve_qp

_VIOLATION_TOL = 1e-6


class InfeasibleStepError(RuntimeError):
    """A closed-loop solve came back infeasible; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


def _cost_matrix(mat, name: str) -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(1)
    elif arr.ndim == 1 and arr.size > 1:
        arr = np.diag(arr)
    elif arr.ndim == 1:
        arr = arr.reshape(1, 1)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.abs(arr - arr.T).max(initial=0.0) > 1e-12 * max(
        1.0, np.abs(arr).max(initial=0.0)
    ):
        raise ValueError(f"{name} must be symmetric")
    return arr


def _bound_vector(val, size: int, default: float) -> np.ndarray:
    if val is None:
        return np.full(size, default)
    arr = np.asarray(val, dtype=float).ravel()
    if arr.size == 1:
        return np.full(size, arr.item())
    if arr.size != size:
        raise ValueError(f"bound must be scalar or length {size}")
    return arr


@dataclass(frozen=True)
class ControlProblem:
    """Horizon, windows, quadratic weights, boxes and regularizer strengths.

    Q weighs output tracking (positive semidefinite), R input effort
    (positive definite).  ``g_penalty`` and ``slack_penalty`` only matter
    for the regularized data-driven planner.  ``steps_per_solve`` is how
    many of the planned inputs the receding-horizon loop applies before
    re-solving.  With ``constrain_first_output`` False, the output box is
    enforced from the second predicted step on, which is the practical
    choice when the first output is already pinned by the past.

    ``soft_output_penalty`` (model-based planner only) replaces the hard
    output box with an exact one-norm penalty at that weight per unit of
    violation, so the plan stays solvable from states the box has already
    been pushed out of; where the hard problem is feasible with margin the
    soft solution coincides with it.
    """

    horizon: int
    t_ini: int
    Q: np.ndarray
    R: np.ndarray
    u_min: np.ndarray | float | None = None
    u_max: np.ndarray | float | None = None
    y_min: np.ndarray | float | None = None
    y_max: np.ndarray | float | None = None
    g_penalty: float = 0.0
    slack_penalty: float = 0.0
    steps_per_solve: int = 1
    constrain_first_output: bool = True
    soft_output_penalty: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.t_ini < 0:
            raise ValueError("t_ini must be >= 0")
        Q = _cost_matrix(self.Q, "Q")
        R = _cost_matrix(self.R, "R")
        q_eigs = np.linalg.eigvalsh(Q)
        if q_eigs.min() < -1e-9 * max(1.0, q_eigs.max()):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        p, m = Q.shape[0], R.shape[0]
        u_lo = _bound_vector(self.u_min, m, -np.inf)
        u_hi = _bound_vector(self.u_max, m, np.inf)
        y_lo = _bound_vector(self.y_min, p, -np.inf)
        y_hi = _bound_vector(self.y_max, p, np.inf)
        if np.any(u_lo > u_hi) or np.any(y_lo > y_hi):
            raise ValueError("lower bounds must not exceed upper bounds")
        if self.g_penalty < 0 or self.slack_penalty < 0:
            raise ValueError("penalties must be nonnegative")
        if self.soft_output_penalty is not None and self.soft_output_penalty <= 0:
            raise ValueError("soft_output_penalty must be positive when set")
        if not 1 <= self.steps_per_solve <= self.horizon:
            raise ValueError("steps_per_solve must be in 1..horizon")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_min", u_lo)
        object.__setattr__(self, "u_max", u_hi)
        object.__setattr__(self, "y_min", y_lo)
        object.__setattr__(self, "y_max", y_hi)

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass
class SolveResult:
    """One open-loop plan: inputs, predicted outputs and bookkeeping."""

    u: np.ndarray
    y: np.ndarray
    g: np.ndarray | None
    output_slack: np.ndarray | None
    objective: float
    status: str
    qp: QpSolution


def _as_reference(r_window, horizon: int, p: int) -> np.ndarray:
    arr = np.asarray(r_window, dtype=float)
    if arr.ndim == 0:
        return np.full((horizon, p), float(arr))
    if arr.ndim == 1:
        if arr.size == p:
            return np.tile(arr, (horizon, 1))
        raise ValueError(f"1-D reference must have {p} entries")
    if arr.shape == (horizon, p):
        return arr.astype(float)
    raise ValueError(f"reference must be ({horizon}, {p}), got {arr.shape}")


def _horizon_weights(cp: ControlProblem):
    q_bar = np.kron(np.eye(cp.horizon), cp.Q)
    r_bar = np.kron(np.eye(cp.horizon), cp.R)
    return q_bar, r_bar


def _output_row_split(cp: ControlProblem):
    """Row indices of the stacked output vector that carry a finite box."""
    bounded_channels = np.where(
        np.isfinite(cp.y_min) | np.isfinite(cp.y_max)
    )[0]
    first_step = 0 if cp.constrain_first_output else 1
    rows = np.array(
        [
            k * cp.p + c
            for k in range(first_step, cp.horizon)
            for c in bounded_channels
        ],
        dtype=int,
    )
    steps = cp.horizon - first_step
    lo = np.tile(cp.y_min[bounded_channels], steps)
    hi = np.tile(cp.y_max[bounded_channels], steps)
    return rows, lo, hi


def _finite_rows(ain, lin, uin):
    """Drop constraint rows that are unbounded on both sides."""
    keep = np.isfinite(lin) | np.isfinite(uin)
    return ain[keep], lin[keep], uin[keep]


def _tracking_objective(cp, u_plan, y_plan, r, g=None, slack=None) -> float:
    err = (y_plan - r).ravel()
    q_bar, r_bar = _horizon_weights(cp)
    val = float(err @ q_bar @ err + u_plan.ravel() @ r_bar @ u_plan.ravel())
    if g is not None and cp.g_penalty > 0:
        val += cp.g_penalty * float(np.abs(g).sum())
    if slack is not None and cp.slack_penalty > 0:
        val += cp.slack_penalty * float(np.abs(slack).sum())
    return val


def solve_mpc(
    ss: StateSpace,
    x_hat,
    r_window,
    cp: ControlProblem,
    settings: QpSettings | None = None,
    warm_start=None,
) -> SolveResult:
    """Plan over the horizon from state estimate ``x_hat``.

    The state trajectory is eliminated through the observability and
    impulse-response operators, so the decision variables are the inputs
    alone; box-constrained output rows become general constraint rows.
    """
    if ss.m != cp.m or ss.p != cp.p:
        raise ValueError("system dimensions do not match the control problem")
    n_hor, m, p = cp.horizon, cp.m, cp.p
    x_hat = np.asarray(x_hat, dtype=float).reshape(ss.n)
    r = _as_reference(r_window, n_hor, p)
    obs = observability_matrix(ss, n_hor)
    toep = toeplitz_impulse(ss, n_hor)
    free_response = obs @ x_hat

    rows_b, y_lo, y_hi = _output_row_split(cp)
    n_u = n_hor * m

    q_bar, r_bar = _horizon_weights(cp)
    err0 = free_response - r.ravel()
    P = 2.0 * (toep.T @ q_bar @ toep + r_bar)
    q = 2.0 * toep.T @ q_bar @ err0

    ain, lin, uin = _finite_rows(
        toep[rows_b], y_lo - free_response[rows_b], y_hi - free_response[rows_b]
    )

    lb = np.tile(cp.u_min, n_hor)
    ub = np.tile(cp.u_max, n_hor)

    n_soft = 0
    if cp.soft_output_penalty is not None and ain.shape[0] > 0:
        # Per output row, one violation variable e >= 0 with cost w*e and
        # rows  a'u - e <= uin,  a'u + e >= lin  (an exact one-norm
        # relaxation of  lin <= a'u <= uin).
        n_soft = ain.shape[0]
        eye = np.eye(n_soft)
        P = np.block(
            [[P, np.zeros((n_u, n_soft))], [np.zeros((n_soft, n_u)), np.zeros((n_soft, n_soft))]]
        )
        q = np.concatenate([q, np.full(n_soft, cp.soft_output_penalty)])
        ain = np.block([[ain, -eye], [ain, eye]])
        lin = np.concatenate([np.full(n_soft, -np.inf), lin])
        uin = np.concatenate([uin, np.full(n_soft, np.inf)])
        lb = np.concatenate([lb, np.zeros(n_soft)])
        ub = np.concatenate([ub, np.full(n_soft, np.inf)])

    sol = solve_qp(
        QpProblem(P, q, lb=lb, ub=ub, Ain=ain, lin=lin, uin=uin),
        settings,
        warm_start,
    )
    u_plan = sol.x[:n_u].reshape(n_hor, m)
    y_plan = (free_response + toep @ sol.x[:n_u]).reshape(n_hor, p)
    return SolveResult(
        u=u_plan,
        y=y_plan,
        g=None,
        output_slack=None,
        objective=_tracking_objective(cp, u_plan, y_plan, r),
        status=sol.status,
        qp=sol,
    )


def _check_window(dm: DataMatrices, u_ini, y_ini, cp: ControlProblem):
    if dm.t_ini != cp.t_ini or dm.horizon != cp.horizon:
        raise ValueError("data matrices do not match the control problem windows")
    if dm.m != cp.m or dm.p != cp.p:
        raise ValueError("data matrices do not match the control problem sizes")
    u_w = _as_signal(u_ini) if np.size(u_ini) else np.zeros((0, dm.m))
    y_w = _as_signal(y_ini) if np.size(y_ini) else np.zeros((0, dm.p))
    if u_w.shape != (cp.t_ini, cp.m):
        raise ValueError(f"u_ini must be ({cp.t_ini}, {cp.m}), got {u_w.shape}")
    if y_w.shape != (cp.t_ini, cp.p):
        raise ValueError(f"y_ini must be ({cp.t_ini}, {cp.p}), got {y_w.shape}")
    return u_w, y_w


def _build_data_problem(dm, u_w, y_w, r, cp, with_slack: bool):
    """Assemble the QP over [column weights, window slack].

    Planned inputs and outputs are linear images of the column weights, so
    the input box and any output boxes enter as general constraint rows
    rather than extra variables.
    """
    n_hor, m, p = cp.horizon, cp.m, cp.p
    n_g = dm.num_columns
    rows_b, y_lo, y_hi = _output_row_split(cp)
    n_u = n_hor * m
    n_sl = cp.t_ini * p if with_slack else 0
    nx = n_g + n_sl

    q_bar, r_bar = _horizon_weights(cp)
    P = np.zeros((nx, nx))
    q = np.zeros(nx)
    r_vec = r.ravel()
    P[:n_g, :n_g] = 2.0 * (
        dm.y_future.T @ q_bar @ dm.y_future
        + dm.u_future.T @ r_bar @ dm.u_future
    )
    q[:n_g] = -2.0 * dm.y_future.T @ q_bar @ r_vec

    n_eq = dm.t_ini * m + dm.t_ini * p
    aeq = np.zeros((n_eq, nx))
    beq = np.zeros(n_eq)
    k = dm.t_ini * m
    aeq[:k, :n_g] = dm.u_past
    beq[:k] = u_w.ravel()
    aeq[k:, :n_g] = dm.y_past
    if with_slack and n_sl:
        aeq[k:, n_g:] = -np.eye(n_sl)
    beq[k:] = y_w.ravel()

    ain = np.zeros((n_u + len(rows_b), nx))
    ain[:n_u, :n_g] = dm.u_future
    ain[n_u:, :n_g] = dm.y_future[rows_b]
    lin = np.concatenate([np.tile(cp.u_min, n_hor), y_lo])
    uin = np.concatenate([np.tile(cp.u_max, n_hor), y_hi])
    ain, lin, uin = _finite_rows(ain, lin, uin)

    prob = QpProblem(P, q, aeq, beq, Ain=ain, lin=lin, uin=uin)
    layout = {"g": (0, n_g), "slack": (n_g, nx)}
    return prob, layout


def _extract_data_solution(dm, sol_x, layout, r, cp, with_slack):
    g0, g1 = layout["g"]
    s0, s1 = layout["slack"]
    g = sol_x[g0:g1]
    u_plan = (dm.u_future @ g).reshape(cp.horizon, cp.m)
    y_plan = (dm.y_future @ g).reshape(cp.horizon, cp.p)
    slack = sol_x[s0:s1].reshape(cp.t_ini, cp.p) if with_slack else None
    objective = _tracking_objective(
        cp, u_plan, y_plan, r, g=g if cp.g_penalty > 0 else None, slack=slack
    )
    return g, u_plan, y_plan, slack, objective


def solve_deepc(
    dm: DataMatrices,
    u_ini,
    y_ini,
    r_window,
    cp: ControlProblem,
    settings: QpSettings | None = None,
    warm_start=None,
) -> SolveResult:
    """Plan through the recorded data: predictions are linear combinations
    of the stored windows whose past block matches (u_ini, y_ini) exactly.

    Exact window matching presumes deterministic data from a linear plant;
    use the regularized variant otherwise.
    """
    u_w, y_w = _check_window(dm, u_ini, y_ini, cp)
    r = _as_reference(r_window, cp.horizon, cp.p)
    prob, layout = _build_data_problem(dm, u_w, y_w, r, cp, with_slack=False)
    sol = solve_qp(prob, settings, warm_start)
    g, u_plan, y_plan, _, objective = _extract_data_solution(
        dm, sol.x, layout, r, cp, with_slack=False
    )
    return SolveResult(
        u=u_plan,
        y=y_plan,
        g=g,
        output_slack=None,
        objective=objective,
        status=sol.status,
        qp=sol,
    )


def solve_regularized_deepc(
    dm: DataMatrices,
    u_ini,
    y_ini,
    r_window,
    cp: ControlProblem,
    settings: QpSettings | None = None,
    warm_start=None,
) -> SolveResult:
    """Data-driven plan with one-norm regularization.

    The output window constraint gains a slack vector (one-norm penalized
    with ``slack_penalty``) so measurement noise or plant nonlinearity
    cannot make the equality system inconsistent, and the column weights
    are one-norm penalized with ``g_penalty``, which biases the plan toward
    combinations of few data windows and suppresses noise overfit.
    """
    u_w, y_w = _check_window(dm, u_ini, y_ini, cp)
    r = _as_reference(r_window, cp.horizon, cp.p)
    prob, layout = _build_data_problem(dm, u_w, y_w, r, cp, with_slack=True)
    splits = []
    if cp.g_penalty > 0:
        prob, split_g = embed_one_norm(prob, cp.g_penalty, layout["g"])
        splits.append(split_g)
    if cp.slack_penalty > 0 and layout["slack"][1] > layout["slack"][0]:
        prob, split_s = embed_one_norm(prob, cp.slack_penalty, layout["slack"])
        splits.append(split_s)
    sol = solve_qp(prob, settings, warm_start)
    x = sol.x
    for split in reversed(splits):
        x = split.restore(x)
    g, u_plan, y_plan, slack, objective = _extract_data_solution(
        dm, x, layout, r, cp, with_slack=True
    )
    return SolveResult(
        u=u_plan,
        y=y_plan,
        g=g,
        output_slack=slack,
        objective=objective,
        status=sol.status,
        qp=sol,
    )


def low_rank_approx(dm: DataMatrices, cutoff) -> DataMatrices:
    """Replace the stacked data matrix by a truncated singular value expansion.

    ``cutoff`` is either a target rank (int >= 1) or a relative singular
    value threshold in (0, 1).  The blocks of the result are generally no
    longer window matrices of any single record; they simply define the
    column space the planners optimize over.
    """
    stacked = dm.stacked()
    left, sv, right = np.linalg.svd(stacked, full_matrices=False)
    if isinstance(cutoff, bool):
        raise ValueError("cutoff must be an int rank or a float threshold")
    if isinstance(cutoff, (int, np.integer)):
        if cutoff < 1:
            raise ValueError("rank cutoff must be >= 1")
        rank = min(int(cutoff), len(sv))
    else:
        cutoff = float(cutoff)
        if not 0.0 < cutoff < 1.0:
            raise ValueError("relative threshold must lie in (0, 1)")
        rank = max(1, int(np.sum(sv > cutoff * sv[0])))
    approx = left[:, :rank] @ np.diag(sv[:rank]) @ right[:rank]
    r0 = dm.t_ini * dm.m
    r1 = r0 + dm.t_ini * dm.p
    r2 = r1 + dm.horizon * dm.m
    return DataMatrices(
        u_past=approx[:r0],
        y_past=approx[r0:r1],
        u_future=approx[r1:r2],
        y_future=approx[r2:],
        t_ini=dm.t_ini,
        horizon=dm.horizon,
    )


class _WarmStartMixin:
    """Carries the previous solve into the next plan call.

    Consecutive receding-horizon problems differ only in their right-hand
    sides, so the previous primal/dual pair is an excellent starting
    iterate, and the penalty parameter the last solve settled on is a
    better initial penalty than a fresh guess.
    """

    _last: SolveResult | None = None

    def _warm(self):
        if self._last is None or self._last.status == "infeasible":
            return None
        return self._last.qp.x, self._last.qp.y

    def _step_settings(self) -> QpSettings | None:
        base = self.settings
        if self._warm() is None or self._last.qp.rho <= 0.0:
            return base
        return replace(base if base is not None else QpSettings(),
                       rho=self._last.qp.rho)

    def _store(self, result: SolveResult) -> SolveResult:
        self._last = result
        return result


class MpcController(_WarmStartMixin):
    """Receding-horizon planner around :func:`solve_mpc`.

    ``state_fn`` supplies the state estimate each step (e.g. exact plant
    state, or a noisy measurement).  Without it the state is reconstructed
    from the recent window through the model.
    """

    def __init__(self, ss, cp, state_fn=None, settings=None):
        self.ss = ss
        self.cp = cp
        self.state_fn = state_fn
        self.settings = settings
        self._last = None

    def plan(self, u_ini, y_ini, r_window) -> SolveResult:
        if self.state_fn is not None:
            x_hat = np.asarray(self.state_fn(), dtype=float)
        else:
            x_hat = reconstruct_initial_state(self.ss, u_ini, y_ini)
        return self._store(
            solve_mpc(
                self.ss,
                x_hat,
                r_window,
                self.cp,
                self._step_settings(),
                self._warm(),
            )
        )


class DeepcController(_WarmStartMixin):
    def __init__(self, dm, cp, settings=None):
        self.dm = dm
        self.cp = cp
        self.settings = settings
        self._last = None

    def plan(self, u_ini, y_ini, r_window) -> SolveResult:
        return self._store(
            solve_deepc(
                self.dm,
                u_ini,
                y_ini,
                r_window,
                self.cp,
                self._step_settings(),
                self._warm(),
            )
        )


class RegularizedDeepcController(_WarmStartMixin):
    def __init__(self, dm, cp, settings=None):
        self.dm = dm
        self.cp = cp
        self.settings = settings
        self._last = None

    def plan(self, u_ini, y_ini, r_window) -> SolveResult:
        return self._store(
            solve_regularized_deepc(
                self.dm,
                u_ini,
                y_ini,
                r_window,
                self.cp,
                self._step_settings(),
                self._warm(),
            )
        )


@dataclass
class StepRecord:
    step: int
    solve_status: str
    objective: float
    solve_ms: float
    violation_count: int
    u: np.ndarray
    y: np.ndarray


@dataclass
class RecedingHorizonResult:
    trajectory: Trajectory
    records: list


def _reference_array(reference, p: int) -> np.ndarray:
    arr = np.asarray(reference, dtype=float)
    if arr.ndim == 0:
        return np.full((1, p), float(arr))
    if arr.ndim == 1:
        if arr.size != p:
            raise ValueError(f"1-D reference must have {p} entries")
        return arr.reshape(1, p)
    if arr.shape[1] != p:
        raise ValueError(f"reference must have {p} columns")
    return arr


def _window_rows(arr: np.ndarray, start: int, count: int) -> np.ndarray:
    idx = np.minimum(np.arange(start, start + count), len(arr) - 1)
    return arr[idx]


def run_receding_horizon(
    plant,
    controller,
    cp: ControlProblem,
    reference,
    steps: int,
    warmup_inputs=None,
) -> RecedingHorizonResult:
    """Drive ``plant`` for ``steps`` steps, re-planning as configured.

    The window (u_ini, y_ini) is seeded by applying ``warmup_inputs``
    (zeros by default) for t_ini steps before control begins; the reference
    is indexed from the first controlled step and its last row is held
    beyond its end.  Raises InfeasibleStepError when a solve reports
    infeasibility.  The returned trajectory covers the controlled steps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    m, p = plant.m, plant.p
    if warmup_inputs is None:
        warm = np.zeros((cp.t_ini, m))
    else:
        warm = np.asarray(warmup_inputs, dtype=float).reshape(cp.t_ini, m)
    ref = _reference_array(reference, p)

    u_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for u in warm:
        y_hist.append(np.asarray(plant.step(u), dtype=float))
        u_hist.append(u.copy())

    us, ys, records = [], [], []
    t = 0
    while t < steps:
        u_ini = (
            np.array(u_hist[-cp.t_ini :])
            if cp.t_ini
            else np.zeros((0, m))
        )
        y_ini = (
            np.array(y_hist[-cp.t_ini :])
            if cp.t_ini
            else np.zeros((0, p))
        )
        r_window = _window_rows(ref, t, cp.horizon)
        tic = time.perf_counter()
        result = controller.plan(u_ini, y_ini, r_window)
        solve_ms = (time.perf_counter() - tic) * 1e3
        if result.status == "infeasible":
            raise InfeasibleStepError(
                t, f"planner reported an infeasible problem at step {t}"
            )
        apply = min(cp.steps_per_solve, steps - t)
        for j in range(apply):
            u_now = result.u[j]
            y_now = np.asarray(plant.step(u_now), dtype=float)
            u_hist.append(u_now)
            y_hist.append(y_now)
            us.append(u_now)
            ys.append(y_now)
            viol = int(
                np.sum(
                    (y_now < cp.y_min - _VIOLATION_TOL)
                    | (y_now > cp.y_max + _VIOLATION_TOL)
                )
            )
            records.append(
                StepRecord(
                    step=t + j,
                    solve_status=result.status,
                    objective=result.objective,
                    solve_ms=solve_ms,
                    violation_count=viol,
                    u=u_now.copy(),
                    y=y_now.copy(),
                )
            )
        t += apply

    traj = Trajectory(
        u=np.array(us), y=np.array(ys), dt=getattr(plant, "dt", 1.0)
    )
    return RecedingHorizonResult(trajectory=traj, records=records)


def closed_loop_cost(traj: Trajectory, reference, cp: ControlProblem) -> float:
    """Realized tracking cost sum (y-r)'Q(y-r) + u'Ru over a closed-loop run."""
    ref = _window_rows(_reference_array(reference, cp.p), 0, traj.samples)
    err = traj.y - ref
    cost = np.einsum("ki,ij,kj->", err, cp.Q, err)
    cost += np.einsum("ki,ij,kj->", traj.u, cp.R, traj.u)
    return float(cost)


def write_step_diagnostics(records, path) -> None:
    """Per-step CSV: step,solve_status,objective,solve_ms,violation_count,u...,y..."""
    path = Path(path)
    if not records:
        raise ValueError("no records to write")
    m = len(records[0].u)
    p = len(records[0].y)
    header = (
        ["step", "solve_status", "objective", "solve_ms", "violation_count"]
        + [f"u{i + 1}" for i in range(m)]
        + [f"y{i + 1}" for i in range(p)]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records:
            row = [
                rec.step,
                rec.solve_status,
                repr(float(rec.objective)),
                repr(float(rec.solve_ms)),
                rec.violation_count,
            ]
            row += [repr(float(v)) for v in rec.u]
            row += [repr(float(v)) for v in rec.y]
            writer.writerow(row)
