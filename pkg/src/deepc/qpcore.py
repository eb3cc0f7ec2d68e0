"""Convex QP backend: operator-splitting (ADMM) with equilibration and polish.

Canonical problem:

    minimize    0.5 x'Px + q'x
    subject to  Aeq x = beq,   lin <= Ain x <= uin,   lb <= x <= ub

P only needs to be positive semidefinite, which matters here because the
data-driven control problems are flat along directions in the kernel of the
stacked data matrix.  Internally the bounds, general rows and equalities are
merged into one row set l <= A x <= u and the classic splitting iteration is
run on the quasi-definite KKT system

    [ P + sigma*I   A' ] [x]   [ sigma*x_k - q ]
    [ A      -diag(1/rho)] [v] = [ z_k - y_k/rho ]

with over-relaxation and a larger penalty on equality rows.  Termination is
on unscaled residual infinity norms; an optional polish step re-solves the
KKT system restricted to the detected active set, which typically lands the
returned point at residuals far below the requested tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

_MIN_SCALING = 1e-4
_MAX_SCALING = 1e4


@dataclass(frozen=True)
class QpProblem:
    """Data of one canonical QP; None constraint fields mean "absent".

    Constraints are equalities ``Aeq x = beq``, variable boxes
    ``lb <= x <= ub`` and general two-sided rows ``lin <= Ain x <= uin``.
    """

    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    Ain: np.ndarray | None = None
    lin: np.ndarray | None = None
    uin: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        n = len(q)
        if P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {P.shape}")
        scale = max(1.0, float(np.abs(P).max()) if P.size else 1.0)
        if np.abs(P - P.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("P must be symmetric")
        Aeq = self.Aeq
        beq = self.beq
        if Aeq is None:
            Aeq = np.zeros((0, n))
            beq = np.zeros(0)
        else:
            Aeq = np.atleast_2d(np.asarray(Aeq, dtype=float))
            beq = np.asarray(beq, dtype=float).ravel()
            if Aeq.shape != (len(beq), n):
                raise ValueError(
                    f"Aeq is {Aeq.shape} but beq has {len(beq)} entries"
                )
        Ain = self.Ain
        if Ain is None:
            Ain = np.zeros((0, n))
            lin = np.zeros(0)
            uin = np.zeros(0)
        else:
            Ain = np.atleast_2d(np.asarray(Ain, dtype=float))
            lin = (
                np.full(Ain.shape[0], -np.inf)
                if self.lin is None
                else np.asarray(self.lin, dtype=float).ravel()
            )
            uin = (
                np.full(Ain.shape[0], np.inf)
                if self.uin is None
                else np.asarray(self.uin, dtype=float).ravel()
            )
            if Ain.shape[1] != n or len(lin) != Ain.shape[0] or len(
                uin
            ) != Ain.shape[0]:
                raise ValueError("Ain/lin/uin shapes are inconsistent")
            if np.any(lin > uin):
                raise ValueError("lin must be <= uin componentwise")
        lb = (
            np.full(n, -np.inf)
            if self.lb is None
            else np.asarray(self.lb, dtype=float).ravel()
        )
        ub = (
            np.full(n, np.inf)
            if self.ub is None
            else np.asarray(self.ub, dtype=float).ravel()
        )
        if len(lb) != n or len(ub) != n:
            raise ValueError("lb and ub must have one entry per variable")
        if np.any(lb > ub):
            raise ValueError("lb must be <= ub componentwise")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "Aeq", Aeq)
        object.__setattr__(self, "beq", beq)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "Ain", Ain)
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "uin", uin)

    @property
    def num_vars(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class QpSettings:
    """Tuning knobs for :func:`solve_qp`.

    ``rho=None`` picks the initial penalty from the scaled data (comparable
    to the largest curvature entry of the scaled quadratic), which keeps the
    splitting balanced even when the cost terms span many orders of
    magnitude; a float fixes the initial penalty explicitly.

    Residual tests use ``eps_abs + eps_rel * scale`` per residual, where
    the scale is the magnitude of the quantities the residual compares
    (so ``eps_rel`` buys tolerance proportional to the problem's own
    numbers).  The default ``eps_rel=0`` demands absolute accuracy, the
    right setting for small well-scaled problems; planners with penalty
    weights many orders above the stage cost benefit from a small
    positive value (around 1e-5 — at 1e-3 the dual test can become so
    loose that returned plans are unusable).
    """

    eps_abs: float = 1e-6
    eps_rel: float = 0.0
    max_iter: int = 50_000
    rho: float | None = None
    rho_eq_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    check_every: int = 25
    scaling_iters: int = 10
    polish: bool = True
    infeas_tol: float = 1e-8
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 100
    adaptive_rho_tol: float = 5.0


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "max_iterations"
    primal_residual: float
    dual_residual: float
    comp_residual: float
    iterations: int
    rho: float = 0.0  # penalty at termination; reuse it when warm starting


def _objective(prob: QpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ prob.P @ x + prob.q @ x)


def _ruiz_scale(P, q, A, iters):
    """Modified Ruiz equilibration of the KKT data plus cost normalization.

    Returns scaled (P, q, A) along with the diagonal scalings D (variables),
    E (rows) and the cost scalar c, so that x = D x_scaled, y = E y_scaled / c.
    """
    n = len(q)
    m = A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col_norm = np.maximum(
            np.abs(Ps).max(axis=0, initial=0.0),
            np.abs(As).max(axis=0, initial=0.0),
        )
        row_norm = np.abs(As).max(axis=1, initial=0.0) if m else np.zeros(0)
        d = 1.0 / np.sqrt(np.clip(col_norm, _MIN_SCALING, _MAX_SCALING))
        e = 1.0 / np.sqrt(np.clip(row_norm, _MIN_SCALING, _MAX_SCALING))
        Ps = d[:, None] * Ps * d[None, :]
        qs = d * qs
        if m:
            As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
        p_cols = np.abs(Ps).max(axis=0, initial=0.0)
        gamma = max(float(p_cols.mean()) if n else 0.0, float(np.abs(qs).max(initial=0.0)))
        gamma = 1.0 / np.clip(gamma, _MIN_SCALING, _MAX_SCALING)
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, D, E, c


def _residuals(prob, A, l, u, x, y):
    """Unscaled KKT residuals (primal, dual, complementarity) at (x, y)."""
    if A.shape[0]:
        ax = A @ x
        z = np.clip(ax, l, u)
        prim = float(np.abs(ax - z).max())
        dual = float(np.abs(prob.P @ x + prob.q + A.T @ y).max())
        mu_low = np.maximum(-y, 0.0)
        mu_up = np.maximum(y, 0.0)
        low_gap = np.where(np.isfinite(l), np.abs(z - l), 1.0)
        up_gap = np.where(np.isfinite(u), np.abs(u - z), 1.0)
        comp_low = np.where(np.isfinite(l), mu_low * low_gap, mu_low)
        comp_up = np.where(np.isfinite(u), mu_up * up_gap, mu_up)
        comp = float(max(comp_low.max(initial=0.0), comp_up.max(initial=0.0)))
    else:
        prim = 0.0
        dual = float(np.abs(prob.P @ x + prob.q).max(initial=0.0))
        comp = 0.0
    return prim, dual, comp


def _tolerances(s, prob, A, l, u, x, y):
    """Per-residual acceptance thresholds at the point (x, y), unscaled."""
    if s.eps_rel == 0.0:
        return s.eps_abs, s.eps_abs, s.eps_abs
    if A.shape[0]:
        ax = A @ x
        z = np.clip(ax, l, u)
        prim_scale = max(
            float(np.abs(ax).max(initial=0.0)), float(np.abs(z).max(initial=0.0))
        )
        aty = float(np.abs(A.T @ y).max(initial=0.0))
        z_mag = float(np.abs(z).max(initial=0.0))
    else:
        prim_scale = 0.0
        aty = 0.0
        z_mag = 0.0
    dual_scale = max(
        float(np.abs(prob.P @ x).max(initial=0.0)),
        aty,
        float(np.abs(prob.q).max(initial=0.0)),
    )
    comp_scale = max(1.0, float(np.abs(y).max(initial=0.0))) * max(1.0, z_mag)
    return (
        s.eps_abs + s.eps_rel * prim_scale,
        s.eps_abs + s.eps_rel * dual_scale,
        s.eps_abs + s.eps_rel * comp_scale,
    )


def _polish(prob, A, l, u, x, y, delta=1e-7, refine=3):
    """Re-solve on the active set detected from the dual signs.

    Builds the equality-constrained KKT system of the rows judged active,
    solves a lightly regularized version with iterative refinement, and
    returns the candidate (x, y) or None when the reduced system is
    degenerate.  The caller keeps the candidate only if it improves the
    residuals, so a wrong active-set guess is harmless.
    """
    n = prob.num_vars
    eq_rows = l == u
    low_act = (~eq_rows) & (y < 0) & np.isfinite(l)
    up_act = (~eq_rows) & (y > 0) & np.isfinite(u)
    act = np.where(eq_rows | low_act | up_act)[0]
    vals = np.where(eq_rows | low_act, l, u)[act]
    k = len(act)
    A_act = A[act]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = prob.P + delta * np.eye(n)
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    kkt[n:, n:] = -delta * np.eye(k)
    rhs = np.concatenate([-prob.q, vals])
    try:
        lu = scipy.linalg.lu_factor(kkt)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = scipy.linalg.lu_solve(lu, rhs)
    # iterative refinement against the unregularized KKT operator
    for _ in range(refine):
        resid = rhs.copy()
        resid[:n] -= prob.P @ sol[:n] + A_act.T @ sol[n:]
        resid[n:] -= A_act @ sol[:n]
        sol += scipy.linalg.lu_solve(lu, resid)
    if not np.all(np.isfinite(sol)):
        return None
    x_pol = sol[:n]
    y_pol = np.zeros(A.shape[0])
    y_pol[act] = sol[n:]
    return x_pol, y_pol


def solve_qp(
    prob: QpProblem,
    settings: QpSettings | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> QpSolution:
    """Solve the QP; deterministic for identical inputs.

    Status is "optimal" once the unscaled primal and dual residuals drop
    below ``eps_abs``, "infeasible" when the iterates produce a certificate
    that no point satisfies the constraints, and "max_iterations" otherwise
    (the best iterate found is still returned).  ``warm_start`` takes an
    unscaled primal/dual pair from a previous solution of a problem with
    the same shape, which typically cuts the iteration count sharply in
    receding-horizon use.
    """
    s = settings or QpSettings()
    n = prob.num_vars
    finite = np.isfinite(prob.lb) | np.isfinite(prob.ub)
    bound_idx = np.where(finite)[0]
    A = np.vstack([prob.Aeq, prob.Ain, np.eye(n)[bound_idx]])
    l = np.concatenate([prob.beq, prob.lin, prob.lb[bound_idx]])
    u = np.concatenate([prob.beq, prob.uin, prob.ub[bound_idx]])
    m = A.shape[0]

    if m == 0:
        x, *_ = np.linalg.lstsq(prob.P, -prob.q, rcond=None)
        prim, dual, comp = _residuals(prob, A, l, u, x, np.zeros(0))
        _, eps_dual, _ = _tolerances(s, prob, A, l, u, x, np.zeros(0))
        status = "optimal" if dual <= eps_dual else "max_iterations"
        return QpSolution(
            x, np.zeros(0), _objective(prob, x), status, prim, dual, comp, 0,
            rho=0.0,
        )

    Ps, qs, As, D, E, c = _ruiz_scale(prob.P, prob.q, A, s.scaling_iters)
    ls = E * l
    us = E * u
    eq_rows_s = ls == us

    if s.rho is not None:
        rho = s.rho
    else:
        rho = float(np.clip(np.abs(Ps).max(initial=0.0), 1e-4, 1e2))
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = Ps + s.sigma * np.eye(n)
    kkt[:n, n:] = As.T
    kkt[n:, :n] = As

    def _factor(rho):
        rho_vec = np.full(m, rho)
        rho_vec[eq_rows_s] *= s.rho_eq_scale
        kkt[n:, n:] = -np.diag(1.0 / rho_vec)
        return rho_vec, scipy.linalg.lu_factor(kkt)

    rho_vec, lu = _factor(rho)

    if warm_start is not None:
        x0, y0 = warm_start
        x = np.asarray(x0, dtype=float).ravel() / D
        y = c * np.asarray(y0, dtype=float).ravel() / E
        z = np.clip(As @ x, ls, us)
    else:
        x = np.zeros(n)
        z = np.clip(np.zeros(m), ls, us)
        y = np.zeros(m)
    status = "max_iterations"
    iterations = s.max_iter
    prim = dual = comp = np.inf

    if warm_start is not None:
        # a warm-started point may already satisfy the tolerance (receding
        # horizon steps with slowly varying data); accept it without iterating
        x_u = D * x
        y_u = E * y / c
        prim, dual, comp = _residuals(prob, A, l, u, x_u, y_u)
        ep, ed, ec = _tolerances(s, prob, A, l, u, x_u, y_u)
        if prim <= ep and dual <= ed and comp <= ec:
            status = "optimal"
            iterations = 0

    if status != "optimal":
        for k in range(1, s.max_iter + 1):
            rhs = np.concatenate([s.sigma * x - qs, z - y / rho_vec])
            sol = scipy.linalg.lu_solve(lu, rhs)
            x_tilde = sol[:n]
            z_tilde = z + (sol[n:] - y) / rho_vec
            x = s.alpha * x_tilde + (1.0 - s.alpha) * x
            z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z
            z_new = np.clip(z_relaxed + y / rho_vec, ls, us)
            dy = rho_vec * (z_relaxed - z_new)
            y = y + dy
            z = z_new

            if k % s.check_every == 0 or k == s.max_iter:
                x_u = D * x
                y_u = E * y / c
                z_u = z / E
                ax = A @ x_u
                px = prob.P @ x_u
                aty = A.T @ y_u
                prim = float(np.abs(ax - z_u).max(initial=0.0))
                dual = float(np.abs(px + prob.q + aty).max(initial=0.0))
                eps_prim = s.eps_abs + s.eps_rel * max(
                    np.abs(ax).max(initial=0.0), np.abs(z_u).max(initial=0.0)
                )
                eps_dual = s.eps_abs + s.eps_rel * max(
                    np.abs(px).max(initial=0.0),
                    np.abs(aty).max(initial=0.0),
                    np.abs(prob.q).max(initial=0.0),
                )
                if prim <= eps_prim and dual <= eps_dual:
                    status = "optimal"
                    iterations = k
                    break
                dy_u = E * dy / c
                dy_norm = float(np.abs(dy_u).max(initial=0.0))
                if dy_norm > 0.0:
                    # Farkas direction candidate, normalized so the
                    # thresholds are scale-free: v certifies that
                    # l <= Ax <= u is empty when A'v = 0 and
                    # u'v+ + l'v- < 0.  For any feasible x the support
                    # is bounded below by -|x|'|A'v|, so demanding the
                    # violation to clear that slop rules out firing on
                    # converged noise directions.
                    v = dy_u / dy_norm
                    pos = v > 0
                    neg = v < 0
                    open_above = pos & ~np.isfinite(u)
                    open_below = neg & ~np.isfinite(l)
                    if not (open_above.any() or open_below.any()):
                        support = float(u[pos] @ v[pos] + l[neg] @ v[neg])
                        atv = A.T @ v
                        at_dir = float(np.abs(atv).max(initial=0.0))
                        a_scale = max(1.0, float(np.abs(A).max(initial=0.0)))
                        finite_bounds = np.concatenate(
                            [l[np.isfinite(l)], u[np.isfinite(u)]]
                        )
                        b_scale = max(
                            1.0,
                            float(np.abs(finite_bounds).max(initial=0.0)),
                        )
                        slop = float(np.abs(x_u) @ np.abs(atv))
                        if at_dir <= s.infeas_tol * a_scale and support < -max(
                            slop, s.infeas_tol * b_scale
                        ):
                            status = "infeasible"
                            iterations = k
                            break
                if s.adaptive_rho and k % s.adaptive_rho_interval == 0:
                    # balance progress: scale rho by the ratio of relative
                    # primal to relative dual residual (square-rooted)
                    prim_rel = prim / max(
                        np.abs(ax).max(initial=0.0),
                        np.abs(z_u).max(initial=0.0),
                        1e-12,
                    )
                    dual_rel = dual / max(
                        np.abs(px).max(initial=0.0),
                        np.abs(aty).max(initial=0.0),
                        np.abs(prob.q).max(initial=0.0),
                        1e-12,
                    )
                    ratio = np.sqrt(prim_rel / max(dual_rel, 1e-16))
                    if (
                        ratio > s.adaptive_rho_tol
                        or ratio < 1.0 / s.adaptive_rho_tol
                    ):
                        rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                        rho_vec, lu = _factor(rho)

    x_best = D * x
    y_best = E * y / c
    if status != "infeasible":
        # for comparing candidate points, judge complementarity relative to
        # the multiplier magnitude (the products scale with the duals)
        def _score(pr, du, co, y_vec):
            return max(pr, du, co / max(1.0, np.abs(y_vec).max(initial=0.0)))

        prim, dual, comp = _residuals(prob, A, l, u, x_best, y_best)
        if s.polish:
            polished = _polish(prob, A, l, u, x_best, y_best)
            if polished is not None:
                pr2, du2, co2 = _residuals(prob, A, l, u, *polished)
                if _score(pr2, du2, co2, polished[1]) < _score(
                    prim, dual, comp, y_best
                ):
                    x_best, y_best = polished
                    prim, dual, comp = pr2, du2, co2
        ep, ed, ec = _tolerances(s, prob, A, l, u, x_best, y_best)
        status = (
            "optimal"
            if prim <= ep and dual <= ed and comp <= ec
            else "max_iterations"
        )

    return QpSolution(
        x=x_best,
        y=y_best,
        objective=_objective(prob, x_best),
        status=status,
        primal_residual=prim,
        dual_residual=dual,
        comp_residual=comp,
        iterations=iterations,
        rho=rho,
    )


@dataclass(frozen=True)
class OneNormSplit:
    """Index map from an embedded problem back to the original variables.

    The original variables keep their positions; one epigraph variable per
    selected entry is appended after index ``num_original``, so restoring a
    solution is a truncation.
    """

    start: int
    stop: int
    num_original: int

    def restore(self, x_split: np.ndarray) -> np.ndarray:
        x_split = np.asarray(x_split, dtype=float).ravel()
        return x_split[: self.num_original].copy()


def embed_one_norm(
    prob: QpProblem, weights, index_range: tuple[int, int]
) -> tuple[QpProblem, OneNormSplit]:
    """Add sum(w_i * |x_i|) over ``index_range`` to the objective.

    Each selected variable v gets an epigraph companion t with two rows
    v - t <= 0 and -v - t <= 0 (so t >= |v|) and cost w*t, which equals
    w*|v| at any optimum with positive weight.  An earlier version used
    the textbook positive/negative variable split; the epigraph form
    avoids duplicating columns of P and A and converges several times
    faster on the large ill-scaled problems this package produces.
    The selected variables must be free (infinite bounds), since the
    companion rows assume the variable itself carries no box.
    """
    start, stop = index_range
    n = prob.num_vars
    if not (0 <= start < stop <= n):
        raise ValueError(f"index range ({start}, {stop}) out of bounds for n={n}")
    k = stop - start
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 1:
        w = np.full(k, w.item())
    if len(w) != k:
        raise ValueError(f"need {k} weights, got {len(w)}")
    if np.any(w < 0):
        raise ValueError("one-norm weights must be nonnegative")
    if np.any(np.isfinite(prob.lb[start:stop])) or np.any(
        np.isfinite(prob.ub[start:stop])
    ):
        raise ValueError("variables to split must have infinite bounds")
    P_new = np.zeros((n + k, n + k))
    P_new[:n, :n] = prob.P
    q_new = np.concatenate([prob.q, w])
    sel = np.eye(n + k)[start:stop]  # picks the selected variables
    t_block = np.eye(n + k)[n:]  # picks the epigraph companions
    Ain_new = np.vstack(
        [
            np.hstack([prob.Ain, np.zeros((prob.Ain.shape[0], k))]),
            sel - t_block,
            -sel - t_block,
        ]
    )
    lin_new = np.concatenate([prob.lin, np.full(2 * k, -np.inf)])
    uin_new = np.concatenate([prob.uin, np.zeros(2 * k)])
    Aeq_new = (
        np.hstack([prob.Aeq, np.zeros((prob.Aeq.shape[0], k))])
        if prob.Aeq.shape[0]
        else np.zeros((0, n + k))
    )
    lb_new = np.concatenate([prob.lb, np.full(k, -np.inf)])
    ub_new = np.concatenate([prob.ub, np.full(k, np.inf)])
    new_prob = QpProblem(
        P=P_new,
        q=q_new,
        Aeq=Aeq_new,
        beq=prob.beq.copy(),
        lb=lb_new,
        ub=ub_new,
        Ain=Ain_new,
        lin=lin_new,
        uin=uin_new,
    )
    return new_prob, OneNormSplit(start=start, stop=stop, num_original=n)


def write_qp_debug(prob: QpProblem, path) -> None:
    """Dump a QP in a plain text form for offline inspection."""
    from pathlib import Path

    lines = [
        f"n {prob.num_vars} meq {prob.Aeq.shape[0]} min {prob.Ain.shape[0]}"
    ]
    for name, mat in (("P", prob.P), ("Aeq", prob.Aeq), ("Ain", prob.Ain)):
        lines.append(name)
        for row in np.atleast_2d(mat):
            if row.size:
                lines.append(" ".join(repr(float(v)) for v in row))
    for name, vec in (
        ("q", prob.q),
        ("beq", prob.beq),
        ("lb", prob.lb),
        ("ub", prob.ub),
        ("lin", prob.lin),
        ("uin", prob.uin),
    ):
        lines.append(name)
        if vec.size:
            lines.append(" ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n")
