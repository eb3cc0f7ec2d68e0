"""Discrete-time state-space systems and the parametric predictors built from them.

Provides simulation, observability analysis, the impulse-response Toeplitz
operator, initial-state reconstruction from a measured window, and a seeded
generator of random controllable test systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .behavioral import DEFAULT_RANK_TOL, _as_signal, numeric_rank


class UnobservableSystemError(ValueError):
    """The pair (A, C) is not observable at the requested tolerance."""


class WindowRankError(ValueError):
    """The measured window is too short to pin down the initial state."""


class InconsistentWindowError(ValueError):
    """The measured window is not a trajectory of the given system."""


@dataclass(frozen=True)
class StateSpace:
    """x(k+1) = A x(k) + B u(k),  y(k) = C x(k) + D u(k)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(
                f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}"
            )
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


def simulate(
    ss: StateSpace, x0, u_seq
) -> tuple[np.ndarray, np.ndarray]:
    """Run the recursion for len(u_seq) steps.

    Returns (y_seq, x_final) where y_seq is (T, p) and x_final is the state
    after the last input has been applied.
    """
    u_arr = _as_signal(u_seq)
    if u_arr.shape[1] != ss.m:
        raise ValueError(f"u_seq has {u_arr.shape[1]} channels, system has {ss.m}")
    x = np.asarray(x0, dtype=float).reshape(ss.n)
    ys = np.empty((len(u_arr), ss.p))
    for k, u in enumerate(u_arr):
        ys[k] = ss.C @ x + ss.D @ u
        x = ss.A @ x + ss.B @ u
    return ys, x


def observability_matrix(ss: StateSpace, depth: int) -> np.ndarray:
    """Stack C, CA, ..., CA^(depth-1)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    blocks = []
    block = ss.C
    for _ in range(depth):
        blocks.append(block)
        block = block @ ss.A
    return np.vstack(blocks)


def lag(ss: StateSpace, tol: float = DEFAULT_RANK_TOL) -> int:
    """Smallest window depth at which the observability matrix reaches rank n.

    Raises UnobservableSystemError when even depth n does not (by the
    Cayley-Hamilton theorem deeper windows cannot help).
    """
    if numeric_rank(observability_matrix(ss, ss.n), tol) < ss.n:
        raise UnobservableSystemError(
            "observability matrix is rank deficient at depth n"
        )
    for depth in range(1, ss.n + 1):
        if numeric_rank(observability_matrix(ss, depth), tol) == ss.n:
            return depth
    raise AssertionError("unreachable")  # pragma: no cover


def toeplitz_impulse(ss: StateSpace, horizon: int) -> np.ndarray:
    """Block lower-triangular map from an input window to the forced response.

    Block (i, j) is D for i == j, C A^(i-j-1) B for i > j, zero above the
    diagonal; the result is (horizon*p, horizon*m).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    markov = [ss.D]
    power = np.eye(ss.n)
    for _ in range(horizon - 1):
        markov.append(ss.C @ power @ ss.B)
        power = power @ ss.A
    out = np.zeros((horizon * ss.p, horizon * ss.m))
    for i in range(horizon):
        for j in range(i + 1):
            out[i * ss.p : (i + 1) * ss.p, j * ss.m : (j + 1) * ss.m] = markov[
                i - j
            ]
    return out


def reconstruct_initial_state(
    ss: StateSpace, u_ini, y_ini, tol: float = 1e-6
) -> np.ndarray:
    """Recover the current state from the most recent measured window.

    Solves y_ini = O x + T u_ini for the state x at the start of the window
    (least squares via orthogonal factorization), checks consistency, then
    propagates x through the window inputs so the returned vector is the
    state *after* the window, i.e. the plant state now.
    """
    u_win = _as_signal(u_ini)
    y_win = _as_signal(y_ini)
    if len(u_win) != len(y_win):
        raise ValueError("u_ini and y_ini must have the same length")
    depth = len(u_win)
    if depth < 1:
        raise ValueError("window must contain at least one sample")
    if u_win.shape[1] != ss.m or y_win.shape[1] != ss.p:
        raise ValueError("window channel counts do not match the system")
    obs = observability_matrix(ss, depth)
    if numeric_rank(obs) < ss.n:
        raise WindowRankError(
            f"window of {depth} samples cannot determine an order-{ss.n} "
            f"state; need at least the system lag"
        )
    forced = toeplitz_impulse(ss, depth) @ u_win.ravel()
    rhs = y_win.ravel() - forced
    x0, _, _, _ = np.linalg.lstsq(obs, rhs, rcond=None)
    residual = np.linalg.norm(obs @ x0 - rhs)
    if residual > tol * (1.0 + np.linalg.norm(rhs)):
        raise InconsistentWindowError(
            f"window does not fit the system: residual {residual:.3e}"
        )
    x = x0
    for u in u_win:
        x = ss.A @ x + ss.B @ u
    return x


def random_controllable_system(
    n: int,
    m: int,
    p: int,
    seed,
    spectral_radius: float = 1.0,
    max_tries: int = 50,
) -> StateSpace:
    """Draw a random system, rescaled to the given spectral radius cap and
    verified controllable and observable; redraws on the (measure-zero)
    failures, errors out after ``max_tries``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        radius = max(abs(np.linalg.eigvals(A)))
        if radius > spectral_radius and radius > 0:
            A *= spectral_radius / radius
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        D = rng.standard_normal((p, m))
        ss = StateSpace(A, B, C, D)
        ctrb = np.hstack(
            [np.linalg.matrix_power(A, k) @ B for k in range(n)]
        )
        if numeric_rank(ctrb) < n:
            continue
        if numeric_rank(observability_matrix(ss, n)) < n:
            continue
        return ss
    raise RuntimeError(
        f"no controllable/observable draw in {max_tries} attempts"
    )


class LtiPlant:
    """Stateful wrapper around a StateSpace for closed-loop runs."""

    def __init__(self, ss: StateSpace, x0=None, dt: float = 1.0):
        self.ss = ss
        self._x = (
            np.zeros(ss.n)
            if x0 is None
            else np.asarray(x0, dtype=float).reshape(ss.n)
        )
        self.dt = dt

    @property
    def m(self) -> int:
        return self.ss.m

    @property
    def p(self) -> int:
        return self.ss.p

    @property
    def state(self) -> np.ndarray:
        """Exact current state (a copy)."""
        return self._x.copy()

    def step(self, u) -> np.ndarray:
        """Apply one input; returns the output paired with it at this time."""
        u = np.asarray(u, dtype=float).reshape(self.ss.m)
        y = self.ss.C @ self._x + self.ss.D @ u
        self._x = self.ss.A @ self._x + self.ss.B @ u
        return y


def write_statespace(ss: StateSpace, path) -> None:
    """Text format: a dimensions line "n m p" then A, B, C, D row-major."""
    path = Path(path)
    lines = [f"{ss.n} {ss.m} {ss.p}"]
    for mat in (ss.A, ss.B, ss.C, ss.D):
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_statespace(path) -> StateSpace:
    """Read the text format written by :func:`write_statespace`."""
    path = Path(path)
    tokens = path.read_text().split()
    if len(tokens) < 3:
        raise ValueError(f"{path}: missing dimensions line")
    n, m, p = (int(t) for t in tokens[:3])
    vals = [float(t) for t in tokens[3:]]
    expected = n * n + n * m + p * n + p * m
    if len(vals) != expected:
        raise ValueError(
            f"{path}: expected {expected} matrix entries, found {len(vals)}"
        )
    pos = 0
    mats = []
    for rows, cols in ((n, n), (n, m), (p, n), (p, m)):
        mats.append(np.array(vals[pos : pos + rows * cols]).reshape(rows, cols))
        pos += rows * cols
    return StateSpace(*mats)
