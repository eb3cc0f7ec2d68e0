"""Trajectory records, Hankel matrices, excitation tests and past/future splits.

Everything downstream (the data-driven controllers and the benchmark
experiments) consumes the types defined here.  A trajectory is a finite
input/output record; stacking its sliding windows as columns gives the
non-parametric predictor the controllers optimize over.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_RANK_TOL = 1e-9


class InsufficientDataWarning(UserWarning):
    """Record is too short for the requested past/future window split."""


def _as_signal(signal) -> np.ndarray:
    """Normalize a signal to a (T, q) float array (1-D input means q = 1)."""
    arr = np.asarray(signal, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"signal must be 1-D or 2-D, got ndim={arr.ndim}")
    return arr


def numeric_rank(mat: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    """Singular-value rank: count of sigma_i > tol * sigma_max."""
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


@dataclass(frozen=True)
class Trajectory:
    """An input/output record of T samples: u is (T, m), y is (T, p).

    Sample k pairs the input applied at time k with the output measured at
    time k (before that input acts on the plant).
    """

    u: np.ndarray
    y: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        u = _as_signal(self.u)
        y = _as_signal(self.y)
        if len(u) != len(y):
            raise ValueError(f"u has {len(u)} samples but y has {len(y)}")
        if len(u) < 1:
            raise ValueError("trajectory must contain at least one sample")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def samples(self) -> int:
        return len(self.u)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]


def hankel(signal, depth: int) -> np.ndarray:
    """Stack the sliding windows of ``signal`` as columns.

    For a (T, q) signal and window ``depth`` L the result is the
    (L*q, T－L+1) matrix whose column j holds samples j .. j+L-1 flattened
    time-major (all q channels of one sample are contiguous).

    Example: signal ((1,0),(0,1),(1,1)) with depth 2 gives
    [[1,0],[0,1],[0,1],[1,1]].
    """
    arr = _as_signal(signal)
    if depth < 1:
        raise ValueError("window depth must be >= 1")
    t_len, q = arr.shape
    if t_len < depth:
        raise ValueError(
            f"signal has {t_len} samples but the window depth is {depth}"
        )
    cols = t_len - depth + 1
    out = np.empty((depth * q, cols))
    for j in range(cols):
        out[:, j] = arr[j : j + depth].ravel()
    return out


def is_persistently_exciting(
    u, order: int, tol: float = DEFAULT_RANK_TOL
) -> tuple[bool, int]:
    """Test whether the window matrix of ``u`` at depth ``order`` has full row rank.

    Returns (flag, numeric_rank).  Full row rank needs at least
    (m+1)*order - 1 samples, so shorter signals simply come back False.
    """
    arr = _as_signal(u)
    window = hankel(arr, order)
    rank = numeric_rank(window, tol)
    return rank == window.shape[0], rank


def min_data_length(m: int, t_ini: int, horizon: int, order_bound: int) -> int:
    """Shortest record that can be persistently exciting of order
    t_ini + horizon + order_bound for an m-input system:
    (m+1)*(t_ini + horizon + order_bound) - 1.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if t_ini < 0 or order_bound < 0:
        raise ValueError("t_ini and order_bound must be >= 0")
    return (m + 1) * (t_ini + horizon + order_bound) - 1


@dataclass(frozen=True)
class DataMatrices:
    """Past/future split of the window matrices of one recorded trajectory.

    ``u_past``/``y_past`` hold the first ``t_ini`` block rows of the depth
    t_ini+horizon window matrices, ``u_future``/``y_future`` the remaining
    ``horizon`` block rows.  All four share the same column count.
    """

    u_past: np.ndarray
    y_past: np.ndarray
    u_future: np.ndarray
    y_future: np.ndarray
    t_ini: int
    horizon: int

    def __post_init__(self):
        cols = {
            self.u_past.shape[1],
            self.y_past.shape[1],
            self.u_future.shape[1],
            self.y_future.shape[1],
        }
        if len(cols) != 1:
            raise ValueError("all four blocks must have the same column count")
        if self.num_columns < 1:
            raise ValueError("data matrices must have at least one column")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.t_ini < 0:
            raise ValueError("t_ini must be >= 0")

    @property
    def num_columns(self) -> int:
        return self.u_future.shape[1]

    @property
    def m(self) -> int:
        return self.u_future.shape[0] // self.horizon

    @property
    def p(self) -> int:
        return self.y_future.shape[0] // self.horizon

    def stacked(self) -> np.ndarray:
        """Vertical stack (u_past, y_past, u_future, y_future)."""
        return np.vstack(
            [self.u_past, self.y_past, self.u_future, self.y_future]
        )


def partition_data(
    traj: Trajectory,
    t_ini: int,
    horizon: int,
    order_bound: int | None = None,
) -> DataMatrices:
    """Split the depth t_ini+horizon window matrices of ``traj`` into
    past and future block rows.

    If ``order_bound`` (an upper bound on the data system's state dimension)
    is supplied and the record is shorter than ``min_data_length`` requires,
    an InsufficientDataWarning is emitted; the matrices are still returned.
    """
    if t_ini < 0:
        raise ValueError("t_ini must be >= 0")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    depth = t_ini + horizon
    if traj.samples < depth:
        raise ValueError(
            f"trajectory has {traj.samples} samples; at least {depth} are "
            f"needed for t_ini={t_ini}, horizon={horizon}"
        )
    if order_bound is not None:
        needed = min_data_length(traj.m, t_ini, horizon, order_bound)
        if traj.samples < needed:
            warnings.warn(
                f"{traj.samples} samples cannot be persistently exciting of "
                f"order {depth + order_bound}; {needed} are needed",
                InsufficientDataWarning,
                stacklevel=2,
            )
    hu = hankel(traj.u, depth)
    hy = hankel(traj.y, depth)
    split_u = t_ini * traj.m
    split_y = t_ini * traj.p
    return DataMatrices(
        u_past=hu[:split_u],
        y_past=hy[:split_y],
        u_future=hu[split_u:],
        y_future=hy[split_y:],
        t_ini=t_ini,
        horizon=horizon,
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write a trajectory as CSV with header t,u1..um,y1..yp."""
    path = Path(path)
    header = (
        ["t"]
        + [f"u{i + 1}" for i in range(traj.m)]
        + [f"y{i + 1}" for i in range(traj.p)]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(traj.samples):
            row = [repr(float(k * traj.dt))]
            row += [repr(float(v)) for v in traj.u[k]]
            row += [repr(float(v)) for v in traj.y[k]]
            writer.writerow(row)


def read_trajectory_csv(
    path, m: int | None = None, p: int | None = None
) -> Trajectory:
    """Read a trajectory CSV written by :func:`write_trajectory_csv`.

    Channel counts are inferred from the header; if ``m``/``p`` are given
    they are validated against it.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        if header[0].strip() != "t":
            raise ValueError(f"{path}: first column must be 't'")
        u_cols = [h for h in header[1:] if re.fullmatch(r"u\d+", h.strip())]
        y_cols = [h for h in header[1:] if re.fullmatch(r"y\d+", h.strip())]
        if 1 + len(u_cols) + len(y_cols) != len(header):
            raise ValueError(f"{path}: header must be t,u1..um,y1..yp")
        m_file, p_file = len(u_cols), len(y_cols)
        if m is not None and m != m_file:
            raise ValueError(f"{path}: expected {m} input columns, found {m_file}")
        if p is not None and p != p_file:
            raise ValueError(f"{path}: expected {p} output columns, found {p_file}")
        times, u_rows, y_rows = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row has {len(row)} fields, header has {len(header)}"
                )
            vals = [float(v) for v in row]
            times.append(vals[0])
            u_rows.append(vals[1 : 1 + m_file])
            y_rows.append(vals[1 + m_file :])
    if not times:
        raise ValueError(f"{path}: no data rows")
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    if dt <= 0:
        dt = 1.0
    return Trajectory(u=np.array(u_rows), y=np.array(y_rows), dt=dt)
