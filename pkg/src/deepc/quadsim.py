"""Rigid-body quadcopter simulator with noisy full-state measurement.

Twelve states: position, velocity (world frame), ZYX Euler attitude
(roll, pitch, yaw) and body angular rates.  Four inputs: normalized rotor
commands in [0, 1], each mapping linearly to thrust.  Rotors sit on the
body x/y axes (plus configuration); roll and pitch torques come from
differential thrust across the arms, yaw torque from alternating rotor
drag.  Integration is a fixed-step fourth-order Runge-Kutta step per
sample period.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .behavioral import Trajectory, is_persistently_exciting


class DivergenceError(RuntimeError):
    """State left the trusted envelope (blow-up or attitude singularity)."""


class ThrustClampWarning(UserWarning):
    """A commanded thrust was outside [0, 1] and was clamped."""


_CLAMP_SLACK = 1e-7
_STATE_LIMIT = 1e6
_MIN_COS_PITCH = 0.05


@dataclass(frozen=True)
class QuadParams:
    """Physical constants plus sample period and measurement noise level.

    ``thrust_coeff`` converts one rotor command unit to Newtons; the
    default gives 2.5x the per-rotor hover thrust at full command, so
    hover sits at command 0.4.  ``yaw_coeff`` is torque per Newton of
    rotor thrust.  ``noise_std`` is the per-channel standard deviation of
    the additive Gaussian measurement noise; the default keeps the noise
    floor well below the signal levels a near-hover excitation run can
    reach, so one short record still pins down the local behaviour.
    """

    mass: float = 0.5
    gravity: float = 9.81
    inertia: tuple[float, float, float] = (4.9e-3, 4.9e-3, 8.8e-3)
    arm_length: float = 0.25
    thrust_coeff: float = 3.065625
    yaw_coeff: float = 0.016
    dt: float = 0.1
    noise_std: float = 0.003

    def __post_init__(self):
        if min(self.mass, self.gravity, self.arm_length, self.thrust_coeff) <= 0:
            raise ValueError("physical constants must be positive")
        if min(self.inertia) <= 0:
            raise ValueError("inertia entries must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def hover_command(self) -> float:
        """Per-rotor command that exactly cancels gravity when level."""
        return self.mass * self.gravity / (4.0 * self.thrust_coeff)


@dataclass(frozen=True)
class QuadState:
    """Position, velocity, Euler attitude (roll, pitch, yaw), body rates."""

    pos: np.ndarray
    vel: np.ndarray
    attitude: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        for name in ("pos", "vel", "attitude", "rates"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @classmethod
    def hover(cls) -> "QuadState":
        z = np.zeros(3)
        return cls(pos=z.copy(), vel=z.copy(), attitude=z.copy(), rates=z.copy())

    @classmethod
    def from_vector(cls, vec) -> "QuadState":
        vec = np.asarray(vec, dtype=float).reshape(12)
        return cls(pos=vec[:3], vel=vec[3:6], attitude=vec[6:9], rates=vec[9:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, self.attitude, self.rates])


def _derivative(vec: np.ndarray, thrusts: np.ndarray, params: QuadParams):
    vel = vec[3:6]
    roll, pitch, yaw = vec[6:9]
    rates = vec[9:12]
    cr, sr = np.cos(roll), np.sin(roll)
    cp_, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    if abs(cp_) < _MIN_COS_PITCH:
        raise DivergenceError("pitch reached the attitude-chart singularity")

    total = thrusts.sum()
    # world-frame components of the body z axis under ZYX rotation
    body_z = np.array([cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp_])
    accel = body_z * (total / params.mass)
    accel[2] -= params.gravity

    arm = params.arm_length
    torque = np.array(
        [
            arm * (thrusts[1] - thrusts[3]),
            arm * (thrusts[2] - thrusts[0]),
            params.yaw_coeff
            * (thrusts[0] - thrusts[1] + thrusts[2] - thrusts[3]),
        ]
    )
    inertia = np.asarray(params.inertia)
    rate_dot = (torque - np.cross(rates, inertia * rates)) / inertia

    tan_p = sp / cp_
    euler_rates = np.array(
        [
            rates[0] + sr * tan_p * rates[1] + cr * tan_p * rates[2],
            cr * rates[1] - sr * rates[2],
            (sr * rates[1] + cr * rates[2]) / cp_,
        ]
    )
    out = np.empty(12)
    out[:3] = vel
    out[3:6] = accel
    out[6:9] = euler_rates
    out[9:12] = rate_dot
    return out


def _wrap_angles(vec: np.ndarray) -> np.ndarray:
    vec = vec.copy()
    vec[6:9] = np.mod(vec[6:9] + np.pi, 2.0 * np.pi) - np.pi
    return vec


def quad_step(
    state: QuadState,
    thrusts,
    params: QuadParams,
    rng: np.random.Generator | None = None,
) -> tuple[QuadState, np.ndarray]:
    """Advance one sample period; returns (next_state, measured next state).

    Rotor commands are clamped to [0, 1] (with a warning when the excess is
    more than round-off).  The measurement is the next state plus Gaussian
    noise when ``rng`` is given, exact otherwise.  Raises DivergenceError
    when the state blows up or the attitude chart degenerates.
    """
    thr = np.asarray(thrusts, dtype=float).reshape(4)
    if np.any(thr < -_CLAMP_SLACK) or np.any(thr > 1.0 + _CLAMP_SLACK):
        warnings.warn(
            "rotor commands outside [0, 1] were clamped",
            ThrustClampWarning,
            stacklevel=2,
        )
    thr = np.clip(thr, 0.0, 1.0)
    forces = params.thrust_coeff * thr

    vec = state.as_vector()
    h = params.dt
    k1 = _derivative(vec, forces, params)
    k2 = _derivative(vec + 0.5 * h * k1, forces, params)
    k3 = _derivative(vec + 0.5 * h * k2, forces, params)
    k4 = _derivative(vec + h * k3, forces, params)
    nxt = vec + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > _STATE_LIMIT:
        raise DivergenceError("state magnitude exceeded the divergence limit")
    nxt = _wrap_angles(nxt)
    next_state = QuadState.from_vector(nxt)
    if rng is not None and params.noise_std > 0:
        measured = nxt + params.noise_std * rng.standard_normal(12)
    else:
        measured = nxt.copy()
    return next_state, measured


class QuadPlant:
    """Closed-loop wrapper: measure-then-act with one noise draw per step."""

    m = 4
    p = 12

    def __init__(
        self,
        params: QuadParams,
        state: QuadState | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.dt = params.dt
        self._state = state if state is not None else QuadState.hover()
        self._rng = rng
        self._measured = self._measure_current()

    def _measure_current(self) -> np.ndarray:
        vec = self._state.as_vector()
        if self._rng is not None and self.params.noise_std > 0:
            return vec + self.params.noise_std * self._rng.standard_normal(12)
        return vec.copy()

    @property
    def state(self) -> np.ndarray:
        """Exact current state vector (a copy)."""
        return self._state.as_vector()

    def measure(self) -> np.ndarray:
        """Noisy measurement of the current state; stable within a step."""
        return self._measured.copy()

    def step(self, u) -> np.ndarray:
        """Apply rotor commands; returns the measurement paired with them."""
        y_now = self._measured
        self._state, self._measured = quad_step(
            self._state, u, self.params, self._rng
        )
        return y_now


def leveling_command(measurement, params: QuadParams) -> np.ndarray:
    """Rotor commands that nudge the craft back toward hover at the origin.

    A small cascade of proportional-derivative loops computed from a (noisy)
    state measurement: lateral position errors are converted into modest
    roll/pitch targets, attitude and yaw errors into torque commands, and
    altitude error into a collective thrust offset.  The attitude dynamics
    are undamped, so open-loop dithering random-walks the craft into a
    tumble well before a useful record length is reached; wrapping the
    dither around this feedback keeps the data in the near-hover regime.
    """
    s = np.asarray(measurement, dtype=float)
    pos, vel, ang, rate = s[:3], s[3:6], s[6:9], s[9:12]
    g = params.gravity
    # Lateral holds: desired tilt proportional to position/velocity error.
    pitch_ref = np.clip((-1.2 * vel[0] - 0.5 * pos[0]) / g, -0.25, 0.25)
    roll_ref = np.clip((1.2 * vel[1] + 0.5 * pos[1]) / g, -0.25, 0.25)
    acc_roll = -16.0 * (ang[0] - roll_ref) - 6.4 * rate[0]
    acc_pitch = -16.0 * (ang[1] - pitch_ref) - 6.4 * rate[1]
    acc_yaw = -2.25 * ang[2] - 2.1 * rate[2]
    acc_climb = -2.0 * pos[2] - 2.4 * vel[2]
    # Convert desired accelerations into differential rotor commands.
    k = params.thrust_coeff
    d_roll = acc_roll * params.inertia[0] / (params.arm_length * k)
    d_pitch = acc_pitch * params.inertia[1] / (params.arm_length * k)
    d_yaw = acc_yaw * params.inertia[2] / (params.yaw_coeff * k)
    d_common = acc_climb * params.mass / (4.0 * k)
    u = np.full(4, params.hover_command + d_common)
    u[1] += 0.5 * d_roll
    u[3] -= 0.5 * d_roll
    u[2] += 0.5 * d_pitch
    u[0] -= 0.5 * d_pitch
    u += 0.25 * d_yaw * np.array([1.0, -1.0, 1.0, -1.0])
    return u


def collect_excitation_data(
    params: QuadParams,
    samples: int,
    band: float = 0.05,
    seed=0,
    max_retries: int = 6,
) -> tuple[Trajectory, int]:
    """Record an excitation run near hover.

    Each command is the :func:`leveling_command` for the current (noisy)
    measurement plus per-rotor dither uniform in ``+- band``, clipped to
    [0, 1].  The leveling feedback is required because the rigid-body
    attitude is an undamped double integrator: pure dither tumbles the
    craft long before enough samples are recorded.

    On divergence the band is halved and the run redrawn, up to
    ``max_retries`` attempts.  Returns the trajectory together with the
    largest window depth at which the input is persistently exciting.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    if band <= 0:
        raise ValueError("band must be positive")
    last_err: DivergenceError | None = None
    for attempt in range(max_retries):
        width = band * 0.5**attempt
        rng = np.random.default_rng(
            np.random.SeedSequence([_entropy_int(seed), attempt])
        )
        plant = QuadPlant(params, QuadState.hover(), rng)
        us = np.empty((samples, 4))
        ys = np.empty((samples, 12))
        try:
            for k in range(samples):
                u = leveling_command(plant.measure(), params)
                u += rng.uniform(-width, width, size=4)
                us[k] = np.clip(u, 0.0, 1.0)
                ys[k] = plant.step(us[k])
        except DivergenceError as err:
            last_err = err
            continue
        traj = Trajectory(u=us, y=ys, dt=params.dt)
        pe_order = 0
        # full row rank is impossible beyond (T+1)/(m+1)
        for depth in range(1, (samples + 1) // 5 + 1):
            ok, _ = is_persistently_exciting(us, depth)
            if not ok:
                break
            pe_order = depth
        return traj, pe_order
    raise DivergenceError(
        f"excitation diverged in all {max_retries} attempts"
    ) from last_err


def _entropy_int(seed) -> int:
    return int(seed) & 0xFFFFFFFF
