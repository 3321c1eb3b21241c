"""Nonlinear cart-pole plant: dynamics, integration, sensing, estimation.

State vectors are ordered ``(theta, pos, theta_dot, pos_dot)``. The pole
angle is measured from the upright position, so ``theta = 0`` is the
inverted (unstable) equilibrium and ``theta = pi`` hangs straight down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import InvalidArgumentError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of one cart-pole.

    ``pole_inertia`` is about the pole's center of mass; left as ``None`` it
    defaults to a uniform rod of length ``2 * com_distance``.
    """

    cart_mass: float = 0.5
    pole_mass: float = 0.2
    com_distance: float = 0.3
    pole_inertia: Optional[float] = None
    motor_gain: float = 1.5
    cart_friction: float = 0.1
    pole_damping: float = 0.001
    gravity: float = 9.81
    track_limit: float = 0.25
    voltage_limit: float = 10.0

    def __post_init__(self):
        if self.pole_inertia is None:
            object.__setattr__(
                self, "pole_inertia", self.pole_mass * self.com_distance**2 / 3.0
            )
        for name in ("cart_mass", "pole_mass", "com_distance", "pole_inertia",
                     "motor_gain", "gravity", "track_limit", "voltage_limit"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be positive and finite, got {value!r}")
        for name in ("cart_friction", "pole_damping"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be non-negative, got {value!r}")


@dataclass(frozen=True)
class PlantState:
    theta: float = 0.0
    pos: float = 0.0
    theta_dot: float = 0.0
    pos_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.pos, self.theta_dot, self.pos_dot])

    @classmethod
    def from_array(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (4,):
            raise InvalidArgumentError(f"state must have 4 entries, got shape {x.shape}")
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class Disturbance:
    """Additive horizontal force on the cart and torque on the pole."""

    force: float = 0.0
    torque: float = 0.0


@dataclass(frozen=True)
class SensorConfig:
    """Encoder resolution and additive noise.

    A resolution of ``None`` disables quantization. ``ideal=True`` models a
    sensor that reports the full true state (velocities included), bypassing
    the finite-difference estimator.
    """

    angle_resolution: Optional[int] = 4096
    position_resolution: Optional[int] = 10000
    angle_noise_std: float = 0.0
    position_noise_std: float = 0.0
    filter_alpha: float = 0.7
    ideal: bool = False

    def __post_init__(self):
        for name in ("angle_resolution", "position_resolution"):
            value = getattr(self, name)
            if value is not None and (int(value) != value or value <= 0):
                raise InvalidArgumentError(f"{name} must be a positive integer or None")
        for name in ("angle_noise_std", "position_noise_std"):
            if not getattr(self, name) >= 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if not 0.0 < self.filter_alpha <= 1.0:
            raise InvalidArgumentError("filter_alpha must lie in (0, 1]")


@dataclass(frozen=True)
class Measurement:
    theta_meas: float
    pos_meas: float
    timestamp: float


@dataclass(frozen=True)
class EstimatorState:
    prev_measurement: Optional[Measurement] = None
    filtered_state: Optional[np.ndarray] = field(default=None, compare=False)
    filter_alpha: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.filter_alpha <= 1.0:
            raise InvalidArgumentError("filter_alpha must lie in (0, 1]")


def _derivative(theta, pos_dot, theta_dot, u, force, torque, p):
    # Scalar core shared by the public API and the integrator hot loop.
    M, m, l, J = p.cart_mass, p.pole_mass, p.com_distance, p.pole_inertia
    sin_t = math.sin(theta)
    cos_t = math.cos(theta)
    ml = m * l
    F = p.motor_gain * u - p.cart_friction * pos_dot + force
    a11 = M + m
    a12 = ml * cos_t
    a22 = J + ml * l
    b1 = F + ml * theta_dot * theta_dot * sin_t
    b2 = ml * p.gravity * sin_t - p.pole_damping * theta_dot + torque
    det = a11 * a22 - a12 * a12
    pos_dd = (b1 * a22 - a12 * b2) / det
    theta_dd = (a11 * b2 - a12 * b1) / det
    return theta_dd, pos_dd


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"non-finite input {v!r}")


def cartpole_derivative(x: PlantState, u: float, d: Disturbance, p: PlantParams) -> np.ndarray:
    """Time derivative ``(theta_dot, pos_dot, theta_ddot, pos_ddot)`` of the state.

    The cart is driven by ``motor_gain * u - cart_friction * pos_dot + d.force``
    and the pole by ``-pole_damping * theta_dot + d.torque``; the coupled
    2x2 mass matrix is solved on every call.
    """
    _check_finite(x.theta, x.pos, x.theta_dot, x.pos_dot, u, d.force, d.torque)
    theta_dd, pos_dd = _derivative(x.theta, x.pos_dot, x.theta_dot, u, d.force, d.torque, p)
    return np.array([x.theta_dot, x.pos_dot, theta_dd, pos_dd])


def _rk4(th, s, thd, sd, u, force, torque, p, dt):
    # The dynamics do not depend on the cart position, so only the angle and
    # the two velocities need intermediate stage values.
    k1a, k1b = _derivative(th, sd, thd, u, force, torque, p)
    h = 0.5 * dt
    th2, thd2, sd2 = th + h * thd, thd + h * k1a, sd + h * k1b
    k2a, k2b = _derivative(th2, sd2, thd2, u, force, torque, p)
    th3, thd3, sd3 = th + h * thd2, thd + h * k2a, sd + h * k2b
    k3a, k3b = _derivative(th3, sd3, thd3, u, force, torque, p)
    th4, thd4, sd4 = th + dt * thd3, thd + dt * k3a, sd + dt * k3b
    k4a, k4b = _derivative(th4, sd4, thd4, u, force, torque, p)
    w = dt / 6.0
    return (
        th + w * (thd + 2.0 * thd2 + 2.0 * thd3 + thd4),
        s + w * (sd + 2.0 * sd2 + 2.0 * sd3 + sd4),
        thd + w * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
        sd + w * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
    )


def integrate_step(x: PlantState, u: float, d: Disturbance, p: PlantParams, dt: float) -> PlantState:
    """Advance ``x`` by ``dt`` with one classical Runge-Kutta step (``u``, ``d`` held)."""
    if not dt >= 0:
        raise InvalidArgumentError(f"dt must be non-negative, got {dt!r}")
    _check_finite(x.theta, x.pos, x.theta_dot, x.pos_dot, u, d.force, d.torque)
    if dt == 0:
        return x
    return PlantState(*_rk4(x.theta, x.pos, x.theta_dot, x.pos_dot, u, d.force, d.torque, p, dt))


def simulate_hold(x: PlantState, u: float, d: Disturbance, p: PlantParams, dt: float,
                  steps: int, track_limit: Optional[float] = None):
    """Run ``steps`` integration steps with a constant input.

    Returns ``(state, completed_steps)``. When ``track_limit`` is given the
    loop stops right after the first step that leaves the track, so the
    caller can record a fault.
    """
    th, s, thd, sd = x.theta, x.pos, x.theta_dot, x.pos_dot
    for k in range(steps):
        th, s, thd, sd = _rk4(th, s, thd, sd, u, d.force, d.torque, p, dt)
        if track_limit is not None and abs(s) > track_limit:
            return PlantState(th, s, thd, sd), k + 1
    return PlantState(th, s, thd, sd), steps


def quantize(value: float, counts_per_unit: Optional[float]) -> float:
    if counts_per_unit is None:
        return value
    return float(np.rint(value * counts_per_unit)) / counts_per_unit


def measure(x: PlantState, cfg: SensorConfig, rng: Optional[np.random.Generator] = None,
            timestamp: float = 0.0) -> Measurement:
    """Encoder reading of angle and position: Gaussian noise, then quantization."""
    theta = x.theta
    pos = x.pos
    if cfg.angle_noise_std > 0:
        theta += cfg.angle_noise_std * rng.standard_normal()
    if cfg.position_noise_std > 0:
        pos += cfg.position_noise_std * rng.standard_normal()
    if cfg.angle_resolution is not None:
        counts = cfg.angle_resolution / TWO_PI
        theta = float(np.rint(theta * counts)) * (TWO_PI / cfg.angle_resolution)
    pos = quantize(pos, cfg.position_resolution)
    return Measurement(theta, pos, timestamp)


def low_pass(previous, raw, alpha: float):
    """One step of ``y <- alpha * raw + (1 - alpha) * y``."""
    return alpha * np.asarray(raw, dtype=float) + (1.0 - alpha) * np.asarray(previous, dtype=float)


def estimate_state(est: EstimatorState, m: Measurement, Ts: float):
    """Backward-difference velocities followed by a first-order low-pass.

    Returns the updated estimator and the filtered 4-vector estimate. The
    first call reports zero velocities and seeds the filter with the raw
    vector.
    """
    if not Ts > 0:
        raise InvalidArgumentError(f"Ts must be positive, got {Ts!r}")
    prev = est.prev_measurement
    if prev is None:
        raw = np.array([m.theta_meas, m.pos_meas, 0.0, 0.0])
    else:
        if not m.timestamp > prev.timestamp:
            raise InvalidArgumentError(
                f"timestamps must increase: {prev.timestamp!r} -> {m.timestamp!r}"
            )
        raw = np.array([
            m.theta_meas,
            m.pos_meas,
            (m.theta_meas - prev.theta_meas) / Ts,
            (m.pos_meas - prev.pos_meas) / Ts,
        ])
    if est.filtered_state is None:
        filtered = raw
    else:
        filtered = low_pass(est.filtered_state, raw, est.filter_alpha)
    return replace(est, prev_measurement=m, filtered_state=filtered), filtered.copy()


def apply_actuation(u: float, p: PlantParams) -> float:
    """Clamp the motor voltage to the actuator limits."""
    _check_finite(u)
    return min(max(u, -p.voltage_limit), p.voltage_limit)


class StateEstimator(TransformerMixin, BaseEstimator):
    """Estimator transformer turning a measurement sequence into state estimates.

    Parameters
    ----------
    sample_time : float
        Spacing of consecutive measurements in seconds.
    alpha : float
        Low-pass coefficient in ``(0, 1]``; 1 disables filtering.

    ``transform`` maps an array of shape ``(n_samples, 2)`` holding
    ``(theta_meas, pos_meas)`` rows to ``(n_samples, 4)`` filtered states.
    """

    def __init__(self, sample_time=0.04, alpha=0.7):
        self.sample_time = sample_time
        self.alpha = alpha

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != 2:
            raise InvalidArgumentError("expected columns (theta_meas, pos_meas)")
        if not self.sample_time > 0:
            raise InvalidArgumentError("sample_time must be positive")
        EstimatorState(filter_alpha=self.alpha)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_samples=1)
        est = EstimatorState(filter_alpha=self.alpha)
        out = np.empty((X.shape[0], 4))
        for k, (theta, pos) in enumerate(X):
            est, out[k] = estimate_state(
                est, Measurement(float(theta), float(pos), k * self.sample_time), self.sample_time
            )
        return out
