"""Self-state estimation from neighbor observations, fused with VIO.

The focal agent estimates its own lateral state by running a Kalman filter
whose model is driven by the commanded velocity through a first-order lag,
corrected with position fixes derived from the tracked neighborhood and with
IMU accelerations. The result is blended with the visual-odometry stream
using an adaptive weight that follows the VIO feature quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kalman
from .geometry import rotation
from .tracking import RelativeObservation, TrackView

_H_POS = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])
_H_ACC = np.array([[0, 0, 0, 0, 1.0, 0], [0, 0, 0, 0, 0, 1.0]])


def focal_model(dt: float, tau: float, q_diag) -> kalman.LkfModel:
    """Kinematic model with a first-order velocity lag toward the commanded
    velocity: velocity rows decay by exp(-dt/tau) and receive (1 - exp(-dt/tau))
    of the command."""
    e_d = math.exp(-dt / tau)
    a = np.eye(6)
    a[0, 2] = a[1, 3] = a[2, 4] = a[3, 5] = dt
    a[0, 4] = a[1, 5] = dt * dt / 2.0
    a[2, 2] = a[3, 3] = e_d
    b = np.zeros((6, 2))
    b[2, 0] = b[3, 1] = 1.0 - e_d
    return kalman.LkfModel(a=a, b=b, q=np.diag(np.asarray(q_diag, float)), dt=dt)


@dataclass
class FocalParams:
    """Noise settings for the self-state filter. q_rate is the per-second
    process-noise intensity; fix_sigma/accel_sigma are the assumed standard
    deviations of neighborhood position fixes and IMU accelerations."""

    tau: float = 0.3
    q_rate: tuple[float, ...] = (1e-4, 1e-4, 0.05, 0.05, 0.5, 0.5)
    fix_sigma: float = 1.5
    accel_sigma: float = 0.4
    init_var: tuple[float, ...] = (0.01, 0.01, 0.25, 0.25, 0.25, 0.25)


class SelfStateFilter:
    """Kalman filter over the focal agent's own lateral state.

    Also dead-reckons a velocity-integral position (`integral_position`):
    the position obtained by integrating the velocity estimate alone, with
    no position corrections, kept as a degradation comparator.
    """

    def __init__(self, params: FocalParams, dt: float, initial_position):
        self.params = params
        self.dt = dt
        self.model = focal_model(dt, params.tau, np.asarray(params.q_rate) * dt)
        self.state = np.zeros(6)
        self.state[:2] = np.asarray(initial_position, dtype=float)
        self.cov = np.diag(params.init_var).astype(float)
        self.integral_position = np.asarray(initial_position, dtype=float).copy()

    def step(
        self,
        command: np.ndarray,
        fix: np.ndarray | None,
        accel: np.ndarray | None,
        dt: float,
    ) -> np.ndarray:
        """Predict with the commanded velocity as input, then correct with
        the position fix and the IMU acceleration (in that order)."""
        if dt != self.model.dt:
            self.model = focal_model(
                dt, self.params.tau, np.asarray(self.params.q_rate) * dt
            )
        self.state, self.cov = kalman.predict(
            self.state, self.cov, self.model, control=command, name="self-state"
        )
        if fix is not None:
            meas = kalman.Measurement(
                z=np.asarray(fix, float),
                h=_H_POS,
                r=self.params.fix_sigma**2 * np.eye(2),
            )
            self.state, self.cov = kalman.correct(
                self.state, self.cov, meas, name="self-state"
            )
        if accel is not None:
            meas = kalman.Measurement(
                z=np.asarray(accel, float),
                h=_H_ACC,
                r=self.params.accel_sigma**2 * np.eye(2),
            )
            self.state, self.cov = kalman.correct(
                self.state, self.cov, meas, name="self-state"
            )
        self.integral_position = self.integral_position + self.state[2:4] * dt
        return self.state.copy()


def position_fix(
    views: Sequence[TrackView],
    observations: Sequence[RelativeObservation],
    observer_heading: float,
) -> np.ndarray | None:
    """Own-position candidates from every neighbor that is both tracked and
    freshly observed: tracked position minus the observed relative vector.
    Returns their mean, or None when no neighbor qualifies."""
    by_id = {v.agent_id: v for v in views}
    rot = rotation(observer_heading)
    candidates = []
    for obs in observations:
        view = by_id.get(obs.observed_id)
        if view is None:
            continue
        rel = rot @ (
            obs.distance * np.array([math.cos(obs.bearing), math.sin(obs.bearing)])
        )
        candidates.append(view.position - rel)
    if not candidates:
        return None
    return np.mean(candidates, axis=0)


@dataclass
class VioSample:
    """One visual-odometry output: pose/velocity/acceleration plus the
    feature bookkeeping that drives the fusion weight."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    feature_count: float
    max_features: int
    track_ages: np.ndarray
    mean_track_age: float


def vio_weight_target(sample: VioSample) -> float:
    """Quality score for the VIO stream in [0, 1]: feature count relative to
    capacity times the age of the surviving tracks relative to nominal."""
    if sample.mean_track_age <= 0.0 or sample.max_features <= 0:
        return 0.0
    value = (
        sample.feature_count
        * float(np.sum(sample.track_ages))
        / (sample.mean_track_age * sample.max_features**2)
    )
    return min(max(value, 0.0), 1.0)


def slew_weight(current: float, target: float, rate: float, dt: float) -> float:
    """Move the fusion weight toward its target by rate*dt, stopping exactly
    at the target (no limit-cycle chatter around it)."""
    step = rate * dt
    if abs(current - target) <= step:
        value = target
    elif current > target:
        value = current - step
    else:
        value = current + step
    return min(max(value, 0.0), 1.0)


@dataclass
class FusionState:
    """Blended odometry output for one tick."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    vio_weight: float
    weight_target: float


class OdometryFusion:
    """Position-delta blending of the VIO stream against the self-state
    estimate; runs outside the Kalman filter so either source can be swapped.

    Velocity and acceleration are convex combinations of the two sources;
    position integrates the weighted deltas of both.
    """

    def __init__(self, initial_position, weight: float = 1.0, rate: float = 0.2):
        self.position = np.asarray(initial_position, dtype=float).copy()
        self.vio_weight = weight
        self.rate = rate
        self._prev_vio: np.ndarray | None = None
        self._prev_own: np.ndarray | None = None

    def fuse(
        self,
        vio_position: np.ndarray,
        vio_velocity: np.ndarray,
        vio_acceleration: np.ndarray,
        own_position: np.ndarray,
        own_velocity: np.ndarray,
        own_acceleration: np.ndarray,
        weight: float,
    ) -> FusionState:
        """Blend one tick of both sources with a given weight."""
        if self._prev_vio is None:
            # First sample anchors the integration constant.
            self.position = weight * np.asarray(vio_position, float) + (
                1.0 - weight
            ) * np.asarray(own_position, float)
        else:
            delta_vio = vio_position - self._prev_vio
            delta_own = own_position - self._prev_own
            self.position = self.position + weight * delta_vio + (
                1.0 - weight
            ) * delta_own
        self._prev_vio = np.asarray(vio_position, dtype=float).copy()
        self._prev_own = np.asarray(own_position, dtype=float).copy()
        self.vio_weight = weight
        return FusionState(
            position=self.position.copy(),
            velocity=weight * np.asarray(vio_velocity, float)
            + (1.0 - weight) * np.asarray(own_velocity, float),
            acceleration=weight * np.asarray(vio_acceleration, float)
            + (1.0 - weight) * np.asarray(own_acceleration, float),
            vio_weight=weight,
            weight_target=weight,
        )

    def advance(self, sample: VioSample, own_state: np.ndarray, dt: float) -> FusionState:
        """Slew the weight toward the sample's quality score, then fuse."""
        target = vio_weight_target(sample)
        weight = slew_weight(self.vio_weight, target, self.rate, dt)
        state = self.fuse(
            sample.position,
            sample.velocity,
            sample.acceleration,
            own_state[:2],
            own_state[2:4],
            own_state[4:6],
            weight,
        )
        state.weight_target = target
        return state
