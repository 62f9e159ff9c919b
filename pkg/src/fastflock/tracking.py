"""Bank of per-neighbor Kalman filters.

Each observable agent gets its own constant-acceleration filter fed by
bearing/range observations (converted into the observer's local frame) and by
communicated or inferred velocities. Mutation happens only in the owning
agent's tick.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kalman
from .geometry import rotation, wrap_angle

log = logging.getLogger(__name__)

_H_POS = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])
_H_VEL = np.array([[0, 0, 1.0, 0, 0, 0], [0, 0, 0, 1.0, 0, 0]])


@dataclass
class RelativeObservation:
    """One bearing/range sighting of `observed_id` by `observer_id`.

    The bearing is measured in the observer's body frame (relative to its
    heading); distance in meters.
    """

    observer_id: int
    observed_id: int
    bearing: float
    distance: float
    stamp: float

    def __post_init__(self):
        if not self.distance > 0.0:
            raise ValueError("observation distance must be > 0")
        if not (-math.pi < self.bearing <= math.pi):
            raise ValueError("bearing must lie in (-pi, pi]")


class VelocityReport(NamedTuple):
    """A velocity measurement for one tracked agent (communicated or inferred)."""

    agent_id: int
    velocity: np.ndarray
    stamp: float
    sigma: float | None = None


class TrackView(NamedTuple):
    agent_id: int
    position: np.ndarray
    velocity: np.ndarray
    staleness: float


@dataclass
class NeighborTrack:
    agent_id: int
    state: np.ndarray
    cov: np.ndarray
    last_pos_stamp: float
    last_vel_stamp: float
    staleness: float = 0.0


@dataclass
class TrackParams:
    """Noise model and lifecycle settings for the filter bank.

    q_rate is the per-second process-noise intensity for each state; the
    per-step Q is q_rate * dt. Position measurement noise grows with range:
    sigma^2 = (d * range_sigma_rel)^2 + (d * bearing_sigma)^2, floored at
    pos_sigma_floor.
    """

    q_rate: tuple[float, ...] = (1e-4, 1e-4, 0.05, 0.05, 0.6, 0.6)
    range_sigma_rel: float = 0.1
    bearing_sigma: float = math.radians(1.0)
    pos_sigma_floor: float = 0.15
    vel_sigma: float = 0.3
    drop_after: float = 2.0
    init_vel_var: float = 25.0
    init_acc_var: float = 10.0

    def pos_sigma(self, distance: float) -> float:
        var = (distance * self.range_sigma_rel) ** 2 + (
            distance * self.bearing_sigma
        ) ** 2
        return max(math.sqrt(var), self.pos_sigma_floor)


class TrackBank:
    """One Kalman filter per observable agent, keyed by id."""

    def __init__(self, params: TrackParams, dt: float):
        self.params = params
        self.dt = dt
        self.model = kalman.constant_acceleration_model(
            dt, np.asarray(params.q_rate) * dt
        )
        self.tracks: dict[int, NeighborTrack] = {}
        self.dropped_stale = 0
        self.dropped_unknown = 0

    def ingest_position(
        self,
        obs: RelativeObservation,
        observer_position: np.ndarray,
        observer_heading: float,
    ) -> None:
        """Apply a bearing/range observation as a position correction.

        The first sighting of an id spawns a track at the measured position
        with zero velocity/acceleration and wide initial covariance.
        """
        local = obs.distance * np.array(
            [math.cos(obs.bearing), math.sin(obs.bearing)]
        )
        z = np.asarray(observer_position, dtype=float) + rotation(
            observer_heading
        ) @ local
        sigma = self.params.pos_sigma(obs.distance)
        track = self.tracks.get(obs.observed_id)
        if track is None:
            cov = np.diag(
                [
                    sigma**2,
                    sigma**2,
                    self.params.init_vel_var,
                    self.params.init_vel_var,
                    self.params.init_acc_var,
                    self.params.init_acc_var,
                ]
            )
            state = np.concatenate([z, np.zeros(4)])
            self.tracks[obs.observed_id] = NeighborTrack(
                agent_id=obs.observed_id,
                state=state,
                cov=cov,
                last_pos_stamp=obs.stamp,
                last_vel_stamp=-math.inf,
            )
            return
        if obs.stamp < track.last_pos_stamp:
            self.dropped_stale += 1
            log.debug(
                "dropping stale observation of %d (stamp %.3f < %.3f)",
                obs.observed_id,
                obs.stamp,
                track.last_pos_stamp,
            )
            return
        meas = kalman.Measurement(
            z=z, h=_H_POS, r=sigma**2 * np.eye(2), stamp=obs.stamp
        )
        track.state, track.cov = kalman.correct(
            track.state, track.cov, meas, name=f"track-{obs.observed_id}"
        )
        track.last_pos_stamp = obs.stamp
        track.staleness = 0.0

    def ingest_velocity(
        self,
        agent_id: int,
        velocity: np.ndarray,
        stamp: float,
        sigma: float | None = None,
    ) -> None:
        """Apply a velocity correction; velocities for unseen ids are dropped."""
        track = self.tracks.get(agent_id)
        if track is None:
            self.dropped_unknown += 1
            log.debug("dropping velocity for untracked agent %d", agent_id)
            return
        s = self.params.vel_sigma if sigma is None else sigma
        meas = kalman.Measurement(
            z=np.asarray(velocity, dtype=float),
            h=_H_VEL,
            r=s**2 * np.eye(2),
            stamp=stamp,
        )
        track.state, track.cov = kalman.correct(
            track.state, track.cov, meas, name=f"track-{agent_id}"
        )
        track.last_vel_stamp = stamp
        track.staleness = 0.0

    def step(self, dt: float) -> None:
        """Predict every track forward and retire the stale ones."""
        if not dt > 0.0:
            raise ValueError("dt must be > 0")
        if dt != self.model.dt:
            self.model = kalman.constant_acceleration_model(
                dt, np.asarray(self.params.q_rate) * dt
            )
        for track in self.tracks.values():
            track.state, track.cov = kalman.predict(
                track.state, track.cov, self.model, name=f"track-{track.agent_id}"
            )
            track.staleness += dt
        for tid in [t for t, tr in self.tracks.items() if tr.staleness > self.params.drop_after]:
            del self.tracks[tid]

    def apply_tick(
        self,
        observations: list[RelativeObservation],
        velocities: list[VelocityReport],
        observer_position: np.ndarray,
        observer_heading: float,
    ) -> None:
        """Apply one tick's inputs in the canonical order: position
        corrections by ascending id, then velocity corrections by ascending
        id. Makes the bank state independent of input-list permutations."""
        for obs in sorted(observations, key=lambda o: o.observed_id):
            self.ingest_position(obs, observer_position, observer_heading)
        for report in sorted(velocities, key=lambda r: r.agent_id):
            self.ingest_velocity(
                report.agent_id, report.velocity, report.stamp, report.sigma
            )

    def snapshot(self) -> list[TrackView]:
        """Read-only view for the controller and velocity inference, sorted
        by id for determinism."""
        return [
            TrackView(
                agent_id=tid,
                position=track.state[:2].copy(),
                velocity=track.state[2:4].copy(),
                staleness=track.staleness,
            )
            for tid, track in sorted(self.tracks.items())
        ]
