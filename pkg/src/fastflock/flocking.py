"""State-feedback flocking control with group-velocity feedforward.

The commanded lateral velocity is kp * r + kv * r_dot + v_ff, where r is the
offset from the current position to the position the formation rules ask for,
r_dot its filtered rate, and v_ff a feedforward along the group heading that
ramps down as the target gets close. Bearings further from the group heading
are de-weighted, which damps oscillations fed back from trailing agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import heading_vector, wrap_angle
from .tracking import TrackView

TARGET_MEMBER_ID = -1


@dataclass
class ControllerGains:
    """Gains and formation geometry for the flocking law.

    kp [1/s] and kv [-] are the position/velocity feedback gains;
    cruise_speed is the maximum group speed; d_min/d_max bound the
    feedforward ramp on distance-to-target; spacing is the desired
    inter-agent distance; pair_angle is the bearing-separation threshold
    below which two neighbors are treated as a triangle pair.
    """

    kp: float
    kv: float
    cruise_speed: float
    d_min: float
    d_max: float
    spacing: float
    pair_angle: float = math.pi / 3
    bearing_scale: float = math.pi / 4
    max_neighbors: int = 4
    v_max: float | None = None
    attract_range: float | None = None
    pair_band: float | None = None
    repulse_range: float | None = None
    crowd_range: float | None = None

    def __post_init__(self):
        if self.kp <= 0 or self.kv <= 0:
            raise ValueError("kp and kv must be > 0")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("require 0 < d_min < d_max")
        if self.cruise_speed <= 0 or self.spacing <= 0:
            raise ValueError("cruise_speed and spacing must be > 0")
        if self.v_max is None:
            self.v_max = 1.2 * self.cruise_speed
        if self.attract_range is None:
            # Members beyond this range exert no spacing pull: they are not
            # formation-adjacent, and pulling toward them collapses chains
            # of agents to well below the desired spacing.
            self.attract_range = 1.5 * self.spacing
        if self.pair_band is None:
            # The triangle rule only refines a near-triangle (both members
            # already about one spacing away); slot-assigning distant pairs
            # sends several agents into the same apex.
            self.pair_band = 0.35 * self.spacing
        if self.repulse_range is None:
            # Separation override: inside this range repulsion applies at
            # full strength regardless of the bearing weights.
            self.repulse_range = 0.55 * self.spacing
        if self.crowd_range is None:
            # With any member closer than this the triangle rule disengages;
            # an apex pull must never fight the separation override.
            self.crowd_range = 0.8 * self.spacing


class NeighborInfo(NamedTuple):
    """One neighborhood member: bearing/distance in the local frame plus
    velocity relative to the focal agent."""

    agent_id: int
    bearing: float
    distance: float
    velocity: np.ndarray


@dataclass
class FlockingCommand:
    """Commanded lateral velocity and its decomposition; the three terms
    always sum to `velocity` (a magnitude clamp scales all of them)."""

    velocity: np.ndarray
    position_term: np.ndarray
    velocity_term: np.ndarray
    feedforward: np.ndarray
    offset: np.ndarray


def select_neighbors(
    views: Sequence[TrackView],
    own_position: np.ndarray,
    own_velocity: np.ndarray,
    max_neighbors: int,
) -> list[NeighborInfo]:
    """Nearest-N selection by distance, ties broken by ascending id."""
    candidates = []
    for v in views:
        rel = v.position - own_position
        dist = float(np.linalg.norm(rel))
        candidates.append(
            NeighborInfo(
                agent_id=v.agent_id,
                bearing=math.atan2(rel[1], rel[0]),
                distance=dist,
                velocity=v.velocity - own_velocity,
            )
        )
    candidates.sort(key=lambda m: (m.distance, m.agent_id))
    return candidates[:max_neighbors]


def group_heading(
    center: np.ndarray, goal: np.ndarray, previous: float
) -> float:
    """Angle of the line from the neighborhood center to the goal; holds the
    previous value when the goal sits on the center."""
    d = np.asarray(goal, dtype=float) - np.asarray(center, dtype=float)
    if np.linalg.norm(d) < 1e-9:
        return previous
    return math.atan2(d[1], d[0])


def blend_weights(
    bearings: Sequence[float], psi: float, scale: float = math.pi / 4
) -> np.ndarray:
    """Softmax weights over bearing misalignment with the group heading.

    Sums to one; strictly decreasing in |wrap(bearing - psi)|.
    """
    theta = np.array([abs(wrap_angle(b - psi)) for b in bearings])
    w = np.exp(-theta / scale)
    return w / w.sum()


def group_velocity(
    target_rel: np.ndarray, psi: float, gains: ControllerGains
) -> np.ndarray:
    """Feedforward along the group heading, ramped on distance-to-target."""
    r = float(np.linalg.norm(target_rel))
    if r <= gains.d_min:
        speed = 0.0
    elif r > gains.d_max:
        speed = gains.cruise_speed
    else:
        speed = gains.cruise_speed * (r - gains.d_min) / (gains.d_max - gains.d_min)
    return speed * heading_vector(psi)


def _pair_members(
    members: Sequence[NeighborInfo],
    positions: Sequence[np.ndarray],
    gains: ControllerGains,
) -> dict[int, int]:
    """Greedy pairing of members that are mutually close and close in
    bearing, nearest separations first; each member joins at most one pair.
    A crowded neighborhood (anyone inside crowd_range) disables pairing."""
    if any(m.distance < gains.crowd_range for m in members):
        return {}
    separations = []
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if (
                abs(members[i].distance - gains.spacing) > gains.pair_band
                or abs(members[j].distance - gains.spacing) > gains.pair_band
            ):
                continue
            if (
                float(np.linalg.norm(positions[i] - positions[j]))
                > gains.attract_range
            ):
                continue
            sep = abs(wrap_angle(members[i].bearing - members[j].bearing))
            if sep < gains.pair_angle:
                separations.append((sep, i, j))
    separations.sort()
    paired: dict[int, int] = {}
    for _, i, j in separations:
        if i not in paired and j not in paired:
            paired[i] = j
            paired[j] = i
    return paired


def _triangle_apex(
    p_i: np.ndarray, p_j: np.ndarray, spacing: float, psi: float
) -> np.ndarray:
    """Apex of the triangle with side `spacing` over the pair, on the focal
    agent's side (the nearer of the two mirror candidates, so the commanded
    slot never drags the agent through the pair)."""
    mid = (p_i + p_j) / 2.0
    u = p_j - p_i
    length = float(np.linalg.norm(u))
    height = math.sqrt(max(spacing**2 - (length / 2.0) ** 2, 0.0))
    normal = np.array([-u[1], u[0]]) / length
    a = mid + height * normal
    b = mid - height * normal
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    tol = 1e-6 * (1.0 + height + float(np.linalg.norm(mid)))
    if norm_a < norm_b - tol:
        return a
    if norm_b < norm_a - tol:
        return b
    # Equidistant (focal on the pair line): prefer the side trailing the
    # group heading, then the left of the directed pair line. Both
    # tie-breaks are rotation-invariant, unlike coordinate comparisons.
    diff = float((a - b) @ heading_vector(psi))
    if diff < -tol:
        return a
    if diff > tol:
        return b
    return a


def desired_offset(
    members: Sequence[NeighborInfo], psi: float, gains: ControllerGains
) -> np.ndarray:
    """Weighted formation offset: per isolated neighbor inside the
    attraction range, pull to `spacing` along the line of sight; per
    mutually-close pair, pull to the triangle apex on the focal agent's
    side. Members beyond the attraction range contribute nothing."""
    if not members:
        return np.zeros(2)
    positions = [m.distance * heading_vector(m.bearing) for m in members]
    paired = _pair_members(members, positions, gains)
    offsets = []
    for i, m in enumerate(members):
        j = paired.get(i)
        if j is not None and np.linalg.norm(positions[j] - positions[i]) > 1e-9:
            offsets.append(
                _triangle_apex(positions[i], positions[j], gains.spacing, psi)
            )
        elif m.distance <= gains.attract_range:
            offsets.append(
                heading_vector(m.bearing) * (m.distance - gains.spacing)
            )
        else:
            offsets.append(np.zeros(2))
    weights = blend_weights([m.bearing for m in members], psi, gains.bearing_scale)
    total = np.einsum("i,ij->j", weights, np.array(offsets))
    # Separation override: unweighted, so a close agent repels even from a
    # bearing the blend weights would otherwise ignore.
    for m in members:
        if m.distance < gains.repulse_range:
            total = total + heading_vector(m.bearing) * (
                m.distance - gains.repulse_range
            )
    return total


def _with_target(
    members: Sequence[NeighborInfo],
    target_rel: np.ndarray | None,
    gains: ControllerGains,
) -> list[NeighborInfo]:
    """Append the target as a formation member once it is inside d_min, so
    the approach stops at `spacing` instead of running it over."""
    out = list(members)
    if target_rel is None:
        return out
    r = float(np.linalg.norm(target_rel))
    if 1e-9 < r <= gains.d_min:
        out.append(
            NeighborInfo(
                agent_id=TARGET_MEMBER_ID,
                bearing=math.atan2(target_rel[1], target_rel[0]),
                distance=r,
                velocity=np.zeros(2),
            )
        )
    return out


def flocking_command(
    members: Sequence[NeighborInfo],
    psi: float,
    target_rel: np.ndarray | None,
    gains: ControllerGains,
    offset_rate: np.ndarray | None = None,
) -> FlockingCommand:
    """Evaluate the control law for one tick (stateless)."""
    members_eff = _with_target(members, target_rel, gains)
    offset = desired_offset(members_eff, psi, gains)
    rate = np.zeros(2) if offset_rate is None else np.asarray(offset_rate, float)
    if target_rel is None:
        feedforward = np.zeros(2)
    else:
        feedforward = group_velocity(target_rel, psi, gains)
    position_term = gains.kp * offset
    velocity_term = gains.kv * rate
    raw = position_term + velocity_term + feedforward
    speed = float(np.linalg.norm(raw))
    scale = 1.0 if speed <= gains.v_max else gains.v_max / speed
    return FlockingCommand(
        velocity=raw * scale,
        position_term=position_term * scale,
        velocity_term=velocity_term * scale,
        feedforward=feedforward * scale,
        offset=offset,
    )


class FlockingController:
    """Stateful wrapper: retains the previous offset and group heading and
    low-pass filters the offset rate across ticks."""

    def __init__(self, gains: ControllerGains, rate_cutoff_hz: float = 2.0):
        self.gains = gains
        self.rate_cutoff_hz = rate_cutoff_hz
        self.psi = 0.0
        self.members: list[NeighborInfo] = []
        self._prev_offset: np.ndarray | None = None
        self._rate = np.zeros(2)

    def update(
        self,
        views: Sequence[TrackView],
        own_position: np.ndarray,
        own_velocity: np.ndarray,
        target_rel: np.ndarray | None,
        dt: float,
    ) -> FlockingCommand:
        members = select_neighbors(
            views, own_position, own_velocity, self.gains.max_neighbors
        )
        self.members = members
        if members:
            center = np.mean(
                [m.distance * heading_vector(m.bearing) for m in members], axis=0
            )
        else:
            center = np.zeros(2)
        if target_rel is not None:
            self.psi = group_heading(center, target_rel, self.psi)
        offset = desired_offset(
            _with_target(members, target_rel, self.gains), self.psi, self.gains
        )
        if self._prev_offset is not None:
            raw_rate = (offset - self._prev_offset) / dt
            alpha = dt / (dt + 1.0 / (2.0 * math.pi * self.rate_cutoff_hz))
            self._rate = self._rate + alpha * (raw_rate - self._rate)
        self._prev_offset = offset
        return flocking_command(
            members, self.psi, target_rel, self.gains, offset_rate=self._rate
        )
