"""Deterministic tick loop: plant dynamics, target trajectories, scenario
orchestration, collision detection, and ground-truth bookkeeping.

Every tick advances all agents synchronously on the previous tick's ground
truth. Each agent's stage runs on its own state plus that read-only snapshot,
so stages may execute in parallel; broadcasts and plant integration happen
after the barrier, in id order. All randomness flows from per-(agent, sensor)
generator streams spawned off the scenario seed.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import ScenarioConfig, initial_positions, scenario_to_dict
from .ego_estimation import (
    FocalParams,
    OdometryFusion,
    SelfStateFilter,
    position_fix,
)
from .flocking import FlockingCommand, FlockingController
from .geometry import wrap_angle
from .sensors import CommChannel, CommConfig, VioEmulator, observe
from .tracking import TrackBank, TrackParams, VelocityReport
from .velocity_inference import VelocityEstimator

LOG_FORMAT_VERSION = 1


class SimulationFault(RuntimeError):
    """Non-finite value produced by an agent stage; names agent and stage."""


@dataclass
class RunArtifacts:
    records: list[dict]
    summary: "metrics_mod.MetricsSummary"
    config: ScenarioConfig


def detect_collisions(
    positions: dict[int, np.ndarray], safety_radius: float
) -> list[tuple[int, int]]:
    """All unordered agent pairs closer than the safety radius."""
    ids = sorted(positions)
    out = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if np.linalg.norm(positions[a] - positions[b]) < safety_radius:
                out.append((a, b))
    return out


class AgentPlant:
    """Point-mass plant: first-order velocity lag toward the command, with
    acceleration and speed caps enforced every step."""

    def __init__(self, tau: float, v_max: float, a_max: float, position):
        self.tau = tau
        self.v_max = v_max
        self.a_max = a_max
        self.position = np.asarray(position, dtype=float).copy()
        self.velocity = np.zeros(2)
        self.acceleration = np.zeros(2)

    def advance(self, command: np.ndarray, dt: float) -> None:
        decay = math.exp(-dt / self.tau)
        v_new = command + (self.velocity - command) * decay
        accel = (v_new - self.velocity) / dt
        a_mag = float(np.linalg.norm(accel))
        if a_mag > self.a_max:
            accel = accel * (self.a_max / a_mag)
            v_new = self.velocity + accel * dt
        speed = float(np.linalg.norm(v_new))
        if speed > self.v_max:
            v_new = v_new * (self.v_max / speed)
            accel = (v_new - self.velocity) / dt
        self.position = self.position + v_new * dt
        self.velocity = v_new
        self.acceleration = accel
        assert np.linalg.norm(self.velocity) <= self.v_max + 1e-9
        assert np.linalg.norm(self.acceleration) <= self.a_max + 1e-9


class StaticTarget:
    def __init__(self, position):
        self._position = np.asarray(position, dtype=float)

    def position(self, t: float) -> np.ndarray:
        return self._position.copy()


class WaypointTarget:
    """Constant-speed piecewise-linear path; holds the last point, or loops."""

    def __init__(self, points, speed: float, loop: bool = False):
        self.points = [np.asarray(p, dtype=float) for p in points]
        self.speed = speed
        self.loop = loop
        legs = [
            float(np.linalg.norm(b - a))
            for a, b in zip(self.points, self.points[1:])
        ]
        if self.loop:
            legs.append(float(np.linalg.norm(self.points[0] - self.points[-1])))
        self.cumulative = np.concatenate([[0.0], np.cumsum(legs)])

    def position(self, t: float) -> np.ndarray:
        total = self.cumulative[-1]
        if total == 0.0:
            return self.points[0].copy()
        s = self.speed * t
        if self.loop:
            s = s % total
        elif s >= total:
            return self.points[-1].copy()
        leg = int(np.searchsorted(self.cumulative, s, side="right") - 1)
        leg = min(leg, len(self.cumulative) - 2)
        frac = (s - self.cumulative[leg]) / (
            self.cumulative[leg + 1] - self.cumulative[leg]
        )
        a = self.points[leg]
        b = self.points[(leg + 1) % len(self.points)]
        return a + frac * (b - a)


def make_trajectory(config: ScenarioConfig):
    target = config.target
    if target.kind == "static":
        return StaticTarget(target.position)
    return WaypointTarget(target.waypoints, target.speed, target.loop)


class Agent:
    """Per-agent simulation state: plant plus the full estimation and
    control stack, with private RNG streams."""

    def __init__(self, agent_id: int, config: ScenarioConfig, position,
                 seed_seq: np.random.SeedSequence, goal_rel: np.ndarray):
        self.id = agent_id
        filters = config.filters
        sensors = config.sensors
        streams = seed_seq.spawn(5)
        self.rng_perception = np.random.default_rng(streams[0])
        self.rng_imu = np.random.default_rng(streams[1])
        self.rng_target = np.random.default_rng(streams[2])
        self.rng_comm = np.random.default_rng(streams[3])
        self.plant = AgentPlant(
            config.plant.tau, config.plant.v_max, config.plant.a_max, position
        )
        self.bank = TrackBank(
            TrackParams(
                q_rate=filters.track_q_rate,
                range_sigma_rel=sensors.range_sigma_rel,
                bearing_sigma=sensors.bearing_sigma,
                pos_sigma_floor=filters.track_pos_sigma_floor,
                vel_sigma=filters.vel_sigma_comm,
                drop_after=filters.track_drop_after,
            ),
            dt=config.dt,
        )
        self.self_filter = SelfStateFilter(
            FocalParams(
                tau=filters.focal_tau,
                q_rate=filters.focal_q_rate,
                fix_sigma=filters.fix_sigma,
                # Assumed measurement noise keeps a floor so noiseless
                # configs still give the filter a valid covariance.
                accel_sigma=max(sensors.imu_accel_sigma, 1e-3),
            ),
            config.dt,
            position,
        )
        self.fusion = OdometryFusion(position, weight=1.0,
                                     rate=filters.fusion_rate)
        self.controller = FlockingController(config.gains)
        self.vel_estimator = VelocityEstimator(
            config.gains, config.response_model, sensors.max_range, sensors.fov
        )
        self.vio = VioEmulator(sensors.vio, position,
                               np.random.default_rng(streams[4]))
        self.channel = CommChannel(
            CommConfig(
                enabled=config.comm,
                latency_ticks=sensors.comm.latency_ticks,
                drop_prob=sensors.comm.drop_prob,
            ),
            self.rng_comm,
        )
        self.heading = math.atan2(goal_rel[1], goal_rel[0])
        self.fused_position = np.asarray(position, dtype=float).copy()
        self.fused_velocity = np.zeros(2)
        self.last_command = FlockingCommand(
            velocity=np.zeros(2),
            position_term=np.zeros(2),
            velocity_term=np.zeros(2),
            feedforward=np.zeros(2),
            offset=np.zeros(2),
        )


class Simulation:
    """One scenario instance; owns the world state and the tick loop."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.trajectory = make_trajectory(config)
        positions = initial_positions(config)
        root = np.random.SeedSequence(config.seed)
        agent_seeds = root.spawn(config.n_agents)
        goal0 = self.trajectory.position(0.0)
        self.agents = [
            Agent(i, config, positions[i], agent_seeds[i], goal0 - positions[i])
            for i in range(config.n_agents)
        ]
        self.tick_index = 0

    def _stage(self, agent: Agent, snapshot: dict[int, np.ndarray],
               target_position: np.ndarray, t: float) -> dict:
        config = self.config
        dt = config.dt
        truth_pos = snapshot[agent.id]
        truth_vel = agent.plant.velocity
        stage = "sense"
        try:
            observations = observe(
                snapshot, agent.id, agent.heading, config.sensors,
                agent.rng_perception, stamp=t,
            )
            vio_sample = agent.vio.sample(
                truth_pos, truth_vel, agent.plant.acceleration, dt
            )
            imu_accel = agent.plant.acceleration + agent.rng_imu.normal(
                0.0, config.sensors.imu_accel_sigma, size=2
            )
            target_rel = (target_position - truth_pos) + agent.rng_target.normal(
                0.0, config.sensors.target_sigma, size=2
            )
            delivered = agent.channel.deliver(self.tick_index)

            stage = "tracker"
            agent.bank.step(dt)
            agent.bank.apply_tick(
                observations, [], agent.fused_position, agent.heading
            )

            stage = "self-state"
            fix = position_fix(
                agent.bank.snapshot(), observations, agent.heading
            )
            own_state = agent.self_filter.step(
                agent.last_command.velocity, fix, imu_accel, dt
            )

            stage = "fusion"
            fused = agent.fusion.advance(vio_sample, own_state, dt)
            agent.fused_position = fused.position
            agent.fused_velocity = fused.velocity

            stage = "velocity-ingest"
            estimates_log = None
            if config.comm:
                reports = [
                    VelocityReport(
                        agent_id=sender, velocity=velocity, stamp=t,
                        sigma=config.filters.vel_sigma_comm,
                    )
                    for sender, velocity in delivered
                ]
            else:
                estimates = agent.vel_estimator.update(
                    agent.bank.snapshot(), fused.position, fused.velocity,
                    target_rel, agent.controller.psi,
                )
                reports = [
                    VelocityReport(
                        agent_id=nid, velocity=velocity, stamp=t,
                        sigma=config.filters.vel_sigma_inferred,
                    )
                    for nid, velocity in estimates
                ]
                estimates_log = {
                    str(nid): _vec(velocity) for nid, velocity in estimates
                }
            agent.bank.apply_tick([], reports, agent.fused_position,
                                  agent.heading)

            stage = "controller"
            command = agent.controller.update(
                agent.bank.snapshot(), fused.position, fused.velocity,
                target_rel, dt,
            )
            agent.last_command = command

            stage = "heading"
            if config.sensors.heading_mode == "goal":
                agent.heading = math.atan2(target_rel[1], target_rel[0])
            elif float(np.linalg.norm(command.velocity)) > 0.2:
                agent.heading = math.atan2(
                    command.velocity[1], command.velocity[0]
                )
        except Exception as exc:
            raise SimulationFault(
                f"agent {agent.id} stage {stage}: {exc}"
            ) from exc

        for label, value in (("command", command.velocity),
                             ("fused", fused.position)):
            if not np.all(np.isfinite(value)):
                raise SimulationFault(
                    f"agent {agent.id} stage {stage}: non-finite {label}"
                )

        return {
            "p": _vec(truth_pos),
            "v": _vec(truth_vel),
            "est_p": _vec(fused.position),
            "est_v": _vec(fused.velocity),
            "own_p": _vec(own_state[:2]),
            "own_int": _vec(agent.self_filter.integral_position),
            "vio_w": float(fused.vio_weight),
            "vio_w_target": float(fused.weight_target),
            "cmd": _vec(command.velocity),
            "cmd_pos": _vec(command.position_term),
            "cmd_vel": _vec(command.velocity_term),
            "cmd_ff": _vec(command.feedforward),
            "heading": float(agent.heading),
            "neighbors": [m.agent_id for m in agent.controller.members],
            "tracks": {
                str(view.agent_id): {
                    "p": _vec(view.position),
                    "v": _vec(view.velocity),
                    "stale": float(view.staleness),
                }
                for view in agent.bank.snapshot()
            },
            **({"vel_est": estimates_log} if estimates_log is not None else {}),
        }

    def tick(self, parallel: bool = False) -> dict:
        """Advance the world one step; returns the tick record."""
        config = self.config
        t = self.tick_index * config.dt
        snapshot = {a.id: a.plant.position.copy() for a in self.agents}
        target_position = self.trajectory.position(t)
        collisions = detect_collisions(snapshot, config.safety_radius)

        if parallel and len(self.agents) > 1:
            with ThreadPoolExecutor(max_workers=len(self.agents)) as pool:
                fragments = list(
                    pool.map(
                        lambda a: self._stage(a, snapshot, target_position, t),
                        self.agents,
                    )
                )
        else:
            fragments = [
                self._stage(a, snapshot, target_position, t)
                for a in self.agents
            ]

        # Barrier: broadcasts and plant integration in id order.
        for sender in self.agents:
            for receiver in self.agents:
                if receiver.id != sender.id:
                    receiver.channel.send(
                        self.tick_index, sender.id, sender.fused_velocity
                    )
        for agent in self.agents:
            agent.plant.advance(agent.last_command.velocity, config.dt)
            if not np.all(np.isfinite(agent.plant.position)):
                raise SimulationFault(
                    f"agent {agent.id} stage plant: non-finite position"
                )

        record = {
            "record": "tick",
            "k": self.tick_index,
            "t": float(t),
            "target": _vec(target_position),
            "collisions": [list(pair) for pair in collisions],
            "agents": {str(a.id): frag for a, frag in zip(self.agents, fragments)},
        }
        self.tick_index += 1
        return record


def _vec(value) -> list[float]:
    return [float(x) for x in value]


def run_scenario(
    config: ScenarioConfig,
    parallel: bool = False,
    log_path: str | Path | None = None,
) -> RunArtifacts:
    """Execute duration/dt ticks and return records plus the metrics summary."""
    sim = Simulation(config)
    n_ticks = int(round(config.duration / config.dt))
    header = {
        "record": "header",
        "format_version": LOG_FORMAT_VERSION,
        "config": scenario_to_dict(config),
    }
    records = [header]
    for _ in range(n_ticks):
        records.append(sim.tick(parallel=parallel))
    # Final collision check on the post-advance world.
    final_positions = {a.id: a.plant.position for a in sim.agents}
    final = detect_collisions(final_positions, config.safety_radius)
    summary = metrics_mod.summarize(records, final_collisions=final)
    records.append(summary_record(summary))
    if log_path is not None:
        write_log(records, log_path)
    return RunArtifacts(records=records, summary=summary, config=config)


def summary_record(summary) -> dict:
    return {"record": "summary", **summary.as_dict()}


def write_log(records: list[dict], path: str | Path) -> None:
    with open(path, "w") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True,
                                    separators=(",", ":")))
            handle.write("\n")


def read_log(path: str | Path) -> list[dict]:
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]
