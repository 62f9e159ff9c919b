"""Scenario configuration: dataclasses, YAML loading, and validation.

Validation is collecting: every violated field is reported, not just the
first one found.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .flocking import ControllerGains
from .sensors import CommConfig, SensorConfig, VioConfig
from .velocity_inference import ResponseModel


class ConfigError(Exception):
    """One or more invalid configuration fields."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class PlantConfig:
    tau: float = 0.5
    v_max: float = 8.0
    a_max: float = 4.0


@dataclass
class FilterConfig:
    """Noise assumptions shared by the estimation stack."""

    track_q_rate: tuple[float, ...] = (1e-4, 1e-4, 0.05, 0.05, 0.6, 0.6)
    track_pos_sigma_floor: float = 0.15
    track_drop_after: float = 2.0
    vel_sigma_comm: float = 0.3
    vel_sigma_inferred: float = 0.8
    focal_tau: float = 0.3
    focal_q_rate: tuple[float, ...] = (1e-4, 1e-4, 0.05, 0.05, 0.5, 0.5)
    fix_sigma: float = 1.5
    fusion_rate: float = 0.2


@dataclass
class TargetConfig:
    kind: str = "static"  # static | waypoints
    position: tuple[float, float] = (0.0, 0.0)
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    speed: float = 0.0
    loop: bool = False


@dataclass
class LayoutConfig:
    kind: str = "grid"  # grid | ring | explicit
    spacing: float = 13.0
    origin: tuple[float, float] = (0.0, 0.0)
    positions: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    dt: float = 0.05
    duration: float = 60.0
    n_agents: int = 6
    comm: bool = True
    safety_radius: float = 2.0
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    gains: ControllerGains = field(
        default_factory=lambda: ControllerGains(
            kp=0.8, kv=0.5, cruise_speed=5.0, d_min=15.0, d_max=40.0, spacing=13.0
        )
    )
    sensors: SensorConfig = field(default_factory=SensorConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    response_model: ResponseModel | None = None


_SECTIONS = {
    "layout": LayoutConfig,
    "gains": ControllerGains,
    "plant": PlantConfig,
    "filters": FilterConfig,
    "target": TargetConfig,
}


def _build(cls, data: dict, errors: list[str], prefix: str):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            errors.append(f"{prefix}: unknown field '{key}'")
    kwargs = {k: v for k, v in data.items() if k in known}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"{prefix}: {exc}")
        return None


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig; raises ConfigError listing every
    violated field."""
    errors: list[str] = []
    data = dict(data)
    config = ScenarioConfig()

    for key in ("name", "seed", "dt", "duration", "n_agents", "comm",
                "safety_radius"):
        if key in data:
            setattr(config, key, data.pop(key))

    for section, cls in _SECTIONS.items():
        if section in data:
            built = _build(cls, data.pop(section), errors, section)
            if built is not None:
                setattr(config, section, built)

    if "sensors" in data:
        sensor_data = dict(data.pop("sensors"))
        vio = _build(VioConfig, sensor_data.pop("vio", {}), errors, "sensors.vio")
        comm = _build(CommConfig, sensor_data.pop("comm", {}), errors,
                      "sensors.comm")
        sensors = _build(SensorConfig, sensor_data, errors, "sensors")
        if sensors is not None:
            if vio is not None:
                sensors.vio = vio
            if comm is not None:
                sensors.comm = comm
            config.sensors = sensors

    if "response_model" in data:
        model_data = data.pop("response_model")
        if model_data is not None:
            model = _build(ResponseModel, model_data, errors, "response_model")
            if model is not None:
                config.response_model = model

    for key in data:
        errors.append(f"unknown top-level field '{key}'")

    errors.extend(validate(config))
    if errors:
        raise ConfigError(errors)
    return config


def validate(config: ScenarioConfig) -> list[str]:
    """Semantic checks across the whole scenario; returns every violation."""
    errors = []
    if not config.dt > 0:
        errors.append("dt must be > 0")
    if not config.duration > 0:
        errors.append("duration must be > 0")
    if config.n_agents < 1:
        errors.append("n_agents must be >= 1")
    if not config.safety_radius > 0:
        errors.append("safety_radius must be > 0")
    sensors = config.sensors
    for name, value in (("bearing_sigma", sensors.bearing_sigma),
                        ("range_sigma_rel", sensors.range_sigma_rel),
                        ("imu_accel_sigma", sensors.imu_accel_sigma),
                        ("target_sigma", sensors.target_sigma)):
        if value < 0:
            errors.append(f"sensors.{name} must be >= 0")
    for name, value in (("dropout_prob", sensors.dropout_prob),
                        ("comm.drop_prob", sensors.comm.drop_prob)):
        if not 0.0 <= value <= 1.0:
            errors.append(f"sensors.{name} must be in [0, 1]")
    if sensors.comm.latency_ticks < 0:
        errors.append("sensors.comm.latency_ticks must be >= 0")
    if config.plant.tau <= 0 or config.plant.v_max <= 0 or config.plant.a_max <= 0:
        errors.append("plant tau/v_max/a_max must be > 0")
    if config.filters.fusion_rate <= 0:
        errors.append("filters.fusion_rate must be > 0")
    if config.target.kind not in ("static", "waypoints"):
        errors.append("target.kind must be 'static' or 'waypoints'")
    elif config.target.kind == "waypoints":
        if len(config.target.waypoints) < 2:
            errors.append("target.waypoints needs at least two points")
        if config.target.speed <= 0:
            errors.append("target.speed must be > 0 for a waypoint target")
    if config.layout.kind not in ("grid", "ring", "explicit"):
        errors.append("layout.kind must be grid, ring, or explicit")
    elif config.n_agents >= 1:
        try:
            positions = initial_positions(config)
        except ValueError as exc:
            errors.append(f"layout: {exc}")
        else:
            for i in range(len(positions)):
                for j in range(i + 1, len(positions)):
                    gap = float(np.linalg.norm(positions[i] - positions[j]))
                    if gap < config.safety_radius:
                        errors.append(
                            f"layout: agents {i} and {j} start {gap:.2f} m apart, "
                            f"inside the safety radius {config.safety_radius}"
                        )
    return errors


def initial_positions(config: ScenarioConfig) -> list[np.ndarray]:
    """Deterministic initial agent positions for the configured layout."""
    layout = config.layout
    n = config.n_agents
    origin = np.asarray(layout.origin, dtype=float)
    if layout.kind == "explicit":
        if len(layout.positions) != n:
            raise ValueError(
                f"explicit layout has {len(layout.positions)} positions "
                f"for {n} agents"
            )
        return [origin + np.asarray(p, dtype=float) for p in layout.positions]
    if layout.kind == "ring":
        if n == 1:
            return [origin.copy()]
        radius = layout.spacing / (2.0 * math.sin(math.pi / n))
        return [
            origin
            + radius
            * np.array([math.cos(2 * math.pi * i / n), math.sin(2 * math.pi * i / n)])
            for i in range(n)
        ]
    # grid: row-major square-ish grid centered on the origin
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    out = []
    for i in range(n):
        r, c = divmod(i, cols)
        offset = np.array(
            [(c - (cols - 1) / 2.0) * layout.spacing,
             (r - (rows - 1) / 2.0) * layout.spacing]
        )
        out.append(origin + offset)
    return out


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: expected a mapping at the top level"])
    return scenario_from_dict(data)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Plain-data view of the scenario, suitable for the log header."""
    out = dataclasses.asdict(config)
    return out
