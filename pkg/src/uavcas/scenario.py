"""Scenario configuration: YAML loading, validation, and world generation.

A scenario fixes everything a run needs: airframe and region parameters,
sensing model, resolver settings, the reference paths, obstacles, and
initial conditions.  Loading is strict; an unknown key or out-of-range value
raises ScenarioError naming the offending field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields
from typing import Any

import numpy as np
import yaml

from .detection import RegionConfig
from .dmpc import DmpcConfig
from .kinematics import UavState, VehicleParams
from .paths import (ReferencePath, TrackerConfig, build_triangle_path,
                    circumradius_for_length)
from .reactive import ReactiveConfig
from .sensing import Obstacle, SensingConfig, placement_rng

STRATEGIES = ("hierarchical", "dmpc-only")

PATH_CROSS_TOL = 1.0  # m; closer than this counts as an intersection


class ScenarioError(ValueError):
    """Configuration rejected; the message names the field at fault."""


@dataclass(frozen=True)
class BusConfig:
    transport: str = "inproc"
    base_port: int = 47810
    max_stale_cycles: int = 10

    def __post_init__(self) -> None:
        if self.transport not in ("inproc", "udp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if not (1024 <= self.base_port <= 65000):
            raise ValueError(f"base_port out of range: {self.base_port}")
        if self.max_stale_cycles < 1:
            raise ValueError(f"max_stale_cycles must be >= 1, got {self.max_stale_cycles}")


@dataclass(frozen=True)
class EngineConfig:
    parallel: bool = False
    log_trajectory: bool = True


@dataclass(frozen=True)
class PathGenConfig:
    """Recipe for the standard crossing-circuit layout: `count` rounded
    triangular loops of equal length, centres spread on a circle, each
    rotated so every pair of loops intersects."""

    count: int = 5
    target_length: float = 1500.0
    corner_radius: float = 60.0
    center_spread: float = 120.0
    sample_spacing: float = 0.5

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.target_length <= 0:
            raise ValueError(f"target_length must be positive, got {self.target_length}")
        if self.corner_radius <= 0:
            raise ValueError(f"corner_radius must be positive, got {self.corner_radius}")
        if self.center_spread < 0:
            raise ValueError(f"center_spread must be >= 0, got {self.center_spread}")
        if self.sample_spacing <= 0:
            raise ValueError(f"sample_spacing must be positive, got {self.sample_spacing}")


@dataclass
class Scenario:
    name: str = "unnamed"
    strategy: str = "hierarchical"
    cycles: int = 5000
    seed: int = 1
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    regions: RegionConfig = field(default_factory=RegionConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    dmpc: DmpcConfig = field(default_factory=DmpcConfig)
    reactive: ReactiveConfig = field(default_factory=ReactiveConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    bus: BusConfig = field(default_factory=BusConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    paths: list[ReferencePath] = field(default_factory=list)
    initial_states: Any = "random-non-conflicting"
    obstacles: list[Obstacle] = field(default_factory=list)


def paths_cross(a: ReferencePath, b: ReferencePath,
                tol: float = PATH_CROSS_TOL) -> bool:
    """True when polyline a passes within tol of polyline b anywhere."""
    for p in a.points[::4]:
        if b.closest(p).distance < tol:
            return True
    return False


def generate_paths(gen: PathGenConfig) -> list[ReferencePath]:
    """Build the crossing-circuit layout and verify every pair intersects."""
    circumradius = circumradius_for_length(gen.target_length, gen.corner_radius)
    if gen.corner_radius >= 0.5 * circumradius:
        raise ScenarioError(
            f"paths.generate.corner_radius: {gen.corner_radius} too large for "
            f"target_length {gen.target_length}")
    out = []
    for k in range(gen.count):
        angle = 2.0 * math.pi * k / gen.count
        center = (gen.center_spread * math.cos(angle),
                  gen.center_spread * math.sin(angle))
        out.append(build_triangle_path(center, circumradius, gen.corner_radius,
                                       rotation=angle,
                                       sample_spacing=gen.sample_spacing))
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            if not paths_cross(out[i], out[j]):
                raise ScenarioError(
                    f"paths.generate: paths {i} and {j} do not intersect; "
                    "increase center_spread or adjust geometry")
    return out


def resolve_initial_states(sc: Scenario) -> list[UavState]:
    """Initial states per vehicle, one per path.

    Explicit states pass through after a length check.  The
    "random-non-conflicting" policy draws a starting arclength per path from
    the placement stream of the scenario seed and rejects any draw with two
    vehicles (or a vehicle and an obstacle) closer than r_outer.
    """
    if isinstance(sc.initial_states, list):
        if len(sc.initial_states) != len(sc.paths):
            raise ScenarioError(
                f"initial_states: got {len(sc.initial_states)} states for "
                f"{len(sc.paths)} paths")
        return list(sc.initial_states)
    if sc.initial_states != "random-non-conflicting":
        raise ScenarioError(
            f"initial_states: expected a list or 'random-non-conflicting', "
            f"got {sc.initial_states!r}")
    rng = placement_rng(sc.seed)
    clear = sc.regions.r_outer
    for _ in range(500):
        states = []
        for path in sc.paths:
            s = float(rng.uniform(0.0, path.length))
            p = path.point_at(s)
            t = path.tangent_at(s)
            states.append(UavState(float(p[0]), float(p[1]),
                                   math.atan2(t[1], t[0])))
        ok = True
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                if math.hypot(states[i].x - states[j].x,
                              states[i].y - states[j].y) <= clear:
                    ok = False
                    break
            if not ok:
                break
            for obs in sc.obstacles:
                d = (math.hypot(obs.position[0] - states[i].x,
                                obs.position[1] - states[i].y) - obs.radius)
                if d <= clear:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return states
    raise ScenarioError(
        "initial_states: could not find a non-conflicting placement in 500 "
        "attempts; reduce vehicle count or enlarge the layout")


# ---------------------------------------------------------------------------
# YAML loading

_SECTIONS = {
    "vehicle": VehicleParams,
    "regions": RegionConfig,
    "sensing": SensingConfig,
    "dmpc": DmpcConfig,
    "reactive": ReactiveConfig,
    "tracker": TrackerConfig,
    "bus": BusConfig,
    "engine": EngineConfig,
}

_TOP_KEYS = set(_SECTIONS) | {"name", "strategy", "cycles", "seed", "paths",
                              "initial_states", "obstacles"}


def _build_section(name: str, cls, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"{name}: expected a mapping, got {type(raw).__name__}")
    allowed = {f.name for f in dc_fields(cls)}
    for key in raw:
        if key not in allowed:
            raise ScenarioError(f"{name}.{key}: unknown field")
    if cls is DmpcConfig and "rates" in raw:
        raw = dict(raw, rates=tuple(float(r) for r in raw["rates"]))
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name}: {exc}") from None


def _build_obstacle(idx: int, raw: Any, paths: list[ReferencePath]) -> Obstacle:
    where = f"obstacles[{idx}]"
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    ident = raw.get("id", f"obs-{idx}")
    radius = float(raw.get("radius", 0.0))
    vel = (float(raw.get("vx", 0.0)), float(raw.get("vy", 0.0)))
    if "x" in raw and "y" in raw:
        pos = (float(raw["x"]), float(raw["y"]))
        extra = set(raw) - {"id", "radius", "vx", "vy", "x", "y"}
    elif "path" in raw and "at_fraction" in raw:
        p = int(raw["path"])
        if not (0 <= p < len(paths)):
            raise ScenarioError(f"{where}.path: no path {p}")
        frac = float(raw["at_fraction"])
        if not (0.0 <= frac <= 1.0):
            raise ScenarioError(f"{where}.at_fraction: must be in [0, 1], got {frac}")
        s = frac * paths[p].length
        base = paths[p].point_at(s)
        tan = paths[p].tangent_at(s)
        offset = float(raw.get("offset", 0.0))  # + is left of travel
        pos = (base[0] - offset * tan[1], base[1] + offset * tan[0])
        extra = set(raw) - {"id", "radius", "vx", "vy", "path", "at_fraction", "offset"}
    else:
        raise ScenarioError(f"{where}: need either x/y or path/at_fraction")
    if extra:
        raise ScenarioError(f"{where}.{sorted(extra)[0]}: unknown field")
    try:
        return Obstacle(ident=str(ident), position=np.array(pos),
                        radius=radius, velocity=np.array(vel))
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: expected a mapping at top level")
    for key in data:
        if key not in _TOP_KEYS:
            raise ScenarioError(f"{key}: unknown field")
    sections = {name: _build_section(name, cls, data.get(name))
                for name, cls in _SECTIONS.items()}

    strategy = data.get("strategy", "hierarchical")
    if strategy not in STRATEGIES:
        raise ScenarioError(
            f"strategy: expected one of {STRATEGIES}, got {strategy!r}")
    cycles = data.get("cycles", 5000)
    if not isinstance(cycles, int) or cycles < 1:
        raise ScenarioError(f"cycles: must be a positive integer, got {cycles!r}")
    seed = data.get("seed", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ScenarioError(f"seed: must be a non-negative integer, got {seed!r}")

    raw_paths = data.get("paths")
    if not isinstance(raw_paths, dict):
        raise ScenarioError("paths: expected a mapping with 'generate' or 'files'")
    if "generate" in raw_paths:
        gen = _build_section("paths.generate", PathGenConfig, raw_paths["generate"])
        paths = generate_paths(gen)
    elif "files" in raw_paths:
        entries = raw_paths["files"]
        if not isinstance(entries, list) or not entries:
            raise ScenarioError("paths.files: expected a non-empty list")
        paths = []
        for i, item in enumerate(entries):
            try:
                paths.append(ReferencePath.load_xy(str(item), closed=True))
            except (OSError, ValueError) as exc:
                raise ScenarioError(f"paths.files[{i}]: {exc}") from None
    else:
        raise ScenarioError("paths: need either 'generate' or 'files'")

    raw_init = data.get("initial_states", "random-non-conflicting")
    if isinstance(raw_init, list):
        init = []
        for i, item in enumerate(raw_init):
            if not isinstance(item, dict) or not {"x", "y", "phi"} <= set(item):
                raise ScenarioError(f"initial_states[{i}]: need x, y, phi")
            init.append(UavState(float(item["x"]), float(item["y"]),
                                 float(item["phi"])))
        initial_states: Any = init
    else:
        initial_states = raw_init

    raw_obs = data.get("obstacles", [])
    if raw_obs is None:
        raw_obs = []
    if not isinstance(raw_obs, list):
        raise ScenarioError("obstacles: expected a list")
    obstacles = [_build_obstacle(i, raw, paths) for i, raw in enumerate(raw_obs)]
    idents = [o.ident for o in obstacles]
    if len(set(idents)) != len(idents):
        raise ScenarioError("obstacles: duplicate id")

    sc = Scenario(name=str(data.get("name", "unnamed")), strategy=strategy,
                  cycles=cycles, seed=seed, paths=paths,
                  initial_states=initial_states, obstacles=obstacles,
                  **sections)
    _cross_validate(sc)
    return sc


def _cross_validate(sc: Scenario) -> None:
    worst = max(abs(r) for r in sc.dmpc.rates)
    if worst > sc.vehicle.omega_max + 1e-12:
        raise ScenarioError(
            f"dmpc.rates: rate {worst} exceeds vehicle.omega_max "
            f"{sc.vehicle.omega_max}")
    if isinstance(sc.initial_states, list) and len(sc.initial_states) != len(sc.paths):
        raise ScenarioError(
            f"initial_states: got {len(sc.initial_states)} states for "
            f"{len(sc.paths)} paths")


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML in {path}: {exc}") from None
    return scenario_from_dict(data)


def default_scenario(**overrides) -> Scenario:
    """The standard five-vehicle crossing-circuit evaluation scenario."""
    paths = generate_paths(PathGenConfig())
    # one tower per circuit, each on a straight stretch (a detour over a
    # corner arc would exceed the turn-rate budget and be refused), offset so
    # a straight pass violates the safety bubble, and at least 50 m from
    # every other circuit so no second vehicle stream has to thread around
    # it; on these circuits only the third straight, pushed outward, has
    # that much room
    spots = [
        (0, 0.755, -24.0),
        (1, 0.77, -24.0),
        (2, 0.785, -24.0),
        (3, 0.76, -24.0),
        (4, 0.80, -24.0),
    ]
    obstacles = [
        _build_obstacle(i, {"id": f"tower-{chr(ord('a') + i)}", "path": p,
                            "at_fraction": f, "offset": off, "radius": 8.0},
                        paths)
        for i, (p, f, off) in enumerate(spots)
    ]
    sc = Scenario(name="five-uav-crossing", paths=paths, obstacles=obstacles,
                  reactive=ReactiveConfig(direction_rule="farthest-side"))
    for key, value in overrides.items():
        if not hasattr(sc, key):
            raise ScenarioError(f"{key}: unknown field")
        setattr(sc, key, value)
    _cross_validate(sc)
    return sc
