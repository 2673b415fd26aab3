"""Obstacle taxonomy and the onboard perception model.

Cooperative traffic is heard over the coordination bus and never sensed
here.  Everything else (static or moving intruders) passes through a range
gate and, in probabilistic mode, a per-cycle detection draw whose success
rate steps up as the object closes in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .kinematics import UavState

if TYPE_CHECKING:
    from .detection import RegionConfig

SLOW_SPEED = 1.0  # m/s; below this an intruder counts as effectively static

# stream tags keep the per-purpose generators statistically independent
_STREAM_SENSE = 11
_STREAM_PLACEMENT = 23


@dataclass
class Obstacle:
    """A non-cooperative object in the world.

    position is the centre; radius its physical extent.  Distances to an
    obstacle are measured to its surface (centre distance minus radius).
    """

    ident: str
    position: np.ndarray
    radius: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.radius < 0.0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    @property
    def is_static(self) -> bool:
        return math.hypot(self.velocity[0], self.velocity[1]) < SLOW_SPEED


def separation_distance(point, obstacle: Obstacle) -> float:
    """Surface distance from a point to an obstacle (centre minus radius)."""
    dx = obstacle.position[0] - point[0]
    dy = obstacle.position[1] - point[1]
    return math.hypot(dx, dy) - obstacle.radius


@dataclass(frozen=True)
class SensingConfig:
    """Perception gate and reliability.

    detection_range bounds what the sensor can see at all.  In
    "probabilistic" mode each in-range obstacle is detected with a
    probability set by the conflict region it sits in; detection rates never
    decrease as the obstacle closes in.  memory_cycles > 0 keeps an obstacle
    on the sensed list that many cycles past its last successful detection.
    """

    detection_range: float = 80.0
    mode: str = "deterministic"
    p_outer: float = 0.70
    p_middle: float = 0.85
    p_inner: float = 1.0
    memory_cycles: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("deterministic", "probabilistic"):
            raise ValueError(f"unknown sensing mode {self.mode!r}")
        if self.detection_range <= 0.0:
            raise ValueError(f"detection_range must be positive, got {self.detection_range}")
        if not (0.0 <= self.p_outer <= self.p_middle <= self.p_inner <= 1.0):
            raise ValueError(
                "detection probabilities must satisfy "
                f"0 <= p_outer <= p_middle <= p_inner <= 1, got "
                f"({self.p_outer}, {self.p_middle}, {self.p_inner})")
        if self.memory_cycles < 0:
            raise ValueError(f"memory_cycles must be >= 0, got {self.memory_cycles}")


def detection_probability(distance: float, cfg: SensingConfig,
                          regions: "RegionConfig") -> float:
    """Per-cycle detection probability at a given surface distance."""
    if distance > cfg.detection_range:
        return 0.0
    if cfg.mode == "deterministic":
        return 1.0
    if distance <= regions.r_inner:
        return cfg.p_inner
    if distance <= regions.r_middle:
        return cfg.p_middle
    return cfg.p_outer


def sense_rng(seed: int, uav_index: int, cycle: int) -> np.random.Generator:
    """Deterministic per-UAV, per-cycle generator for detection draws."""
    return np.random.default_rng((seed, _STREAM_SENSE, uav_index, cycle))


def placement_rng(seed: int) -> np.random.Generator:
    """Generator reserved for initial-condition sampling."""
    return np.random.default_rng((seed, _STREAM_PLACEMENT))


def sense(world: list[Obstacle], state: UavState, cfg: SensingConfig,
          regions: "RegionConfig", rng: np.random.Generator) -> list[Obstacle]:
    """Return the obstacles perceived this cycle, in world order.

    One uniform draw is consumed per in-range obstacle, in list order, so a
    fixed rng stream gives a reproducible detection pattern.
    """
    out = []
    pos = (state.x, state.y)
    for obs in world:
        d = separation_distance(pos, obs)
        p = detection_probability(d, cfg, regions)
        if p <= 0.0:
            continue
        if p >= 1.0 or rng.random() < p:
            out.append(obs)
    return out


class SensorMemory:
    """Optional short-term track memory layered over `sense`.

    Holds each obstacle on the output list for cfg.memory_cycles cycles
    after its last successful detection, provided it stays inside the
    detection range.  With memory_cycles = 0 this is `sense` unchanged.
    """

    def __init__(self, cfg: SensingConfig, regions: "RegionConfig"):
        self.cfg = cfg
        self.regions = regions
        self._last_seen: dict[str, int] = {}

    def sense(self, world: list[Obstacle], state: UavState, cycle: int,
              rng: np.random.Generator) -> list[Obstacle]:
        detected = sense(world, state, self.cfg, self.regions, rng)
        if self.cfg.memory_cycles == 0:
            return detected
        for obs in detected:
            self._last_seen[obs.ident] = cycle
        fresh = {o.ident for o in detected}
        out = list(detected)
        pos = (state.x, state.y)
        for obs in world:
            if obs.ident in fresh:
                continue
            last = self._last_seen.get(obs.ident)
            if last is None or cycle - last > self.cfg.memory_cycles:
                continue
            if separation_distance(pos, obs) <= self.cfg.detection_range:
                out.append(obs)
        return out
