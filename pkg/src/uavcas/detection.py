"""Concentric conflict regions and the three-layer conflict detectors.

Each vehicle watches an augmented obstacle set: cooperative neighbours known
through bus messages plus whatever its own sensor picked up.  Conflicts are
classified by range band.  The outer band flags static blockages of the
upcoming reference path, the middle band flags predicted trajectory
conflicts over the planning horizon, and the inner band flags imminent
straight-line approaches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bus import StateMessage
from .kinematics import UavState, VehicleParams
from .paths import ReferencePath
from .sensing import Obstacle, separation_distance


@dataclass(frozen=True)
class RegionConfig:
    """Concentric range bands around each vehicle, metres.

    r_safe is the hard minimum separation; going below it is a failure.
    r_inner, r_middle, r_outer bound the reactive, trajectory-planning and
    path-replanning bands.  tau_w is the straight-line extrapolation window
    for the inner detector.  The margins widen the middle and outer
    detectors beyond the bare safety radius to absorb tracking and
    prediction error.
    """

    r_safe: float = 30.0
    r_inner: float = 55.0
    r_middle: float = 70.0
    r_outer: float = 80.0
    tau_w: float = 3.0
    margin_middle: float = 5.0
    # strictly above margin_release: a detour is planned to clear by
    # margin_outer and must not keep tripping the engagement hold when flown
    margin_outer: float = 6.0
    margin_release: float = 5.0

    def __post_init__(self) -> None:
        if not (0.0 < self.r_safe < self.r_inner < self.r_middle < self.r_outer):
            raise ValueError(
                "region radii must satisfy 0 < r_safe < r_inner < r_middle "
                f"< r_outer, got ({self.r_safe}, {self.r_inner}, "
                f"{self.r_middle}, {self.r_outer})")
        if self.tau_w <= 0.0:
            raise ValueError(f"tau_w must be positive, got {self.tau_w}")
        if self.margin_middle < 0.0 or self.margin_outer < 0.0:
            raise ValueError("margins must be >= 0")
        if self.margin_release < 0.0:
            raise ValueError("margins must be >= 0")


def classify_region(distance: float, cfg: RegionConfig) -> str:
    """Band name for a surface distance: collision / inner / middle / outer / clear.

    Bands are half-open: each boundary value belongs to the closer band.
    """
    if distance < 0.0:
        raise ValueError(f"separation distance must be >= 0, got {distance}")
    if distance <= cfg.r_safe:
        return "collision"
    if distance <= cfg.r_inner:
        return "inner"
    if distance <= cfg.r_middle:
        return "middle"
    if distance <= cfg.r_outer:
        return "outer"
    return "clear"


@dataclass
class Threat:
    """One conflicting object, as seen by one vehicle."""

    ident: str
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    distance: float       # current surface distance
    time_to_min: float    # seconds until the predicted minimum
    min_distance: float   # predicted minimum surface distance


@dataclass
class AugmentedObstacleSet:
    """Everything one vehicle must avoid this cycle: the freshest state
    message per cooperative neighbour plus its own sensed obstacles."""

    neighbors: list[StateMessage] = field(default_factory=list)
    obstacles: list[Obstacle] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.neighbors) + len(self.obstacles)


def build_augmented_set(messages: list[StateMessage],
                        sensed: list[Obstacle]) -> AugmentedObstacleSet:
    """Combine bus traffic and sensor output; keeps the newest message per
    sender and orders neighbours by id for reproducible iteration."""
    newest: dict[int, StateMessage] = {}
    for msg in messages:
        held = newest.get(msg.sender)
        if held is None or msg.cycle > held.cycle:
            newest[msg.sender] = msg
    neighbors = [newest[s] for s in sorted(newest)]
    return AugmentedObstacleSet(neighbors=neighbors, obstacles=list(sensed))


def predict_positions(entry, current_cycle: int, horizon: int,
                      params: VehicleParams) -> np.ndarray:
    """Expected positions of a threat at the next `horizon` cycles.

    Neighbour messages may be several cycles old; predictions are aligned on
    absolute cycle index.  A published input sequence is rolled out from the
    message state; past its end (or without one) the reference lookahead in
    the message is used, and failing that constant velocity.  Obstacles
    extrapolate at their current velocity.  Returns an (horizon, 2) array
    for steps current_cycle + 1 .. current_cycle + horizon.
    """
    dt = params.cycle_dt
    if isinstance(entry, Obstacle):
        steps = np.arange(1, horizon + 1, dtype=np.float64)[:, None]
        return entry.position[None, :] + steps * dt * entry.velocity[None, :]

    msg = entry
    offset = current_cycle - msg.cycle  # >= 1 when messages lag one cycle
    out = np.empty((horizon, 2))
    if msg.sequence is not None and len(msg.sequence) > 0:
        xs, ys, phis = kernels.rollout_xy(msg.x, msg.y, msg.phi,
                                          np.asarray(msg.sequence),
                                          params.speed, dt)
        px = np.concatenate(([msg.x], xs))
        py = np.concatenate(([msg.y], ys))
        n = len(px)
        for l in range(1, horizon + 1):
            idx = offset + l
            if idx < n:
                out[l - 1, 0] = px[idx]
                out[l - 1, 1] = py[idx]
            else:  # hold the final heading beyond the sequence
                extra = (idx - (n - 1)) * dt * params.speed
                out[l - 1, 0] = px[-1] + extra * math.cos(phis[-1])
                out[l - 1, 1] = py[-1] + extra * math.sin(phis[-1])
        return out
    if msg.ref_lookahead is not None and len(msg.ref_lookahead) >= 2:
        ref = np.asarray(msg.ref_lookahead, dtype=np.float64)
        n = len(ref)
        tail_dir = ref[-1] - ref[-2]
        norm = math.hypot(tail_dir[0], tail_dir[1])
        tail_dir = tail_dir / norm if norm > 0.0 else np.zeros(2)
        for l in range(1, horizon + 1):
            idx = offset + l
            if idx < n:
                out[l - 1] = ref[idx]
            else:
                out[l - 1] = ref[-1] + (idx - (n - 1)) * dt * params.speed * tail_dir
        return out
    steps = np.arange(offset + 1, offset + horizon + 1, dtype=np.float64)[:, None]
    vel = np.array([msg.vx, msg.vy])
    return np.array([msg.x, msg.y])[None, :] + steps * dt * vel[None, :]


def iter_entries(aug: AugmentedObstacleSet):
    """Uniform (ident, position, velocity, radius, entry) view of the set."""
    for msg in aug.neighbors:
        yield (f"uav:{msg.sender}", np.array([msg.x, msg.y]),
               np.array([msg.vx, msg.vy]), 0.0, msg)
    for obs in aug.obstacles:
        yield (obs.ident, obs.position, obs.velocity, obs.radius, obs)


def detect_inner(state: UavState, params: VehicleParams,
                 aug: AugmentedObstacleSet,
                 cfg: RegionConfig) -> tuple[bool, list[Threat]]:
    """Imminent-approach check over the inner band.

    A closing object already inside r_safe is a threat outright.  One
    between r_safe and r_inner is a threat when it is closing and the
    straight-line extrapolation of both current velocities dips to r_safe
    or below within tau_w seconds.  An object inside r_safe that has gone
    past its minimum and is opening again stays on the list (the bubble is
    still broken, keep steering away) but sorts behind every closing
    threat: no steering improves a receding range, and letting it hold
    primary status would mask a second object still inbound.
    """
    own_pos = np.array([state.x, state.y])
    own_vel = np.array(state.velocity(params))
    threats = []
    for ident, pos, vel, radius, _ in iter_entries(aug):
        rel = pos - own_pos
        d = math.hypot(rel[0], rel[1]) - radius
        if d > cfg.r_inner:
            continue
        w = vel - own_vel  # range rate is sign(rel . w)
        closing = float(rel @ w)
        if closing >= 0.0:
            if d <= cfg.r_safe:
                threats.append(Threat(ident, pos, vel, radius, d,
                                      math.inf, d))
            continue
        if d <= cfg.r_safe:
            threats.append(Threat(ident, pos, vel, radius, d, 0.0, d))
            continue
        w2 = float(w @ w)
        t_star = -closing / w2
        t_min = min(t_star, cfg.tau_w)
        c = rel + t_min * w
        min_d = math.hypot(c[0], c[1]) - radius
        if min_d <= cfg.r_safe:
            threats.append(Threat(ident, pos, vel, radius, d, t_min, min_d))
    threats.sort(key=lambda t: (t.time_to_min, t.ident))
    return (len(threats) > 0, threats)


def track_engagement(state: UavState, params: VehicleParams,
                     aug: AugmentedObstacleSet, ident: str,
                     cfg: RegionConfig) -> Threat | None:
    """Re-examine the one object an ongoing inner engagement was holding.

    Returns a Threat while the object is still inside the inner band and
    its predicted miss is within margin_release of the safety bubble, else
    None.  Releasing exactly at the detection threshold hands control back
    to the path tracker, whose first move is to steer the conflict straight
    back into being; the margin keeps the escape turn in force until the
    miss is clean.
    """
    own_pos = np.array([state.x, state.y])
    own_vel = np.array(state.velocity(params))
    for entry_ident, pos, vel, radius, _ in iter_entries(aug):
        if entry_ident != ident:
            continue
        rel = pos - own_pos
        d = math.hypot(rel[0], rel[1]) - radius
        if d > cfg.r_inner:
            return None
        w = vel - own_vel
        closing = float(rel @ w)
        if closing >= 0.0:
            t_min, min_d = math.inf, d
        else:
            t_star = -closing / float(w @ w)
            t_min = min(t_star, cfg.tau_w)
            c = rel + t_min * w
            min_d = math.hypot(c[0], c[1]) - radius
        if min_d <= cfg.r_safe + cfg.margin_release:
            return Threat(ident, pos, vel, radius, d, t_min, min_d)
        return None
    return None


def detect_middle(state: UavState, own_plan: np.ndarray, current_cycle: int,
                  aug: AugmentedObstacleSet, cfg: RegionConfig,
                  params: VehicleParams) -> tuple[bool, list[Threat]]:
    """Predicted-trajectory conflict check over the middle band.

    own_plan holds this vehicle's expected positions at the next
    len(own_plan) cycles.  An object currently within r_middle conflicts
    when the predicted point-to-point distance drops to r_safe +
    margin_middle at any common step.  Threats come back sorted by time to
    the predicted minimum.
    """
    horizon = len(own_plan)
    if horizon == 0:
        return (False, [])
    own_pos = np.array([state.x, state.y])
    own_plan = np.asarray(own_plan, dtype=np.float64)
    trip = cfg.r_safe + cfg.margin_middle
    threats = []
    for ident, pos, vel, radius, entry in iter_entries(aug):
        rel = pos - own_pos
        d = math.hypot(rel[0], rel[1]) - radius
        if d > cfg.r_middle:
            continue
        pred = predict_positions(entry, current_cycle, horizon, params)
        dists = np.hypot(own_plan[:, 0] - pred[:, 0],
                         own_plan[:, 1] - pred[:, 1]) - radius
        k = int(np.argmin(dists))
        if dists[k] <= trip:
            threats.append(Threat(ident, pos, vel, radius, d,
                                  (k + 1) * params.cycle_dt, float(dists[k])))
    threats.sort(key=lambda t: (t.time_to_min, t.ident))
    return (len(threats) > 0, threats)


def detect_outer(state: UavState, path: ReferencePath,
                 aug: AugmentedObstacleSet,
                 cfg: RegionConfig) -> tuple[bool, Obstacle | None]:
    """Path-blockage check over the outer band.

    Only effectively static sensed obstacles count.  One sitting between
    r_middle and r_outer blocks when it comes within r_safe + margin_outer
    of the reference-path section the vehicle will fly over the next
    r_outer metres.  Returns the nearest blocker, if any.
    """
    own_pos = (state.x, state.y)
    window = None
    best = None
    best_d = math.inf
    for obs in aug.obstacles:
        if not obs.is_static:
            continue
        d = separation_distance(own_pos, obs)
        if not (cfg.r_middle < d <= cfg.r_outer):
            continue
        if window is None:
            q = path.closest(own_pos)
            window = path.window_points(q.arclength, cfg.r_outer)
            if len(window) == 0:
                return (False, None)
        clearance = np.hypot(window[:, 0] - obs.position[0],
                             window[:, 1] - obs.position[1]) - obs.radius
        if float(np.min(clearance)) <= cfg.r_safe + cfg.margin_outer and d < best_d:
            best = obs
            best_d = d
    return (best is not None, best)


def blocking_obstacle(state: UavState, path: ReferencePath,
                      aug: AugmentedObstacleSet,
                      cfg: RegionConfig) -> Obstacle | None:
    """Nearest static obstacle blocking the upcoming path section, at any
    range out to r_outer.

    detect_outer answers "should the outer layer take the command this
    cycle" and is banded accordingly; this answers "does the route still
    need a detour".  The difference matters when a traffic conflict owns
    the command while the vehicle crosses the outer band: the band is ~10 m
    deep, and a route check confined to it goes blind the moment the
    blockage is closer than r_middle, exactly when a detour is most needed.
    """
    own_pos = (state.x, state.y)
    window = None
    best = None
    best_d = math.inf
    for obs in aug.obstacles:
        if not obs.is_static:
            continue
        d = separation_distance(own_pos, obs)
        if not (0.0 < d <= cfg.r_outer):
            continue
        if window is None:
            q = path.closest(own_pos)
            window = path.window_points(q.arclength, cfg.r_outer)
            if len(window) == 0:
                return None
        clearance = np.hypot(window[:, 0] - obs.position[0],
                             window[:, 1] - obs.position[1]) - obs.radius
        if float(np.min(clearance)) <= cfg.r_safe + cfg.margin_outer and d < best_d:
            best = obs
            best_d = d
    return best


@dataclass
class ConflictFlags:
    """Outcome of one detection pass: which bands fired and on what."""

    collision: bool = False
    inner: bool = False
    middle: bool = False
    outer: bool = False
    inner_threats: list[Threat] = field(default_factory=list)
    middle_threats: list[Threat] = field(default_factory=list)
    blocker: Obstacle | None = None

    @property
    def threats(self) -> list[Threat]:
        """All flagged objects, nearest predicted minimum first."""
        merged = {t.ident: t for t in self.middle_threats}
        merged.update({t.ident: t for t in self.inner_threats})
        return sorted(merged.values(), key=lambda t: (t.time_to_min, t.ident))


def detect_all(state: UavState, params: VehicleParams, path: ReferencePath,
               own_plan: np.ndarray, aug: AugmentedObstacleSet,
               cfg: RegionConfig, current_cycle: int) -> ConflictFlags:
    """Run all three detectors plus the hard-collision check."""
    inner, inner_threats = detect_inner(state, params, aug, cfg)
    middle, middle_threats = detect_middle(state, own_plan, current_cycle,
                                           aug, cfg, params)
    outer, blocker = detect_outer(state, path, aug, cfg)
    own_pos = np.array([state.x, state.y])
    collision = False
    for _, pos, _, radius, _ in iter_entries(aug):
        if math.hypot(pos[0] - own_pos[0], pos[1] - own_pos[1]) - radius <= cfg.r_safe:
            collision = True
            break
    return ConflictFlags(collision=collision, inner=inner, middle=middle,
                         outer=outer, inner_threats=inner_threats,
                         middle_threats=middle_threats, blocker=blocker)
