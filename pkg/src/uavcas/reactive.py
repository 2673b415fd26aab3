"""Inner-layer reactive avoidance: a one-shot geometric heading-rate law.

When something gets inside the reactive band there is no time left to plan.
The command is proportional to half the angle between the relative velocity
and the line of sight, offset by a quarter turn, signed by the chosen escape
direction, and clipped to the actuator bound.  For a head-on approach the
angle term is pi/2, so the offset makes the command saturate; for a pure
fly-by (relative velocity perpendicular to the line of sight) it is zero;
for an opening geometry it reverses sign.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .detection import Threat
from .kinematics import UavState, VehicleParams, saturate, wrap_angle

log = logging.getLogger(__name__)

QUARTER_PI = 0.25 * math.pi


@dataclass(frozen=True)
class ReactiveConfig:
    """gain scales the geometric angle into a heading rate; direction_rule
    picks the escape side ("right-hand" always breaks right, "farthest-side"
    breaks toward the half-plane holding fewer threats)."""

    gain: float = 1.0
    direction_rule: str = "right-hand"

    def __post_init__(self) -> None:
        if self.gain <= 0.0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if self.direction_rule not in ("right-hand", "farthest-side"):
            raise ValueError(f"unknown direction rule {self.direction_rule!r}")


def relative_geometry(state: UavState, params: VehicleParams,
                      threat_position, threat_velocity) -> tuple[np.ndarray, np.ndarray]:
    """(v_rel, los): own velocity minus the threat's, and the line of sight
    from own position to the threat.  Raises on coincident positions."""
    los = np.asarray(threat_position, dtype=np.float64) - np.array([state.x, state.y])
    if math.hypot(los[0], los[1]) == 0.0:
        raise ValueError("threat position coincides with own position")
    own_vel = np.array(state.velocity(params))
    v_rel = own_vel - np.asarray(threat_velocity, dtype=np.float64)
    return v_rel, los


def geometry_angle(v_rel: np.ndarray, los: np.ndarray) -> float:
    """Half the angle between v_rel and the line of sight, minus pi/4.

    Positive when the geometry is opening, negative when closing; zero for a
    perpendicular fly-by.  Range is [-pi/4, +pi/4].
    """
    nv = math.hypot(v_rel[0], v_rel[1])
    nl = math.hypot(los[0], los[1])
    c = min(max(float(v_rel @ los) / (nv * nl), -1.0), 1.0)
    return 0.5 * math.acos(c) - QUARTER_PI


def reactive_input(v_rel: np.ndarray, los: np.ndarray, direction: int,
                   cfg: ReactiveConfig, params: VehicleParams) -> float:
    """Saturated heading-rate command for one threat geometry.

    direction (+1 or -1) multiplies the signed angle term.  A zero relative
    velocity carries no geometric information; the command is zero.
    """
    if math.hypot(v_rel[0], v_rel[1]) == 0.0:
        log.debug("zero relative velocity, reactive command suppressed")
        return 0.0
    return saturate(direction * cfg.gain * geometry_angle(v_rel, los), params)


AMBIGUOUS_BEARING = 0.55  # rad; a moving threat this close to dead ahead sits
# on the half-plane boundary for census purposes.  On a near-collision course
# between two vehicles the bearing is frozen a few degrees off zero, so
# counting its sign makes the pair break to opposite world sides and cancel
# each other's turn.  Treating the boundary band as "neither side" routes
# those encounters through the tie and both vehicles break right, which
# resolves them the way two aircraft meeting head-on do.  A static obstacle
# cannot maneuver back, its bearing drifts freely, and dead-ahead is exactly
# where its vote matters most, so it always counts by sign.
SPEED_STATIC = 1.0  # m/s; below this a threat votes as parked


def choose_side(state: UavState, threats: list[Threat],
                cfg: ReactiveConfig) -> int:
    """Escape side: -1 breaks right, +1 breaks left.

    Right-hand rule always breaks right; farthest-side breaks toward the
    half-plane (relative to the current heading) containing fewer threats,
    ties to the right.  A moving threat inside the ambiguous cone around
    dead ahead counts for neither half-plane.
    """
    if not threats:
        raise ValueError("direction choice needs at least one threat")
    if cfg.direction_rule == "right-hand":
        return -1
    left = right = 0
    for t in threats:
        bearing = wrap_angle(
            math.atan2(t.position[1] - state.y, t.position[0] - state.x)
            - state.phi)
        moving = math.hypot(t.velocity[0], t.velocity[1]) >= SPEED_STATIC
        if moving and abs(bearing) <= AMBIGUOUS_BEARING:
            continue
        if bearing > 0.0:
            left += 1
        else:
            right += 1
    return 1 if left < right else -1


def choose_direction(state: UavState, params: VehicleParams,
                     threats: list[Threat], cfg: ReactiveConfig) -> int:
    """Sign multiplying the geometry angle so the commanded turn lands on
    the side picked by choose_side, whether the geometry is closing or
    already opening."""
    side = choose_side(state, threats, cfg)
    primary = threats[0]
    v_rel, los = relative_geometry(state, params, primary.position, primary.velocity)
    if math.hypot(v_rel[0], v_rel[1]) == 0.0:
        return side  # co-moving threat, geometry angle undefined
    m = geometry_angle(v_rel, los)
    return side if m >= 0.0 else -side


def side_command(state: UavState, side: int, threats: list[Threat],
                 cfg: ReactiveConfig, params: VehicleParams) -> float:
    """Heading-rate command that lands the turn on an already-chosen side.

    The magnitude comes from the most imminent threat's geometry; the sign
    comes from `side` alone.  Re-running the census every cycle lets a
    threat hovering at the detection threshold flip the escape side back
    and forth, and the alternating commands cancel into straight flight,
    so a caller that owns an ongoing engagement picks the side once and
    feeds it back through here.
    """
    primary = threats[0]
    v_rel, los = relative_geometry(state, params, primary.position,
                                   primary.velocity)
    if math.hypot(v_rel[0], v_rel[1]) == 0.0:
        return 0.0
    m = geometry_angle(v_rel, los)
    direction = side if m >= 0.0 else -side
    return reactive_input(v_rel, los, direction, cfg, params)


def inner_resolve(state: UavState, threats: list[Threat],
                  cfg: ReactiveConfig, params: VehicleParams) -> float:
    """Full inner-layer response: pick an escape side, command the turn."""
    return side_command(state, choose_side(state, threats, cfg), threats,
                        cfg, params)
