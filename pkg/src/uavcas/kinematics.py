"""Unicycle kinematics for a fixed-wing UAV at constant airspeed.

The vehicle holds cruise speed and altitude; the only control input is the
heading rate, which actuator limits clip to a symmetric bound.  Integration
uses a midpoint (RK2) step so that heading changes within a cycle bend the
step instead of being applied after it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (a + math.pi) % TWO_PI - math.pi
    if w <= -math.pi:  # fold the open end: -pi maps to +pi
        w += TWO_PI
    return w


@dataclass(frozen=True)
class VehicleParams:
    """Shared airframe constants.

    speed: cruise airspeed, m/s
    omega_max: heading-rate limit, rad/s
    cycle_dt: control cycle period, s
    """

    speed: float = 19.0
    omega_max: float = 0.6
    cycle_dt: float = 0.1

    def __post_init__(self) -> None:
        if self.speed <= 0.0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if self.omega_max <= 0.0:
            raise ValueError(f"omega_max must be positive, got {self.omega_max}")
        if self.cycle_dt <= 0.0:
            raise ValueError(f"cycle_dt must be positive, got {self.cycle_dt}")

    @property
    def min_turn_radius(self) -> float:
        return self.speed / self.omega_max


@dataclass(frozen=True)
class UavState:
    """Planar pose: position in metres, heading in radians, wrapped to (-pi, pi]."""

    x: float
    y: float
    phi: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def velocity(self, params: VehicleParams) -> tuple[float, float]:
        return (params.speed * math.cos(self.phi), params.speed * math.sin(self.phi))


def saturate(u: float, params: VehicleParams) -> float:
    """Clip a heading-rate command to the actuator bound."""
    if u > params.omega_max:
        return params.omega_max
    if u < -params.omega_max:
        return -params.omega_max
    return u


def step(state: UavState, u: float, params: VehicleParams) -> UavState:
    """Advance one control cycle with a saturated heading-rate input.

    Midpoint rule: the position update uses the heading halfway through the
    cycle, the heading update uses the full cycle.  Step length is exactly
    speed * cycle_dt regardless of the input.
    """
    u = saturate(u, params)
    dt = params.cycle_dt
    phi_mid = state.phi + 0.5 * u * dt
    return UavState(
        x=state.x + dt * params.speed * math.cos(phi_mid),
        y=state.y + dt * params.speed * math.sin(phi_mid),
        phi=wrap_angle(state.phi + u * dt),
    )


def rollout(state: UavState, inputs, params: VehicleParams) -> list[UavState]:
    """Apply a sequence of heading-rate inputs; returns one state per input."""
    out = []
    for u in inputs:
        state = step(state, float(u), params)
        out.append(state)
    return out
