"""Desk-scale simulator and control library for multi-UAV collision
avoidance: a layered detect-and-resolve stack over unicycle kinematics, plus
the evaluation harness comparing it against trajectory-only avoidance."""

__version__ = "0.1.0"

from .kinematics import UavState, VehicleParams  # noqa: F401
