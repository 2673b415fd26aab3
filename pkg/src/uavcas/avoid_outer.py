"""Outer-layer avoidance: detour the reference path around a static blockage.

With the blockage still far out there is time to reshape the route instead
of maneuvering.  Sub-targets are pushed sideways off the blocked section
until they clear the inflated obstacle, then a cubic spline is threaded from
the current position through entry anchor, sub-targets and exit anchor back
onto the original path.  The detour is only adopted if it verifiably clears
the obstacle and never demands more curvature than the airframe can fly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from scipy.interpolate import CubicSpline

from .detection import RegionConfig
from .kinematics import UavState, VehicleParams
from .paths import ReferencePath
from .sensing import Obstacle

log = logging.getLogger(__name__)

ANCHOR_LEAD = 90.0     # m of anchored run-in/run-out around the blocked section
CLIMB_SLACK = 60.0     # m next to the window left unanchored for the lateral ramp
ANCHOR_SPACING = 25.0  # m between on-path anchors that carry the path's shape
SIDE_TIE_EPS = 0.5     # m; smaller asymmetry than this counts as dead-centre
CLEARANCE_STEP = 0.1   # m; detour validation sampling
CURVATURE_STEP = 0.5   # m; heading-change sampling for the curvature check


class PlanError(RuntimeError):
    """A detour could not be produced or failed validation."""


@dataclass
class LocalPlan:
    """An adopted detour and where it rejoins the reference path."""

    detour: ReferencePath | None
    rejoin_arclength: float
    blocker_id: str
    active: bool


def _blocked_window(path: ReferencePath, s_from: float, span: float,
                    blocker: Obstacle, clearance: float) -> tuple[float, float] | None:
    """First contiguous arclength stretch ahead of s_from whose points come
    within `clearance` of the blocker centre, or None."""
    pts = path.window_points(s_from, span)
    if len(pts) == 0:
        return None
    d = np.hypot(pts[:, 0] - blocker.position[0], pts[:, 1] - blocker.position[1])
    hits = np.flatnonzero(d < clearance)
    if len(hits) == 0:
        return None
    first = hits[0]
    last = first
    for i in hits[1:]:
        if i == last + 1:
            last = i
        else:
            break
    # native samples are ~uniform; map indices back through arclength offsets
    seg = np.hypot(*(np.diff(pts, axis=0).T))
    offsets = np.concatenate(([0.0], np.cumsum(seg)))
    return (s_from + float(offsets[first]), s_from + float(offsets[last]))


def generate_subtargets(path: ReferencePath, state: UavState, blocker: Obstacle,
                        cfg: RegionConfig) -> list[np.ndarray]:
    """Waypoints for a detour, ordered along the path: on-path anchors on
    the run-in, 1-3 lateral sub-targets across the blocked window, on-path
    anchors on the run-out.

    Sub-targets are blocked-window path points displaced toward the side
    of the path with more room until they reach r_safe + blocker radius +
    margin_outer of clearance.  The anchors pin the spline to the path's
    real shape (corners included) away from the blockage; the stretch
    right next to the window is left unanchored so the curve has room to
    ramp sideways.  An obstacle that never comes that close to the
    upcoming path section yields no waypoints.  Raises PlanError when the
    vehicle itself is already inside the blocker's safety bubble, since no
    detour can start there.
    """
    pos = np.array([state.x, state.y])
    gap = math.hypot(*(blocker.position - pos))
    if gap <= blocker.radius + cfg.r_safe:
        raise PlanError(
            f"cannot replan: own position inside safety bubble of {blocker.ident}")
    clearance = cfg.r_safe + blocker.radius + cfg.margin_outer
    s_now = path.closest(pos).arclength
    window = _blocked_window(path, s_now, cfg.r_outer + clearance + ANCHOR_LEAD,
                             blocker, clearance)
    if window is None:
        return []
    s_a, s_b = window
    span = s_b - s_a
    # one side for the whole detour, judged at the window midpoint
    mid = path.point_at(s_a + 0.5 * span)
    tan = path.tangent_at(s_a + 0.5 * span)
    left = np.array([-tan[1], tan[0]])
    lateral = float(left @ (mid - blocker.position))
    if lateral > SIDE_TIE_EPS:
        side = left
    elif lateral < -SIDE_TIE_EPS:
        side = -left
    else:
        side = left  # dead-centre blockage: break toward the left
    fractions = (0.25, 0.5, 0.75) if span >= 40.0 else (0.5,)
    targets = []
    for f in fractions:
        q = path.point_at(s_a + f * span)
        have = float(side @ (q - blocker.position))
        push = max(clearance - have, 0.0)
        targets.append(q + push * side)
    # anchors within 15 m of the vehicle are dropped, and each anchor run is
    # spaced evenly: stub chords next to long unanchored climbs make the
    # interpolant wiggle
    exit_s = s_b + ANCHOR_LEAD
    waypoints = []
    a_from = max(s_a - ANCHOR_LEAD, s_now + 15.0)
    a_to = s_a - CLIMB_SLACK
    if a_from < a_to:
        n = int(math.ceil((a_to - a_from) / ANCHOR_SPACING))
        for s in np.linspace(a_from, a_to, n + 1):
            waypoints.append(path.point_at(float(s)))
    waypoints.extend(targets)
    d_from = s_b + CLIMB_SLACK
    n = max(1, int(math.ceil((exit_s - d_from) / ANCHOR_SPACING)))
    for s in np.linspace(d_from, exit_s, n + 1):
        waypoints.append(path.point_at(float(s)))
    return waypoints


def _max_discrete_curvature(detour: ReferencePath) -> float:
    s = np.arange(0.0, detour.length + CURVATURE_STEP, CURVATURE_STEP)
    pts = detour.points_at(s)
    d = np.diff(pts, axis=0)
    headings = np.arctan2(d[:, 1], d[:, 0])
    dh = np.diff(headings)
    dh = (dh + np.pi) % (2.0 * np.pi) - np.pi
    seg = np.hypot(d[:, 0], d[:, 1])
    step = 0.5 * (seg[:-1] + seg[1:])
    ok = step > 1e-9
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(dh[ok]) / step[ok]))


def replan(state: UavState, subtargets: list[np.ndarray], path: ReferencePath,
           blocker: Obstacle, cfg: RegionConfig,
           params: VehicleParams) -> LocalPlan:
    """Thread a detour spline through the sub-targets and validate it.

    The spline interpolates [current position, *subtargets]; the last
    sub-target is the exit anchor on the original path, so the detour's end
    defines the rejoin arclength.  Interpolation (not control-point
    attraction) is what makes the lateral push arithmetic meaningful: the
    curve actually reaches the pushed-out points.  Validation samples the
    detour densely: every point must keep r_safe beyond the blocker
    surface, and the discrete curvature must stay within what the airframe
    can turn at cruise speed.  Failure raises PlanError; an empty
    sub-target list gives an inactive plan.
    """
    if not subtargets:
        return LocalPlan(detour=None, rejoin_arclength=0.0,
                         blocker_id=blocker.ident, active=False)
    waypoints = np.vstack([[state.x, state.y], subtargets])
    chord = np.hypot(*(np.diff(waypoints, axis=0).T))
    keep = np.concatenate(([True], chord > 1e-9))
    waypoints = waypoints[keep]
    if len(waypoints) < 3:
        raise PlanError(f"degenerate detour geometry near {blocker.ident}")
    u = np.concatenate(([0.0], np.cumsum(chord[keep[1:]])))
    spline = CubicSpline(u, waypoints, axis=0)
    n = max(16, int(math.ceil(u[-1] / 0.5)))
    detour = ReferencePath(spline(np.linspace(0.0, u[-1], n)), closed=False)

    s = np.arange(0.0, detour.length + CLEARANCE_STEP, CLEARANCE_STEP)
    pts = detour.points_at(s)
    d = np.hypot(pts[:, 0] - blocker.position[0],
                 pts[:, 1] - blocker.position[1]) - blocker.radius
    worst = float(np.min(d))
    if worst < cfg.r_safe:
        raise PlanError(
            f"detour passes {worst:.1f} m from {blocker.ident}, "
            f"need {cfg.r_safe:.1f}")
    kappa = _max_discrete_curvature(detour)
    kappa_max = params.omega_max / params.speed
    if kappa > kappa_max * (1.0 + 1e-6):
        raise PlanError(
            f"detour needs curvature {kappa:.4f} 1/m, airframe limit {kappa_max:.4f}")
    rejoin = path.closest(detour.points[-1]).arclength
    return LocalPlan(detour=detour, rejoin_arclength=rejoin,
                     blocker_id=blocker.ident, active=True)


def outer_resolve(state: UavState, path: ReferencePath, blocker: Obstacle,
                  cfg: RegionConfig, params: VehicleParams) -> LocalPlan:
    """Generate sub-targets and replan in one call."""
    subtargets = generate_subtargets(path, state, blocker, cfg)
    return replan(state, subtargets, path, blocker, cfg, params)
