"""Reference paths, local detours, and the line-of-sight tracker.

Paths are dense planar polylines with a cumulative arclength table.  Closed
loops represent nominal missions (rounded triangle-like circuits); open
splines represent temporary detours around blockages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from . import kernels
from .kinematics import UavState, VehicleParams, saturate, wrap_angle

TWO_PI_THIRD = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class TrackerConfig:
    """Line-of-sight pursuit: aim at the path point `lookahead` metres ahead
    of the current projection and steer the heading error down."""

    lookahead: float = 40.0
    heading_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.lookahead <= 0.0:
            raise ValueError(f"lookahead must be positive, got {self.lookahead}")
        if self.heading_gain <= 0.0:
            raise ValueError(f"heading_gain must be positive, got {self.heading_gain}")


@dataclass(frozen=True)
class PathQuery:
    """Result of a closest-point query."""

    point: np.ndarray
    arclength: float
    distance: float


class ReferencePath:
    """Dense polyline with arclength indexing.

    points: (n, 2) float array, consecutive rows distinct.  For a closed
    path the segment from the last row back to the first is implicit; do
    not repeat the first row.
    """

    def __init__(self, points: np.ndarray, closed: bool):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be (n, 2), got shape {pts.shape}")
        if pts.shape[0] < 3:
            raise ValueError(f"need at least 3 points, got {pts.shape[0]}")
        diffs = np.diff(pts, axis=0)
        seg_len = np.hypot(diffs[:, 0], diffs[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive path points must be distinct")
        if closed:
            back = pts[0] - pts[-1]
            back_len = math.hypot(back[0], back[1])
            if back_len <= 0.0:
                raise ValueError("closed path must not repeat its first point")
            seg_len = np.append(seg_len, back_len)
        self.points = pts
        self.closed = closed
        self.seg_lengths = seg_len
        # arclength of point i; for closed paths cum has one extra entry (= length)
        self.cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self.cum[-1])
        # polyline arrays for closest-point queries (closed loop re-appends start)
        if closed:
            self._qx = np.append(pts[:, 0], pts[0, 0])
            self._qy = np.append(pts[:, 1], pts[0, 1])
        else:
            self._qx = np.ascontiguousarray(pts[:, 0])
            self._qy = np.ascontiguousarray(pts[:, 1])

    def _locate(self, s: float) -> tuple[int, float]:
        """Map arclength to (segment index, fraction)."""
        if self.closed:
            s = s % self.length
        else:
            s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_lengths) - 1)
        frac = (s - self.cum[i]) / self.seg_lengths[i]
        return i, min(max(frac, 0.0), 1.0)

    def _seg_ends(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.points[i]
        b = self.points[0] if (self.closed and i == len(self.points) - 1) else self.points[i + 1]
        return a, b

    def point_at(self, s: float) -> np.ndarray:
        """Point at arclength s; wraps on closed paths, clamps on open ones."""
        i, frac = self._locate(s)
        a, b = self._seg_ends(i)
        return a + frac * (b - a)

    def points_at(self, s_values) -> np.ndarray:
        """Vectorized point_at; returns an (m, 2) array."""
        s = np.asarray(s_values, dtype=np.float64)
        if self.closed:
            s = s % self.length
        else:
            s = np.clip(s, 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum, s, side="right") - 1,
                      0, len(self.seg_lengths) - 1)
        frac = np.clip((s - self.cum[idx]) / self.seg_lengths[idx], 0.0, 1.0)
        a = self.points[idx]
        nxt = idx + 1
        if self.closed:
            nxt = nxt % len(self.points)
        b = self.points[nxt]
        return a + frac[:, None] * (b - a)

    def tangent_at(self, s: float) -> np.ndarray:
        """Unit tangent of the segment containing arclength s."""
        i, _ = self._locate(s)
        a, b = self._seg_ends(i)
        d = b - a
        return d / math.hypot(d[0], d[1])

    def closest(self, p) -> PathQuery:
        """Global closest point to p; ties resolve to the smallest arclength."""
        px, py = float(p[0]), float(p[1])
        i, t, d2 = kernels.polyline_closest(self._qx, self._qy, px, py)
        s = float(self.cum[i] + t * self.seg_lengths[i])
        a = np.array([self._qx[i], self._qy[i]])
        b = np.array([self._qx[i + 1], self._qy[i + 1]])
        point = a + t * (b - a)
        return PathQuery(point=point, arclength=s, distance=math.sqrt(d2))

    def window_points(self, s_start: float, span: float) -> np.ndarray:
        """Native sample points with arclength in [s_start, s_start + span].

        Wraps on closed paths; truncates at the end of open ones.
        """
        if span <= 0.0:
            return np.empty((0, 2))
        n = len(self.points)
        if self.closed:
            span = min(span, self.length)
            s0 = s_start % self.length
            i0 = int(np.searchsorted(self.cum[:n], s0, side="left"))
            # count of native points whose arclength falls inside the window
            s1 = s0 + span
            if s1 <= self.length:
                i1 = int(np.searchsorted(self.cum[:n], s1, side="right"))
                idx = np.arange(i0, i1)
            else:
                i1 = int(np.searchsorted(self.cum[:n], s1 - self.length, side="right"))
                idx = np.concatenate([np.arange(i0, n), np.arange(0, i1)])
            return self.points[idx % n]
        s0 = max(s_start, 0.0)
        s1 = min(s_start + span, self.length)
        i0 = int(np.searchsorted(self.cum, s0, side="left"))
        i1 = int(np.searchsorted(self.cum, s1, side="right"))
        return self.points[i0:i1]

    def save_xy(self, path: str) -> None:
        np.savetxt(path, self.points, fmt="%.10g", header="x y")

    @classmethod
    def load_xy(cls, path: str, closed: bool) -> "ReferencePath":
        return cls(np.loadtxt(path, ndmin=2), closed=closed)


def triangle_path_length(circumradius: float, corner_radius: float) -> float:
    """Arclength of the rounded equilateral circuit built below."""
    side = math.sqrt(3.0) * circumradius
    trim = math.sqrt(3.0) * corner_radius
    return 3.0 * (side - 2.0 * trim) + 2.0 * math.pi * corner_radius


def circumradius_for_length(target_length: float, corner_radius: float) -> float:
    """Invert triangle_path_length for the circumradius."""
    return (target_length + 6.0 * math.sqrt(3.0) * corner_radius
            - 2.0 * math.pi * corner_radius) / (3.0 * math.sqrt(3.0))


def build_triangle_path(center, circumradius: float, corner_radius: float,
                        rotation: float = 0.0,
                        sample_spacing: float = 0.5) -> ReferencePath:
    """Closed equilateral circuit with circular corner fillets, traversed
    counter-clockwise.

    The fillet trims sqrt(3) * corner_radius off each side end, so the
    corner radius must stay below half the circumradius.
    """
    if corner_radius <= 0.0:
        raise ValueError(f"corner_radius must be positive, got {corner_radius}")
    if corner_radius >= 0.5 * circumradius:
        raise ValueError(
            f"corner_radius {corner_radius} too large for circumradius "
            f"{circumradius}: fillets would overlap (need < {0.5 * circumradius})")
    cx, cy = float(center[0]), float(center[1])
    verts = np.array([
        [cx + circumradius * math.cos(rotation + math.pi / 2 + k * TWO_PI_THIRD),
         cy + circumradius * math.sin(rotation + math.pi / 2 + k * TWO_PI_THIRD)]
        for k in range(3)
    ])
    trim = math.sqrt(3.0) * corner_radius
    arc_dist = 2.0 * corner_radius  # vertex to fillet centre along the bisector
    pieces = []
    for k in range(3):
        v0, v1 = verts[k], verts[(k + 1) % 3]
        edge = v1 - v0
        edge_dir = edge / np.linalg.norm(edge)
        start = v0 + trim * edge_dir
        end = v1 - trim * edge_dir
        leg = np.linalg.norm(end - start)
        n_leg = max(int(math.ceil(leg / sample_spacing)), 1)
        ts = np.linspace(0.0, 1.0, n_leg, endpoint=False)
        pieces.append(start + ts[:, None] * (end - start))
        # fillet at v1: centre sits on the bisector toward the centroid
        to_centre = np.array([cx, cy]) - v1
        fc = v1 + arc_dist * to_centre / np.linalg.norm(to_centre)
        a0 = math.atan2(end[1] - fc[1], end[0] - fc[0])
        arc_len = corner_radius * TWO_PI_THIRD
        n_arc = max(int(math.ceil(arc_len / sample_spacing)), 2)
        angles = a0 + np.linspace(0.0, TWO_PI_THIRD, n_arc, endpoint=False)
        pieces.append(fc + corner_radius * np.column_stack(
            [np.cos(angles), np.sin(angles)]))
    return ReferencePath(np.vstack(pieces), closed=True)


def cubic_bspline_path(control_points, samples_per_span: int = 16) -> ReferencePath:
    """Open clamped cubic B-spline through the control polygon.

    The curve starts at the first control point and ends at the last; interior
    points shape it without being interpolated.  Needs at least 4 points.
    """
    cp = np.asarray(control_points, dtype=np.float64)
    if cp.ndim != 2 or cp.shape[1] != 2:
        raise ValueError(f"control_points must be (n, 2), got shape {cp.shape}")
    n = cp.shape[0]
    if n < 4:
        raise ValueError(f"cubic spline needs at least 4 control points, got {n}")
    spans = n - 3
    knots = np.concatenate([np.zeros(4), np.arange(1.0, spans), np.full(4, float(spans))])
    spline = BSpline(knots, cp, 3)
    ts = np.linspace(0.0, float(spans), spans * samples_per_span + 1)
    samples = spline(ts)
    # collapse numerically coincident neighbours (repeated control points)
    keep = np.ones(len(samples), dtype=bool)
    d = np.hypot(*(np.diff(samples, axis=0).T))
    keep[1:] = d > 1e-9
    return ReferencePath(samples[keep], closed=False)


def pure_pursuit(state: UavState, path: ReferencePath, tracker: TrackerConfig,
                 params: VehicleParams) -> float:
    """Heading-rate command steering toward the lookahead point on `path`."""
    q = path.closest((state.x, state.y))
    target = path.point_at(q.arclength + tracker.lookahead)
    bearing = math.atan2(target[1] - state.y, target[0] - state.x)
    return saturate(tracker.heading_gain * wrap_angle(bearing - state.phi), params)
