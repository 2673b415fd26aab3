"""Numeric hot loops with two interchangeable backends.

The candidate search inside the horizon optimizer evaluates hundreds of
rolled-out input sequences per solve, every cycle, for every vehicle; the
closest-point query runs against multi-thousand-segment polylines.  Both are
compiled with numba when it is importable, with a vectorized numpy fallback
kept in lockstep.

Backend selection: set UAVCAS_NUMBA=0 (or "false"/"off") before import to
force the numpy path.  `BACKEND` records which one is live.  Both
implementations of every kernel stay importable through IMPLEMENTATIONS so
tests and benchmarks can compare them directly.
"""

from __future__ import annotations

import math
import os

import numpy as np

TWO_PI = 2.0 * math.pi


def _numba_enabled() -> bool:
    flag = os.environ.get("UAVCAS_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _dmpc_search_numpy(x0, y0, phi0, speed, dt, rates, n_blocks, steps_per_block,
                       ref_x, ref_y, thr_x, thr_y, thr_r,
                       w_track, w_effort, w_sep, sep_target):
    """Evaluate every blockwise-constant input sequence; see dmpc_search."""
    n_rates = rates.shape[0]
    n_cand = n_rates ** n_blocks
    horizon = ref_x.shape[0]
    n_thr = thr_r.shape[0]

    # candidate c maps to base-n_rates digits, most significant block first
    powers = n_rates ** np.arange(n_blocks - 1, -1, -1, dtype=np.int64)
    digits = (np.arange(n_cand, dtype=np.int64)[:, None] // powers[None, :]) % n_rates
    u_steps = np.repeat(rates[digits], steps_per_block, axis=1)  # (n_cand, horizon)

    x = np.full(n_cand, x0)
    y = np.full(n_cand, y0)
    phi = np.full(n_cand, phi0)
    track = np.zeros(n_cand)
    sep = np.zeros(n_cand)
    for k in range(horizon):
        u = u_steps[:, k]
        phi_mid = phi + 0.5 * u * dt
        x = x + dt * speed * np.cos(phi_mid)
        y = y + dt * speed * np.sin(phi_mid)
        phi = (phi + u * dt + np.pi) % TWO_PI - np.pi
        phi = np.where(phi <= -np.pi, phi + TWO_PI, phi)
        track += (x - ref_x[k]) ** 2 + (y - ref_y[k]) ** 2
        if n_thr:
            d = np.hypot(x[:, None] - thr_x[None, :, k], y[:, None] - thr_y[None, :, k])
            gap = np.maximum(sep_target - (d - thr_r[None, :]), 0.0)
            sep += np.sum(gap * gap, axis=1)
    efforts = np.sum(u_steps * u_steps, axis=1)
    costs = w_track * track + w_effort * efforts + w_sep * sep
    return costs, efforts


def _polyline_closest_numpy(xs, ys, px, py):
    """Closest point on an open polyline; see polyline_closest."""
    ax, ay = xs[:-1], ys[:-1]
    dx, dy = xs[1:] - ax, ys[1:] - ay
    seg2 = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / np.where(seg2 > 0.0, seg2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    cx = ax + t * dx
    cy = ay + t * dy
    d2 = (px - cx) ** 2 + (py - cy) ** 2
    i = int(np.argmin(d2))  # first occurrence wins ties
    return i, float(t[i]), float(d2[i])


def _rollout_xy_numpy(x0, y0, phi0, us, speed, dt):
    """Midpoint-rule rollout of one input sequence; see rollout_xy."""
    n = us.shape[0]
    xs = np.empty(n)
    ys = np.empty(n)
    phis = np.empty(n)
    x, y, phi = x0, y0, phi0
    for k in range(n):
        u = us[k]
        phi_mid = phi + 0.5 * u * dt
        x += dt * speed * math.cos(phi_mid)
        y += dt * speed * math.sin(phi_mid)
        phi = (phi + u * dt + math.pi) % TWO_PI - math.pi
        if phi <= -math.pi:
            phi += TWO_PI
        xs[k] = x
        ys[k] = y
        phis[k] = phi
    return xs, ys, phis


# ---------------------------------------------------------------------------
# numba implementations (compiled lazily on import when enabled)


def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def dmpc_search_nb(x0, y0, phi0, speed, dt, rates, n_blocks, steps_per_block,
                       ref_x, ref_y, thr_x, thr_y, thr_r,
                       w_track, w_effort, w_sep, sep_target):
        n_rates = rates.shape[0]
        n_cand = 1
        for _ in range(n_blocks):
            n_cand *= n_rates
        horizon = ref_x.shape[0]
        n_thr = thr_r.shape[0]
        powers = np.empty(n_blocks, dtype=np.int64)
        p = 1
        for b in range(n_blocks - 1, -1, -1):
            powers[b] = p
            p *= n_rates
        costs = np.empty(n_cand)
        efforts = np.empty(n_cand)
        for c in range(n_cand):
            x = x0
            y = y0
            phi = phi0
            track = 0.0
            sep = 0.0
            eff = 0.0
            for k in range(horizon):
                b = k // steps_per_block
                u = rates[(c // powers[b]) % n_rates]
                phi_mid = phi + 0.5 * u * dt
                x = x + dt * speed * math.cos(phi_mid)
                y = y + dt * speed * math.sin(phi_mid)
                phi = (phi + u * dt + math.pi) % TWO_PI - math.pi
                if phi <= -math.pi:
                    phi += TWO_PI
                ddx = x - ref_x[k]
                ddy = y - ref_y[k]
                track += ddx * ddx + ddy * ddy
                eff += u * u
                for t in range(n_thr):
                    tx = x - thr_x[t, k]
                    ty = y - thr_y[t, k]
                    gap = sep_target - (math.sqrt(tx * tx + ty * ty) - thr_r[t])
                    if gap > 0.0:
                        sep += gap * gap
            costs[c] = w_track * track + w_effort * eff + w_sep * sep
            efforts[c] = eff
        return costs, efforts

    @njit(cache=True)
    def polyline_closest_nb(xs, ys, px, py):
        best_i = 0
        best_t = 0.0
        best_d2 = 1e300
        for i in range(xs.shape[0] - 1):
            ax = xs[i]
            ay = ys[i]
            dx = xs[i + 1] - ax
            dy = ys[i + 1] - ay
            seg2 = dx * dx + dy * dy
            if seg2 > 0.0:
                t = ((px - ax) * dx + (py - ay) * dy) / seg2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            cx = ax + t * dx
            cy = ay + t * dy
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            if d2 < best_d2:  # strict: first occurrence wins ties
                best_d2 = d2
                best_t = t
                best_i = i
        return best_i, best_t, best_d2

    @njit(cache=True)
    def rollout_xy_nb(x0, y0, phi0, us, speed, dt):
        n = us.shape[0]
        xs = np.empty(n)
        ys = np.empty(n)
        phis = np.empty(n)
        x = x0
        y = y0
        phi = phi0
        for k in range(n):
            u = us[k]
            phi_mid = phi + 0.5 * u * dt
            x = x + dt * speed * math.cos(phi_mid)
            y = y + dt * speed * math.sin(phi_mid)
            phi = (phi + u * dt + math.pi) % TWO_PI - math.pi
            if phi <= -math.pi:
                phi += TWO_PI
            xs[k] = x
            ys[k] = y
            phis[k] = phi
        return xs, ys, phis

    return {
        "dmpc_search": dmpc_search_nb,
        "polyline_closest": polyline_closest_nb,
        "rollout_xy": rollout_xy_nb,
    }


_NUMPY_IMPLS = {
    "dmpc_search": _dmpc_search_numpy,
    "polyline_closest": _polyline_closest_numpy,
    "rollout_xy": _rollout_xy_numpy,
}

IMPLEMENTATIONS = {"numpy": _NUMPY_IMPLS}

if _numba_enabled():
    try:
        IMPLEMENTATIONS["numba"] = _build_numba_impls()
        BACKEND = "numba"
    except ImportError:
        BACKEND = "numpy"
else:
    BACKEND = "numpy"

_ACTIVE = IMPLEMENTATIONS[BACKEND]


def dmpc_search(x0, y0, phi0, speed, dt, rates, n_blocks, steps_per_block,
                ref_x, ref_y, thr_x, thr_y, thr_r,
                w_track, w_effort, w_sep, sep_target):
    """Cost and effort of every blockwise-constant candidate sequence.

    Candidates enumerate the cross product of `rates` over `n_blocks` blocks
    of `steps_per_block` steps each, lexicographically with the earliest
    block as the most significant digit.  Each is rolled out with the
    midpoint step from (x0, y0, phi0); the cost accumulates squared tracking
    error against (ref_x, ref_y), squared input effort, and a hinge penalty
    whenever the distance to a predicted threat point (minus that threat's
    radius) drops below sep_target.

    thr_x, thr_y have shape (n_threats, horizon); thr_r is per-threat.
    Returns (costs, efforts), one entry per candidate in enumeration order.
    """
    return _ACTIVE["dmpc_search"](
        np.float64(x0), np.float64(y0), np.float64(phi0),
        np.float64(speed), np.float64(dt),
        np.ascontiguousarray(rates, dtype=np.float64),
        int(n_blocks), int(steps_per_block),
        np.ascontiguousarray(ref_x, dtype=np.float64),
        np.ascontiguousarray(ref_y, dtype=np.float64),
        np.ascontiguousarray(thr_x, dtype=np.float64),
        np.ascontiguousarray(thr_y, dtype=np.float64),
        np.ascontiguousarray(thr_r, dtype=np.float64),
        np.float64(w_track), np.float64(w_effort), np.float64(w_sep),
        np.float64(sep_target),
    )


def polyline_closest(xs, ys, px, py):
    """Closest point on the open polyline (xs, ys) to (px, py).

    Returns (segment_index, param, squared_distance) with param in [0, 1]
    along the winning segment.  Exact ties go to the lowest segment index.
    """
    return _ACTIVE["polyline_closest"](
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        np.float64(px), np.float64(py),
    )


def rollout_xy(x0, y0, phi0, us, speed, dt):
    """Roll one heading-rate sequence forward; returns (xs, ys, phis) arrays."""
    return _ACTIVE["rollout_xy"](
        np.float64(x0), np.float64(y0), np.float64(phi0),
        np.ascontiguousarray(us, dtype=np.float64),
        np.float64(speed), np.float64(dt),
    )
