"""Middle-layer receding-horizon avoidance.

Each affected vehicle optimizes its own heading-rate sequence over a short
horizon against the latest intentions its neighbours broadcast, which makes
the scheme distributed: one exhaustive search per vehicle per cycle over a
small blockwise-constant input family, no iteration between vehicles.  Only
the first input of the winning sequence is flown; the whole sequence goes
out on the bus so neighbours can plan against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .detection import AugmentedObstacleSet, RegionConfig, iter_entries, predict_positions
from .kinematics import UavState, VehicleParams, step


@dataclass(frozen=True)
class DmpcConfig:
    """Search space and cost weights.

    The horizon splits into `blocks` equal blocks; every candidate holds one
    of `rates` constant per block, so the search covers len(rates)**blocks
    sequences.  Cost = w_track * squared tracking error + w_effort * squared
    input + w_sep * squared hinge on predicted separations below r_safe +
    margin_sep.
    """

    horizon: int = 20
    blocks: int = 4
    rates: tuple[float, ...] = (-0.6, -0.3, 0.0, 0.3, 0.6)
    w_track: float = 1.0
    w_effort: float = 10.0
    w_sep: float = 200.0
    margin_sep: float = 5.0

    def __post_init__(self) -> None:
        if self.horizon <= 0 or self.blocks <= 0:
            raise ValueError("horizon and blocks must be positive")
        if self.horizon % self.blocks != 0:
            raise ValueError(
                f"horizon {self.horizon} not divisible into {self.blocks} blocks")
        if len(self.rates) == 0:
            raise ValueError("need at least one candidate rate")
        if 0.0 not in self.rates:
            raise ValueError("candidate rates must include 0 (straight flight)")
        if self.w_track < 0 or self.w_effort < 0 or self.w_sep < 0:
            raise ValueError("weights must be >= 0")
        if self.margin_sep < 0:
            raise ValueError(f"margin_sep must be >= 0, got {self.margin_sep}")

    @property
    def steps_per_block(self) -> int:
        return self.horizon // self.blocks

    @property
    def n_candidates(self) -> int:
        return len(self.rates) ** self.blocks


@dataclass
class PlannedSequence:
    """Winning input sequence of one solve, stamped with owner and cycle."""

    owner: int
    cycle: int
    inputs: np.ndarray
    cost: float


def candidate_inputs(index: int, cfg: DmpcConfig) -> np.ndarray:
    """Expand a candidate index into its per-step input sequence.

    Candidates enumerate blockwise rate choices lexicographically, earliest
    block most significant.
    """
    n = len(cfg.rates)
    if not (0 <= index < cfg.n_candidates):
        raise ValueError(f"candidate index {index} out of range")
    digits = []
    rem = index
    for _ in range(cfg.blocks):
        digits.append(rem % n)
        rem //= n
    digits.reverse()
    return np.repeat([cfg.rates[d] for d in digits], cfg.steps_per_block).astype(np.float64)


def sequence_cost(state: UavState, inputs, ref_points: np.ndarray,
                  threat_preds: np.ndarray, threat_radii: np.ndarray,
                  cfg: DmpcConfig, params: VehicleParams,
                  regions: RegionConfig) -> float:
    """Reference cost of one input sequence, computed step by step.

    The search kernel accumulates the same terms; this scalar version is the
    readable definition and the cross-check.
    """
    ref_points = np.asarray(ref_points, dtype=np.float64)
    sep_target = regions.r_safe + cfg.margin_sep
    s = state
    track = effort = sep = 0.0
    for k, u in enumerate(inputs):
        s = step(s, float(u), params)
        dx = s.x - ref_points[k, 0]
        dy = s.y - ref_points[k, 1]
        track += dx * dx + dy * dy
        effort += float(u) * float(u)
        for t in range(len(threat_radii)):
            d = math.hypot(s.x - threat_preds[t, k, 0],
                           s.y - threat_preds[t, k, 1]) - threat_radii[t]
            gap = sep_target - d
            if gap > 0.0:
                sep += gap * gap
    return cfg.w_track * track + cfg.w_effort * effort + cfg.w_sep * sep


def solve(state: UavState, ref_points: np.ndarray, threat_preds: np.ndarray,
          threat_radii: np.ndarray, cfg: DmpcConfig, params: VehicleParams,
          regions: RegionConfig, owner: int, cycle: int) -> PlannedSequence:
    """Exhaustive search over the candidate family.

    threat_preds has shape (n_threats, horizon, 2).  Ties in cost break
    toward lower input effort, then the lower enumeration index, so the
    winner is unique and platform independent.
    """
    ref_points = np.asarray(ref_points, dtype=np.float64)
    if ref_points.shape != (cfg.horizon, 2):
        raise ValueError(
            f"ref_points must be ({cfg.horizon}, 2), got {ref_points.shape}")
    n_thr = len(threat_radii)
    preds = np.asarray(threat_preds, dtype=np.float64).reshape(n_thr, cfg.horizon, 2)
    costs, efforts = kernels.dmpc_search(
        state.x, state.y, state.phi, params.speed, params.cycle_dt,
        np.asarray(cfg.rates), cfg.blocks, cfg.steps_per_block,
        ref_points[:, 0], ref_points[:, 1],
        preds[:, :, 0], preds[:, :, 1], np.asarray(threat_radii, dtype=np.float64),
        cfg.w_track, cfg.w_effort, cfg.w_sep, regions.r_safe + cfg.margin_sep)
    order = np.lexsort((np.arange(len(costs)), efforts, costs))
    best = int(order[0])
    return PlannedSequence(owner=owner, cycle=cycle,
                           inputs=candidate_inputs(best, cfg),
                           cost=float(costs[best]))


def dmpc_step(state: UavState, ref_points: np.ndarray,
              aug: AugmentedObstacleSet, cfg: DmpcConfig,
              params: VehicleParams, regions: RegionConfig,
              current_cycle: int, owner: int) -> tuple[float, PlannedSequence]:
    """One middle-layer cycle: predict every tracked object over the
    horizon, search, return the first input and the full winning plan."""
    entries = list(iter_entries(aug))
    n_thr = len(entries)
    preds = np.empty((n_thr, cfg.horizon, 2))
    radii = np.empty(n_thr)
    for t, (_, _, _, radius, entry) in enumerate(entries):
        preds[t] = predict_positions(entry, current_cycle, cfg.horizon, params)
        radii[t] = radius
    plan = solve(state, ref_points, preds, radii, cfg, params, regions,
                 owner, current_cycle)
    return float(plan.inputs[0]), plan
