"""Cycle-synchronous simulation engine and the evaluation metrics.

Every control cycle runs the same phases for all vehicles: collect bus
traffic, sense, detect, arbitrate a resolver, command a heading rate, then
step all vehicles and the moving obstacles together and publish the new
broadcasts.  Per-vehicle decisions only read the cycle-start snapshot, so
they can run serially or on a thread pool with identical results.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .avoid_outer import LocalPlan, PlanError, outer_resolve
from .bus import InProcessBus, StateMessage, UdpBus
from .detection import (ConflictFlags, blocking_obstacle, build_augmented_set,
                        detect_all, track_engagement)
from .dmpc import dmpc_step
from .kinematics import UavState, saturate, step, wrap_angle
from .paths import PathQuery, ReferencePath
from .reactive import choose_side, side_command
from .scenario import Scenario, resolve_initial_states
from .sensing import SensorMemory, sense_rng

log = logging.getLogger(__name__)

LAYERS = ("nominal", "outer", "middle", "inner")

CSV_HEADER = ("cycle,uav,x,y,phi,omega,layer,"
              "flag_inner,flag_middle,flag_outer,min_separation")


def arbitrate(flags: ConflictFlags, strategy: str) -> str:
    """Pick the resolver for this cycle.

    The hierarchical strategy gives the innermost fired band priority; the
    dmpc-only baseline routes every inner or middle conflict to the
    trajectory layer and never replans paths.
    """
    if strategy == "hierarchical":
        if flags.inner:
            return "inner"
        if flags.middle:
            return "middle"
        if flags.outer:
            return "outer"
        return "nominal"
    if strategy == "dmpc-only":
        return "middle" if (flags.inner or flags.middle) else "nominal"
    raise ValueError(f"unknown strategy {strategy!r}")


def count_failures(separations, r_safe: float) -> int:
    """Number of violation episodes in one separation trace.

    An episode starts when the separation drops to r_safe or below and ends
    when it recovers; re-entries count again.
    """
    d = np.asarray(separations, dtype=np.float64)
    below = d <= r_safe
    if len(below) == 0:
        return 0
    entries = int(below[0]) + int(np.sum(below[1:] & ~below[:-1]))
    return entries


def avg_collision_free_distance(distance: float, failures: int) -> float:
    """Mean flight distance per failure; infinite when nothing failed."""
    if failures == 0:
        return math.inf
    return distance / failures


@dataclass
class Metrics:
    """Run-level evaluation summary."""

    strategy: str
    sensing_mode: str
    seed: int
    cycles: int
    n_uavs: int
    failures: int
    failures_per_uav: list[int]
    distance_per_uav: list[float]
    avg_collision_free_distance: float  # rounded to 2 decimals, inf if clean
    min_separation: float
    layer_cycles: dict[str, int]

    def to_dict(self) -> dict:
        d = {
            "strategy": self.strategy,
            "sensing_mode": self.sensing_mode,
            "seed": self.seed,
            "cycles": self.cycles,
            "n_uavs": self.n_uavs,
            "failures": self.failures,
            "failures_per_uav": self.failures_per_uav,
            "distance_per_uav": self.distance_per_uav,
            "avg_collision_free_distance": (
                "inf" if math.isinf(self.avg_collision_free_distance)
                else self.avg_collision_free_distance),
            "min_separation": self.min_separation,
            "layer_cycles": self.layer_cycles,
        }
        return d


@dataclass
class _Decision:
    """Everything one vehicle's cycle produced, applied after all decide."""

    omega: float
    layer: str
    flags: ConflictFlags
    sequence: np.ndarray | None
    lookahead: np.ndarray


class _Agent:
    def __init__(self, ident: int, path: ReferencePath, state: UavState,
                 memory: SensorMemory):
        self.ident = ident
        self.path = path
        self.state = state
        self.memory = memory
        self.plan: LocalPlan | None = None
        self.engaged: str | None = None
        self.engaged_seen: set[str] = set()
        self.side: int | None = None
        self.replan_after: int = 0


class Simulation:
    """One configured run.  Construct, call run() once."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        states = resolve_initial_states(scenario)
        self.agents = [
            _Agent(i, scenario.paths[i], states[i],
                   SensorMemory(scenario.sensing, scenario.regions))
            for i in range(len(states))
        ]
        self.obstacles = [replace(o, position=o.position.copy(),
                                  velocity=o.velocity.copy())
                          for o in scenario.obstacles]
        roster = [a.ident for a in self.agents]
        if scenario.bus.transport == "udp":
            self.buses = [UdpBus(i, roster, scenario.bus.base_port,
                                 max_stale_cycles=scenario.bus.max_stale_cycles)
                          for i in roster]
        else:
            shared = InProcessBus(roster, scenario.bus.max_stale_cycles)
            self.buses = [shared] * len(roster)
        self._pool = None

    # ------------------------------------------------------------------
    # per-vehicle decision (pure on the cycle-start snapshot)

    def _track_path(self, agent: _Agent) -> tuple[ReferencePath, bool]:
        if agent.plan is not None and agent.plan.active:
            return agent.plan.detour, True
        return agent.path, False

    def _lookahead(self, agent: _Agent, track: ReferencePath, on_detour: bool,
                   s0: float, n: int) -> np.ndarray:
        ds = self.sc.vehicle.speed * self.sc.vehicle.cycle_dt
        s = s0 + ds * np.arange(n)
        pts = track.points_at(s)
        if on_detour:
            over = s > track.length
            if np.any(over):  # spill past the detour end onto the mission path
                rejoin = agent.plan.rejoin_arclength
                pts[over] = agent.path.points_at(rejoin + s[over] - track.length)
        return pts

    def _pursuit(self, state: UavState, track: ReferencePath, q: PathQuery) -> float:
        tr = self.sc.tracker
        target = track.point_at(q.arclength + tr.lookahead)
        bearing = math.atan2(target[1] - state.y, target[0] - state.x)
        return saturate(tr.heading_gain * wrap_angle(bearing - state.phi),
                        self.sc.vehicle)

    def _decide(self, agent: _Agent, cycle: int,
                messages: list[StateMessage]) -> _Decision:
        sc = self.sc
        state = agent.state
        rng = sense_rng(sc.seed, agent.ident, cycle)
        sensed = agent.memory.sense(self.obstacles, state, cycle, rng)
        aug = build_augmented_set(messages, sensed)

        track, on_detour = self._track_path(agent)
        q = track.closest((state.x, state.y))
        if on_detour and track.length - q.arclength < 0.5 * sc.tracker.lookahead:
            agent.plan = None  # rejoined: the remaining detour is inside the lookahead
            track, on_detour = agent.path, False
            q = track.closest((state.x, state.y))

        # detour upkeep is not gated on arbitration: a traffic conflict that
        # grabs the command must not stop the path work underneath it, or the
        # vehicle exits the conflict aimed straight at the blockage.  It is
        # gated on the vehicle being roughly on-path and path-aligned, since
        # the detour spline starts at the vehicle and a plan drawn from a
        # hard-turning excursion bakes that excursion in; a skipped cycle
        # just retries on the next one.
        if sc.strategy == "hierarchical" and cycle >= agent.replan_after:
            blocker = blocking_obstacle(state, agent.path, aug, sc.regions)
            if blocker is not None and (agent.plan is None
                                        or not agent.plan.active
                                        or agent.plan.blocker_id != blocker.ident):
                nom = agent.path.closest((state.x, state.y))
                tan = agent.path.tangent_at(nom.arclength)
                err = wrap_angle(state.phi - math.atan2(tan[1], tan[0]))
                if nom.distance < 15.0 and abs(err) < 0.7:
                    try:
                        agent.plan = outer_resolve(state, agent.path, blocker,
                                                   sc.regions, sc.vehicle)
                    except PlanError as exc:
                        log.info("uav %d cycle %d: %s", agent.ident, cycle, exc)
                        agent.plan = None
                        # a refused detour usually refuses again from 2 m
                        # further along; don't spline-validate every cycle
                        agent.replan_after = cycle + 10
                    track, on_detour = self._track_path(agent)
                    q = track.closest((state.x, state.y))

        horizon = sc.dmpc.horizon
        lookahead = self._lookahead(agent, track, on_detour, q.arclength,
                                    horizon + 2)
        own_plan = lookahead[1:horizon + 1]
        flags = detect_all(state, sc.vehicle, agent.path, own_plan, aug,
                           sc.regions, cycle)
        layer = arbitrate(flags, sc.strategy)

        # an inner engagement outlives its detection flag: release exactly at
        # the trigger line and the tracker steers the conflict straight back,
        # flapping the layers while the pair squeezes below the bubble
        inner_threats = flags.inner_threats
        if sc.strategy == "hierarchical":
            if layer == "inner":
                # the escape side is chosen once per engagement and re-chosen
                # only when a threat this engagement has never seen becomes
                # primary: re-polling the census while marginal threats blink
                # in and out of detection flips the side every cycle and the
                # alternating turns cancel into straight flight, while a side
                # carried over from an old engagement can aim the escape
                # straight at a newly appeared threat
                primary = inner_threats[0].ident
                if agent.engaged != primary and primary not in agent.engaged_seen:
                    agent.side = choose_side(state, inner_threats, sc.reactive)
                agent.engaged_seen.update(t.ident for t in inner_threats)
                agent.engaged = primary
            elif agent.engaged is not None:
                held = track_engagement(state, sc.vehicle, aug, agent.engaged,
                                        sc.regions)
                if held is None:
                    agent.engaged = None
                    agent.engaged_seen.clear()
                    agent.side = None
                else:
                    layer = "inner"
                    inner_threats = [held]

        sequence = None
        if layer == "inner":
            side = agent.side if agent.side is not None else choose_side(
                state, inner_threats, sc.reactive)
            omega = side_command(state, side, inner_threats, sc.reactive,
                                 sc.vehicle)
            # broadcast the held turn so neighbours stop assuming on-path flight
            sequence = np.full(horizon, omega)
        elif layer == "middle":
            omega, plan = dmpc_step(state, own_plan, aug, sc.dmpc, sc.vehicle,
                                    sc.regions, cycle, agent.ident)
            sequence = plan.inputs
        else:
            # outer and nominal both reduce to pursuit: by this point the
            # track already is the detour whenever one was adopted
            omega = self._pursuit(state, track, q)
        return _Decision(omega=omega, layer=layer, flags=flags,
                         sequence=sequence, lookahead=lookahead)

    # ------------------------------------------------------------------
    # metrics plumbing

    def _separations(self, i: int) -> dict[str, float]:
        """True surface distances from vehicle i to every other object."""
        out = {}
        a = self.agents[i]
        for b in self.agents:
            if b.ident == a.ident:
                continue
            out[f"uav:{b.ident}"] = math.hypot(b.state.x - a.state.x,
                                               b.state.y - a.state.y)
        for obs in self.obstacles:
            out[obs.ident] = (math.hypot(obs.position[0] - a.state.x,
                                         obs.position[1] - a.state.y)
                              - obs.radius)
        return out

    # ------------------------------------------------------------------

    def run(self) -> tuple[Metrics, list[tuple]]:
        sc = self.sc
        n = len(self.agents)
        params = sc.vehicle
        rows: list[tuple] = []
        layer_cycles = {name: 0 for name in LAYERS}
        failures_per_uav = [0] * n
        in_violation: dict[tuple[int, str], bool] = {}
        min_sep = math.inf

        def account(i: int) -> float:
            nonlocal min_sep
            local_min = math.inf
            for ident, d in self._separations(i).items():
                local_min = min(local_min, d)
                key = (i, ident)
                below = d <= sc.regions.r_safe
                if below and not in_violation.get(key, False):
                    failures_per_uav[i] += 1
                in_violation[key] = below
            min_sep = min(min_sep, local_min)
            return local_min

        for i in range(n):
            account(i)

        pool = None
        if sc.engine.parallel and n > 1:
            pool = ThreadPoolExecutor(max_workers=n)
        try:
            for cycle in range(sc.cycles):
                collected = [self.buses[i].collect(self.agents[i].ident, cycle)
                             for i in range(n)]
                if pool is not None:
                    decisions = list(pool.map(self._decide, self.agents,
                                              [cycle] * n, collected))
                else:
                    decisions = [self._decide(self.agents[i], cycle, collected[i])
                                 for i in range(n)]

                # log against the cycle-start snapshot, then move the world
                pre = [a.state for a in self.agents]
                pre_sep = [min(self._separations(i).values(), default=math.inf)
                           for i in range(n)]
                for i, (a, d) in enumerate(zip(self.agents, decisions)):
                    layer_cycles[d.layer] += 1
                    if sc.engine.log_trajectory:
                        rows.append((cycle, a.ident, pre[i].x, pre[i].y,
                                     pre[i].phi, d.omega, d.layer,
                                     int(d.flags.inner), int(d.flags.middle),
                                     int(d.flags.outer), pre_sep[i]))
                for a, d in zip(self.agents, decisions):
                    a.state = step(a.state, d.omega, params)
                for obs in self.obstacles:
                    obs.position = obs.position + obs.velocity * params.cycle_dt
                for i, (a, d) in enumerate(zip(self.agents, decisions)):
                    vx, vy = pre[i].velocity(params)
                    self.buses[i].publish(StateMessage(
                        sender=a.ident, cycle=cycle,
                        x=pre[i].x, y=pre[i].y, phi=pre[i].phi, vx=vx, vy=vy,
                        sequence=d.sequence, ref_lookahead=d.lookahead))
                for i in range(n):
                    account(i)
        finally:
            if pool is not None:
                pool.shutdown()
            if sc.bus.transport == "udp":
                for b in self.buses:
                    b.close()

        failures = sum(failures_per_uav)
        # every step covers exactly speed * cycle_dt metres
        distance_per_uav = [sc.cycles * params.speed * params.cycle_dt] * n
        acfd = avg_collision_free_distance(
            float(np.mean(distance_per_uav)), failures)
        metrics = Metrics(
            strategy=sc.strategy, sensing_mode=sc.sensing.mode, seed=sc.seed,
            cycles=sc.cycles, n_uavs=n, failures=failures,
            failures_per_uav=failures_per_uav,
            distance_per_uav=distance_per_uav,
            avg_collision_free_distance=(
                acfd if math.isinf(acfd) else round(acfd, 2)),
            min_separation=round(min_sep, 6) if math.isfinite(min_sep) else min_sep,
            layer_cycles=layer_cycles)
        return metrics, rows


def rows_to_csv(rows: list[tuple]) -> str:
    """Render trajectory rows to CSV text with repr-precision floats."""
    lines = [CSV_HEADER]
    for (cycle, uav, x, y, phi, omega, layer, fi, fm, fo, sep) in rows:
        sep_txt = "inf" if math.isinf(sep) else repr(float(sep))
        lines.append(f"{cycle},{uav},{x!r},{y!r},{phi!r},{float(omega)!r},"
                     f"{layer},{fi},{fm},{fo},{sep_txt}")
    return "\n".join(lines) + "\n"


def metrics_to_json(metrics: Metrics) -> str:
    return json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
