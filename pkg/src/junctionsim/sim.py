"""Closed-loop intersection simulation.

One tick runs the full per-step pipeline: snapshot the fleet, negotiate
crossing priorities, plan every vehicle against the same snapshot, apply
the first planned input through the plant, then handle crossings,
despawns, random arrivals, and safety monitoring.  Planning order within
a tick does not matter because decisions only read the snapshot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import mpc as mpcmod
from .dynamics import StepParams, VehicleState, step as plant_step
from .geometry import (
    APPROACHES,
    LayoutConfig,
    Path,
    build_intersection,
    locate_extended,
    project_many,
)
from .priority import BidParams, PriorityView, VehicleInfo, negotiate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScriptedVehicle:
    """A vehicle inserted at a fixed step with a fixed initial condition."""

    approach: str
    maneuver: str
    position: float
    speed: float
    reference_speed: float | None = None
    spawn_step: int = 0

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError("speed must be nonnegative")
        if self.spawn_step < 0:
            raise ValueError("spawn_step must be nonnegative")


@dataclass(frozen=True)
class SpawnConfig:
    """Random arrivals: per-approach Bernoulli draws each step.

    A new vehicle enters at the start of its lane with a personal reference
    speed drawn from a truncated normal.  The entry is skipped when the gap
    to the lane's rearmost vehicle could not be closed out safely even if
    that vehicle braked at full strength.
    """

    probability: float
    right_turn_probability: float = 0.5
    speed_mean: float = 12.5
    speed_std: float = math.sqrt(5.0) / 3.6

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if not 0.0 <= self.right_turn_probability <= 1.0:
            raise ValueError("right_turn_probability must lie in [0, 1]")
        if self.speed_mean <= 0.0 or self.speed_std < 0.0:
            raise ValueError("speed_mean must be positive, speed_std nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one simulation run needs."""

    duration_steps: int
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    mpc: mpcmod.MpcConfig = field(default_factory=mpcmod.MpcConfig)
    bid: BidParams = field(default_factory=BidParams)
    scripted: tuple[ScriptedVehicle, ...] = ()
    spawning: SpawnConfig | None = None
    safety_distance: float = 3.5
    seed: int = 0
    label: str = "scenario"

    def __post_init__(self) -> None:
        if self.duration_steps < 1:
            raise ValueError("duration_steps must be at least 1")
        if self.safety_distance <= 0.0:
            raise ValueError("safety_distance must be positive")


@dataclass
class VehicleRecord:
    """Mutable per-vehicle bookkeeping while the vehicle is active."""

    vehicle_id: int
    approach: str
    maneuver: str
    path: Path
    state: VehicleState
    reference_speed: float
    spawn_step: int
    accel: float = 0.0
    plan_positions: np.ndarray | None = None
    plan_speeds: np.ndarray | None = None
    warm: mpcmod.WarmStart | None = None
    despawn_step: int | None = None
    last_status: str = ""


@dataclass(frozen=True)
class TraceRecord:
    """One vehicle sample at the start of a step, before the plant update."""

    step: int
    time: float
    vehicle_id: int
    approach: str
    maneuver: str
    position: float
    speed: float
    accel: float
    reference_speed: float


@dataclass(frozen=True)
class CrossEvent:
    """A vehicle's front passing a collision point during a step."""

    step: int
    time: float
    vehicle_id: int
    point_index: int


@dataclass(frozen=True)
class Violation:
    """Two conflicting vehicles closer than the safety distance."""

    step: int
    time: float
    first_id: int
    second_id: int
    distance: float


@dataclass
class SimState:
    """Run-scoped mutable state; create via new_state."""

    config: ScenarioConfig
    paths: dict[tuple[str, str], Path]
    records: dict[int, VehicleRecord]
    rng: np.random.Generator
    pending: list[ScriptedVehicle]
    roster: dict[int, VehicleRecord] = field(default_factory=dict)
    next_id: int = 1
    step: int = 0
    factor_cache: dict = field(default_factory=dict)
    traces: list[TraceRecord] = field(default_factory=list)
    events: list[CrossEvent] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    spawned_count: int = 0
    blocked_spawn_count: int = 0
    despawned_count: int = 0
    fallback_count: int = 0
    clamp_count: int = 0


@dataclass(frozen=True)
class SimResult:
    """Output of run(): traces plus events, violations, and counters."""

    config: ScenarioConfig
    n_steps: int
    traces: tuple[TraceRecord, ...]
    events: tuple[CrossEvent, ...]
    violations: tuple[Violation, ...]
    vehicles: tuple[VehicleRecord, ...]
    spawned_count: int
    blocked_spawn_count: int
    despawned_count: int
    fallback_count: int
    clamp_count: int


def new_state(config: ScenarioConfig) -> SimState:
    _points, paths = build_intersection(config.layout)
    pending = sorted(config.scripted, key=lambda s: s.spawn_step)
    for sv in pending:
        if (sv.approach, sv.maneuver) not in paths:
            raise ValueError(f"unknown route {sv.approach}/{sv.maneuver}")
    return SimState(
        config=config,
        paths=paths,
        records={},
        rng=np.random.default_rng(config.seed),
        pending=pending,
    )


def _insert(sim: SimState, sv: ScriptedVehicle) -> VehicleRecord:
    path = sim.paths[(sv.approach, sv.maneuver)]
    ref = sv.reference_speed
    if ref is None:
        ref = sim.config.mpc.reference_speed
    rec = VehicleRecord(
        vehicle_id=sim.next_id,
        approach=sv.approach,
        maneuver=sv.maneuver,
        path=path,
        state=VehicleState(p=sv.position, v=sv.speed),
        reference_speed=ref,
        spawn_step=sim.step,
    )
    sim.records[rec.vehicle_id] = rec
    sim.roster[rec.vehicle_id] = rec
    sim.next_id += 1
    sim.spawned_count += 1
    return rec


def _admit_scripted(sim: SimState) -> None:
    while sim.pending and sim.pending[0].spawn_step <= sim.step:
        _insert(sim, sim.pending.pop(0))


def _snapshot(sim: SimState) -> dict[int, VehicleInfo]:
    return {
        vid: VehicleInfo(
            vehicle_id=vid, path=rec.path, state=rec.state, accel=rec.accel
        )
        for vid, rec in sim.records.items()
    }


def _forecasts(sim: SimState) -> dict[int, mpcmod.NeighborForecast]:
    """Intended trajectories broadcast last step, re-indexed to this step."""
    out: dict[int, mpcmod.NeighborForecast] = {}
    for vid, rec in sim.records.items():
        if rec.plan_positions is None or len(rec.plan_positions) < 2:
            continue
        out[vid] = mpcmod.NeighborForecast(
            vehicle_id=vid,
            path=rec.path,
            positions=rec.plan_positions[1:],
            speeds=rec.plan_speeds[1:],
        )
    return out


def _decide_all(sim: SimState, snapshot: dict[int, VehicleInfo], view: PriorityView) -> None:
    forecasts = _forecasts(sim)
    cfg = sim.config.mpc
    for vid in sorted(sim.records):
        rec = sim.records[vid]
        warm = rec.warm
        if warm is not None:
            warm = mpcmod.shift_warm_start(warm, cfg.horizon)
        decision = mpcmod.decide(
            subject=snapshot[vid],
            snapshot=snapshot,
            view=view,
            forecasts=forecasts,
            config=cfg,
            factor_cache=sim.factor_cache,
            warm=warm,
            reference_speed=rec.reference_speed,
        )
        rec.accel = decision.accel
        rec.plan_positions = decision.plan_positions
        rec.plan_speeds = decision.plan_speeds
        rec.warm = decision.warm
        rec.last_status = decision.status
        if decision.used_fallback:
            sim.fallback_count += 1


def _trace_all(sim: SimState) -> None:
    t = sim.step * sim.config.mpc.sampling_time
    for vid in sorted(sim.records):
        rec = sim.records[vid]
        sim.traces.append(
            TraceRecord(
                step=sim.step,
                time=t,
                vehicle_id=vid,
                approach=rec.approach,
                maneuver=rec.maneuver,
                position=rec.state.p,
                speed=rec.state.v,
                accel=rec.accel,
                reference_speed=rec.reference_speed,
            )
        )


def _step_all(sim: SimState) -> None:
    params = StepParams(sampling_time=sim.config.mpc.sampling_time)
    ts = params.sampling_time
    for vid in sorted(sim.records):
        rec = sim.records[vid]
        old = rec.state
        new, clamped = plant_step(old, rec.accel, params)
        if clamped:
            sim.clamp_count += 1
        rec.state = new
        for index, coord in rec.path.collision_point_coords:
            if old.p < coord <= new.p:
                frac = (coord - old.p) / (new.p - old.p)
                sim.events.append(
                    CrossEvent(
                        step=sim.step + 1,
                        time=(sim.step + frac) * ts,
                        vehicle_id=vid,
                        point_index=index,
                    )
                )


def _despawn(sim: SimState) -> list[VehicleRecord]:
    done = []
    for vid in sorted(sim.records):
        rec = sim.records[vid]
        if rec.state.p >= rec.path.total_length:
            rec.despawn_step = sim.step + 1
            done.append(rec)
            del sim.records[vid]
            sim.despawned_count += 1
    return done


def _lane_rearmost(sim: SimState, approach: str) -> VehicleRecord | None:
    best = None
    for rec in sim.records.values():
        if rec.approach != approach:
            continue
        if best is None or rec.state.p < best.state.p:
            best = rec
    return best


def _spawn_random(sim: SimState) -> None:
    cfg = sim.config.spawning
    if cfg is None:
        return
    mpc_cfg = sim.config.mpc
    for approach in APPROACHES:
        if sim.rng.random() >= cfg.probability:
            continue
        maneuver = "right" if sim.rng.random() < cfg.right_turn_probability else "straight"
        v_ref = 0.0
        for _ in range(100):
            v_ref = sim.rng.normal(cfg.speed_mean, cfg.speed_std)
            if 0.0 < v_ref <= mpc_cfg.v_max:
                break
        else:
            v_ref = cfg.speed_mean
        lead = _lane_rearmost(sim, approach)
        if lead is not None:
            # Entry gap must absorb the worst case of the leader braking to
            # a stop while the newcomer arrives at its reference speed.
            brake = abs(mpc_cfg.a_min)
            needed = (
                mpc_cfg.headway_time * v_ref
                + mpc_cfg.standstill_gap
                + max(0.0, (v_ref**2 - lead.state.v**2) / (2.0 * brake))
            )
            if lead.state.p < needed:
                sim.blocked_spawn_count += 1
                continue
        _insert(
            sim,
            ScriptedVehicle(
                approach=approach,
                maneuver=maneuver,
                position=0.0,
                speed=v_ref,
                reference_speed=v_ref,
            ),
        )


def conflicting_pairs(
    records: dict[int, VehicleRecord]
) -> list[tuple[int, int]]:
    """Pairs that can physically interact right now.

    Either one vehicle's position lies on the other's path (following or
    merged traffic, in either order), or the two routes share a collision
    point that at least one of them has not yet passed.  Vehicles on
    parallel lanes with no shared point are never conflicting.
    """
    vids = sorted(records)
    if len(vids) < 2:
        return []
    globals_ = [locate_extended(records[v].path, records[v].state.p) for v in vids]
    pos = np.array([(g.x, g.y) for g in globals_])
    on_path: dict[int, np.ndarray] = {}
    for i, vid in enumerate(vids):
        proj = project_many(records[vid].path, pos, extend_end=False)
        on_path[vid] = np.isfinite(proj)
    points = {
        vid: dict(records[vid].path.collision_point_coords) for vid in vids
    }
    out = []
    for a_i in range(len(vids)):
        for b_i in range(a_i + 1, len(vids)):
            a, b = vids[a_i], vids[b_i]
            if on_path[a][b_i] or on_path[b][a_i]:
                out.append((a, b))
                continue
            shared = points[a].keys() & points[b].keys()
            for h in shared:
                if points[a][h] > records[a].state.p or points[b][h] > records[b].state.p:
                    out.append((a, b))
                    break
    return out


def collision_monitor(
    records: dict[int, VehicleRecord], safety_distance: float
) -> list[tuple[int, int, float]]:
    """Conflicting pairs strictly closer than the safety distance."""
    hits = []
    for a, b in conflicting_pairs(records):
        ga = locate_extended(records[a].path, records[a].state.p)
        gb = locate_extended(records[b].path, records[b].state.p)
        d = math.hypot(ga.x - gb.x, ga.y - gb.y)
        if d < safety_distance:
            hits.append((a, b, d))
    return hits


def _monitor(sim: SimState) -> None:
    t = sim.step * sim.config.mpc.sampling_time
    for a, b, d in collision_monitor(sim.records, sim.config.safety_distance):
        sim.violations.append(
            Violation(step=sim.step, time=t, first_id=a, second_id=b, distance=d)
        )
        log.warning(
            "step %d: vehicles %d and %d at distance %.3f m (< %.2f m)",
            sim.step, a, b, d, sim.config.safety_distance,
        )


def tick(sim: SimState) -> None:
    """Advance the simulation by one sampling interval."""
    _admit_scripted(sim)
    snapshot = _snapshot(sim)
    if snapshot:
        view = negotiate(snapshot, sim.config.bid)
        _decide_all(sim, snapshot, view)
    _trace_all(sim)
    _step_all(sim)
    sim.step += 1
    _despawn(sim)
    _spawn_random(sim)
    _monitor(sim)


def run(config: ScenarioConfig) -> SimResult:
    """Simulate duration_steps ticks and collect the results."""
    sim = new_state(config)
    _admit_scripted(sim)
    _monitor(sim)
    for _ in range(config.duration_steps):
        tick(sim)
    return SimResult(
        config=config,
        n_steps=sim.step,
        traces=tuple(sim.traces),
        events=tuple(sim.events),
        violations=tuple(sim.violations),
        vehicles=tuple(sim.roster[vid] for vid in sorted(sim.roster)),
        spawned_count=sim.spawned_count,
        blocked_spawn_count=sim.blocked_spawn_count,
        despawned_count=sim.despawned_count,
        fallback_count=sim.fallback_count,
        clamp_count=sim.clamp_count,
    )
