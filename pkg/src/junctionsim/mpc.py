"""Per-vehicle model predictive control over the double-integrator model.

Each vehicle plans accelerations u(0..H-1) and margin variables d(0..H)
for one path coordinate over a horizon of H steps, minimizing

    sum_t q (v(t) - v_ref)^2 + r u(t)^2 + w d(t)

subject to acceleration and speed bounds, and two families of safety
rows built from neighbor forecasts:

  rear rows:  p(t) + t_h v(t) + d(t) <= (neighbor position on my path) - g
  hold rows:  p(t)          + d(t) <= (conflict point coordinate)    - g

where t_h is the time headway and g the standstill gap.  The margin d is
rewarded (w < 0), capped above, and bounded below by the relaxation term,
so it rides at its cap when nothing binds and shrinks toward the floor
when tracking pressure meets a safety row.

Hold rows for a conflict point stay active at prediction step t only
while the vehicle with precedence is forecast to still occupy the point,
i.e. until it travels a clearance distance past it.  Vehicles that have
just crossed a point (within that clearance) keep generating rows for
followers even though they no longer take part in the auction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .dynamics import StepParams, VehicleState
from .geometry import Path, collision_points_ahead, locate_many, project_many
from .priority import PriorityView, VehicleInfo
from . import qp as qpmod

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    """Planner weights, limits, and safety distances."""

    horizon: int = 100
    sampling_time: float = 0.03
    reference_speed: float = 12.5
    speed_weight: float = 1.0
    accel_weight: float = 0.01
    margin_weight: float = -0.1
    v_min: float = 0.0
    v_max: float = 130.0 / 3.6
    a_min: float = -9.0
    a_max: float = 5.0
    headway_time: float = 0.1
    headway_relax: float = 0.0
    standstill_gap: float = 3.5
    margin_cap: float = 5.0
    crossing_clearance: float = 3.5
    solver_tolerance: float = 1e-6
    solver_max_iter: int = 5000

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.sampling_time <= 0.0:
            raise ValueError("sampling_time must be positive")
        if not 0.0 <= self.v_min < self.v_max:
            raise ValueError("need 0 <= v_min < v_max")
        if self.a_min >= 0.0 or self.a_max <= 0.0:
            raise ValueError("need a_min < 0 < a_max")
        if self.speed_weight <= 0.0 or self.accel_weight <= 0.0:
            raise ValueError("speed_weight and accel_weight must be positive")
        if self.headway_time < 0.0 or self.headway_relax < 0.0:
            raise ValueError("headway terms must be nonnegative")
        if self.standstill_gap <= 0.0:
            raise ValueError("standstill_gap must be positive")
        if self.margin_cap < 0.0 or self.crossing_clearance < 0.0:
            raise ValueError("margin_cap and crossing_clearance must be nonnegative")


@lru_cache(maxsize=8)
def prediction_matrices(horizon: int, sampling_time: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear maps from the input sequence to predicted speed and position.

    Returns (Sv, Sp), each (horizon+1, horizon), such that for inputs u:

        v(t) = v0 + (Sv u)[t]
        p(t) = p0 + t*Ts*v0 + (Sp u)[t]

    matching forward-Euler double-integrator dynamics without saturation.
    """
    ts = float(sampling_time)
    t_idx = np.arange(horizon + 1)[:, None]
    s_idx = np.arange(horizon)[None, :]
    sv = ts * (s_idx < t_idx).astype(float)
    sp = ts * ts * np.maximum(t_idx - 1 - s_idx, 0).astype(float)
    sv.flags.writeable = False
    sp.flags.writeable = False
    return sv, sp


@lru_cache(maxsize=8)
def _cost_blocks(
    horizon: int, ts: float, speed_weight: float, accel_weight: float
) -> tuple[np.ndarray, np.ndarray]:
    """Constant quadratic cost matrix and tracking row sum for one tuning."""
    sv, _ = prediction_matrices(horizon, ts)
    n = 2 * horizon + 1
    sv1 = sv[1:]
    P = np.zeros((n, n))
    P[:horizon, :horizon] = 2.0 * (
        speed_weight * (sv1.T @ sv1) + accel_weight * np.eye(horizon)
    )
    track = sv1.sum(axis=0)
    P.flags.writeable = False
    track.flags.writeable = False
    return P, track


@lru_cache(maxsize=8)
def _safety_row_banks(
    horizon: int, ts: float, headway_time: float
) -> tuple[np.ndarray, np.ndarray]:
    """Full coefficient rows for rear and hold constraints at every step."""
    sv, sp = prediction_matrices(horizon, ts)
    n = 2 * horizon + 1
    eye = np.eye(horizon + 1)
    rear = np.zeros((horizon + 1, n))
    rear[:, :horizon] = sp + headway_time * sv
    rear[:, horizon:] = eye
    hold = np.zeros((horizon + 1, n))
    hold[:, :horizon] = sp
    hold[:, horizon:] = eye
    rear.flags.writeable = False
    hold.flags.writeable = False
    return rear, hold


@lru_cache(maxsize=8)
def _static_rows(horizon: int, ts: float, headway_relax: float) -> np.ndarray:
    """Margin, input, and speed bound rows; identical for every solve."""
    sv, _ = prediction_matrices(horizon, ts)
    H = horizon
    n = 2 * H + 1
    block = np.zeros((4 * H + 2 * (H + 1), n))
    r = 0
    block[r:r + H + 1, H:] = np.eye(H + 1)  # margin_hi
    r += H + 1
    block[r:r + H + 1, :H] = -headway_relax * sv  # margin_lo
    block[r:r + H + 1, H:] = -np.eye(H + 1)
    r += H + 1
    block[r:r + H, :H] = np.eye(H)  # u_hi
    r += H
    block[r:r + H, :H] = -np.eye(H)  # u_lo
    r += H
    block[r:r + H, :H] = sv[1:]  # v_hi
    r += H
    block[r:r + H, :H] = -sv[1:]  # v_lo
    block.flags.writeable = False
    return block


@lru_cache(maxsize=8)
def _static_labels(horizon: int) -> tuple[str, ...]:
    H = horizon
    return tuple(
        [f"margin_hi:t={t}" for t in range(H + 1)]
        + [f"margin_lo:t={t}" for t in range(H + 1)]
        + [f"u_hi:s={s}" for s in range(H)]
        + [f"u_lo:s={s}" for s in range(H)]
        + [f"v_hi:t={t}" for t in range(1, H + 1)]
        + [f"v_lo:t={t}" for t in range(1, H + 1)]
    )


@dataclass(frozen=True)
class NeighborForecast:
    """A neighbor's intended trajectory along its own path."""

    vehicle_id: int
    path: Path
    positions: np.ndarray  # path coordinate per step, length >= 1
    speeds: np.ndarray

    def sampled(self, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions/speeds at steps 0..horizon, extended at constant speed."""
        pos = np.asarray(self.positions, dtype=float)
        spd = np.asarray(self.speeds, dtype=float)
        need = horizon + 1
        if len(pos) >= need:
            return pos[:need], spd[:need]
        extra = np.arange(1, need - len(pos) + 1)
        # Ts is implicit in the caller's step spacing; recover from the last
        # increment when available, else hold position.
        dt_pos = pos[-1] - pos[-2] if len(pos) >= 2 else 0.0
        pos_ext = pos[-1] + extra * dt_pos
        spd_ext = np.full(len(extra), spd[-1])
        return np.concatenate([pos, pos_ext]), np.concatenate([spd, spd_ext])


def constant_speed_forecast(
    vehicle_id: int, path: Path, state: VehicleState, horizon: int, sampling_time: float
) -> NeighborForecast:
    """Fallback forecast for vehicles with no committed plan yet."""
    t = np.arange(horizon + 1)
    return NeighborForecast(
        vehicle_id=vehicle_id,
        path=path,
        positions=state.p + t * sampling_time * state.v,
        speeds=np.full(horizon + 1, state.v),
    )


@dataclass(frozen=True)
class SafetyRequirement:
    """One candidate inequality: position expression at step t stays below limit."""

    kind: str  # "rear" | "hold"
    step: int
    limit: float
    source_id: int
    point_index: int | None = None


def _point_coords(path: Path) -> dict[int, float]:
    return {index: coord for index, coord in path.collision_point_coords}


def clearing_vehicles(
    subject: VehicleInfo,
    snapshot: Mapping[int, VehicleInfo],
    clearance: float,
) -> dict[int, tuple[int, ...]]:
    """Vehicles just past a conflict point the subject has not reached.

    A vehicle that crossed a shared point less than `clearance` ago no
    longer bids for it, but still occupies the conflict region; followers
    must keep holding until it is clear of the window.
    """
    ahead = collision_points_ahead(subject.path, subject.state.p)
    if not ahead:
        return {}
    out: dict[int, tuple[int, ...]] = {}
    for vid, info in snapshot.items():
        if vid == subject.vehicle_id:
            continue
        coords = _point_coords(info.path)
        pts = []
        for cp, _dist in ahead:
            s = coords.get(cp.index)
            if s is None:
                continue
            gap = s - info.state.p
            if -clearance < gap <= 0.0:
                pts.append(cp.index)
        if pts:
            out[vid] = tuple(pts)
    return out


def predict_conflicts(
    subject: VehicleInfo,
    snapshot: Mapping[int, VehicleInfo],
    view: PriorityView,
    forecasts: Mapping[int, NeighborForecast],
    config: MpcConfig,
) -> list[SafetyRequirement]:
    """Turn neighbor forecasts into per-step safety requirements.

    Rear rows come from any watched vehicle whose forecast position lies on
    the subject's path ahead of it.  Hold rows come from shared conflict
    points where another vehicle has precedence or is still clearing.
    """
    me = subject.vehicle_id
    horizon = config.horizon
    gap = config.standstill_gap
    clearance = config.crossing_clearance

    frontal = view.frontal.get(me, frozenset())
    higher = view.higher_priority.get(me, frozenset())
    clearing = clearing_vehicles(subject, snapshot, clearance)
    watched = set(frontal) | set(higher) | set(clearing)

    ahead = collision_points_ahead(subject.path, subject.state.p)
    my_coord = {cp.index: cp_dist + subject.state.p for cp, cp_dist in ahead}

    reqs: list[SafetyRequirement] = []
    for vid in sorted(watched):
        info = snapshot.get(vid)
        if info is None:
            continue
        fc = forecasts.get(vid)
        if fc is None:
            fc = constant_speed_forecast(
                vid, info.path, info.state, horizon, config.sampling_time
            )
        pos, _spd = fc.sampled(horizon)

        # Rear rows: map the neighbor's forecast into my path coordinates.
        pts = locate_many(info.path, pos)
        proj = project_many(subject.path, pts, extend_end=True)
        valid = np.isfinite(proj) & (proj > subject.state.p)
        for t in np.flatnonzero(valid):
            reqs.append(
                SafetyRequirement(
                    kind="rear",
                    step=int(t),
                    limit=float(proj[t]) - gap,
                    source_id=vid,
                )
            )

        # Hold rows at shared points while this neighbor has not cleared.
        their_coord = _point_coords(info.path)
        for h, c_mine in my_coord.items():
            c_theirs = their_coord.get(h)
            if c_theirs is None:
                continue
            has_precedence = view.precedes(vid, me, h)
            is_clearing = h in clearing.get(vid, ())
            if not (has_precedence or is_clearing):
                continue
            not_cleared = (c_theirs - pos) > -clearance
            for t in np.flatnonzero(not_cleared):
                reqs.append(
                    SafetyRequirement(
                        kind="hold",
                        step=int(t),
                        limit=c_mine - gap,
                        source_id=vid,
                        point_index=h,
                    )
                )
    return reqs


@dataclass(frozen=True)
class QpLayout:
    """Row bookkeeping for an assembled program.

    labels align with the rows of G.  cache_key identifies the constraint
    matrix pattern: programs sharing it have bit-identical G (only h, q
    differ), which lets the solver reuse factorizations and duals.
    """

    horizon: int
    rear_steps: tuple[int, ...]
    hold_steps: tuple[int, ...]
    labels: tuple[str, ...]
    dropped: tuple[str, ...]
    clamped: tuple[str, ...]
    cache_key: object
    contributions: dict[str, tuple[tuple[int, int | None, float], ...]]


def assemble(
    state: VehicleState,
    requirements: list[SafetyRequirement],
    config: MpcConfig,
    reference_speed: float | None = None,
) -> tuple[qpmod.QuadraticProgram, QpLayout]:
    """Build the condensed QP for one vehicle.

    Variables are z = [u(0..H-1), d(0..H)].  Requirements sharing a step
    and kind collapse to the single binding row (their coefficient rows are
    identical, so the smallest limit dominates).  A requirement at step 0
    constrains only d(0); when even the smallest admissible margin cannot
    satisfy it the row is dropped as unactionable, since the current state
    is not a decision, and reported in the layout.

    Rows at later steps that no admissible input can satisfy (the limit sits
    inside the maximal-braking envelope) are clamped to that envelope and
    reported: the vehicle is told to brake as hard as the model allows,
    never handed an infeasible program or a silently weakened constraint.
    """
    H = config.horizon
    ts = config.sampling_time
    p0, v0 = state.p, state.v
    v_ref = config.reference_speed if reference_speed is None else reference_speed
    n = 2 * H + 1

    # Cost: tracking on v(1..H), effort on u, linear reward on margins.
    P, track = _cost_blocks(H, ts, config.speed_weight, config.accel_weight)
    q = np.zeros(n)
    q[:H] = 2.0 * config.speed_weight * (v0 - v_ref) * track
    q[H:] = config.margin_weight

    # Collapse requirements: smallest limit per (kind, step).
    binding: dict[tuple[str, int], float] = {}
    contrib: dict[str, list[tuple[int, int | None, float]]] = {}
    for req in requirements:
        if not 0 <= req.step <= H:
            raise ValueError(f"requirement step {req.step} outside horizon {H}")
        key = (req.kind, req.step)
        if key not in binding or req.limit < binding[key]:
            binding[key] = req.limit
        contrib.setdefault(f"{req.kind}:t={req.step}", []).append(
            (req.source_id, req.point_index, req.limit)
        )

    margin_floor0 = -config.headway_relax * v0

    # Maximal-braking envelope: the lowest value each safety row's left side
    # can reach under u >= a_min and v >= 0.  Rows are clamped to it so the
    # program stays feasible when a limit is physically out of reach.
    steps_idx = np.arange(H + 1)
    v_brake = np.maximum(v0 + config.a_min * ts * steps_idx, 0.0)
    brake_travel = np.concatenate([[0.0], ts * np.cumsum(v_brake[:-1])])
    min_sp_u = brake_travel - steps_idx * ts * v0
    floor_rear = (
        min_sp_u
        + config.headway_time * (v_brake - v0)
        - config.headway_relax * v_brake
    )
    floor_hold = min_sp_u - config.headway_relax * v_brake

    labels: list[str] = []
    dropped: list[str] = []
    clamped: list[str] = []
    rear_steps: list[int] = []
    hold_steps: list[int] = []
    safety_rhs: list[float] = []

    def motion_rhs(t: int, limit: float, with_headway: bool) -> float:
        base = limit - p0 - t * ts * v0
        if with_headway:
            base -= config.headway_time * v0
        return base

    for kind, steps_out, with_headway in (
        ("rear", rear_steps, True),
        ("hold", hold_steps, False),
    ):
        floors = floor_rear if with_headway else floor_hold
        for (k, t), limit in sorted(binding.items()):
            if k != kind:
                continue
            b = motion_rhs(t, limit, with_headway)
            if t == 0:
                # p(0), v(0) are data; the row reduces to d(0) <= b.
                if b < margin_floor0 - 1e-12:
                    dropped.append(
                        f"{kind}:t=0 unactionable "
                        f"(needs margin {b:.3f}, floor {margin_floor0:.3f})"
                    )
                    continue
            elif b < floors[t] - 1e-12:
                clamped.append(
                    f"{kind}:t={t} beyond braking envelope "
                    f"(bound {b:.3f}, floor {floors[t]:.3f})"
                )
                b = float(floors[t])
            safety_rhs.append(b)
            labels.append(f"{kind}:t={t}")
            steps_out.append(t)

    rear_bank, hold_bank = _safety_row_banks(H, ts, config.headway_time)
    labels.extend(_static_labels(H))
    # Static rows: margin cap/floor each step, input bounds, speed bounds
    # for t >= 1 (t = 0 is data).
    G = np.concatenate(
        [
            rear_bank[rear_steps],
            hold_bank[hold_steps],
            _static_rows(H, ts, config.headway_relax),
        ]
    )
    h = np.concatenate(
        [
            np.asarray(safety_rhs, dtype=float),
            np.full(H + 1, config.margin_cap),
            np.full(H + 1, config.headway_relax * v0),
            np.full(H, config.a_max),
            np.full(H, -config.a_min),
            np.full(H, config.v_max - v0),
            np.full(H, v0 - config.v_min),
        ]
    )
    program = qpmod.QuadraticProgram(P=P, q=q, G=G, h=h)
    layout = QpLayout(
        horizon=H,
        rear_steps=tuple(rear_steps),
        hold_steps=tuple(hold_steps),
        labels=tuple(labels),
        dropped=tuple(dropped),
        clamped=tuple(clamped),
        cache_key=(
            H, ts, config.speed_weight, config.accel_weight,
            config.headway_time, config.headway_relax,
            tuple(rear_steps), tuple(hold_steps),
        ),
        contributions={k: tuple(v) for k, v in contrib.items()},
    )
    return program, layout


@dataclass(frozen=True)
class WarmStart:
    """Previous solution, shifted by the caller, plus its row pattern key."""

    z: np.ndarray
    multipliers: np.ndarray
    cache_key: object


@dataclass(frozen=True)
class ControlDecision:
    """Output of one planning step."""

    accel: float
    plan_positions: np.ndarray  # length horizon + 1, saturated rollout
    plan_speeds: np.ndarray
    status: str
    used_fallback: bool
    layout: QpLayout
    solution: qpmod.QpSolution | None
    warm: WarmStart | None


def _saturated_plan(
    state: VehicleState, inputs: np.ndarray, config: MpcConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Roll the planned inputs through the speed-saturating plant model."""
    H = len(inputs)
    ts = config.sampling_time
    speeds_affine = state.v + np.concatenate([[0.0], np.cumsum(inputs) * ts])
    if speeds_affine.min() >= config.v_min and speeds_affine.max() <= config.v_max:
        pos = state.p + np.concatenate([[0.0], np.cumsum(speeds_affine[:-1]) * ts])
        return pos, speeds_affine
    pos = np.empty(H + 1)
    spd = np.empty(H + 1)
    p, v = state.p, state.v
    for t in range(H):
        pos[t] = p
        spd[t] = v
        p = p + ts * v
        v = min(max(v + ts * inputs[t], config.v_min), config.v_max)
    pos[H] = p
    spd[H] = v
    return pos, spd


def fallback_input(v: float, config: MpcConfig) -> float:
    """Brake as hard as possible without commanding reverse motion."""
    return max(config.a_min, -v / config.sampling_time)


def decide(
    subject: VehicleInfo,
    snapshot: Mapping[int, VehicleInfo],
    view: PriorityView,
    forecasts: Mapping[int, NeighborForecast],
    config: MpcConfig,
    factor_cache: dict | None = None,
    warm: WarmStart | None = None,
    reference_speed: float | None = None,
) -> ControlDecision:
    """Plan one control step for the subject vehicle.

    reference_speed overrides the configured tracking target for this
    vehicle; only the linear cost term changes, so warm starts and cached
    factorizations stay valid.  Solves the assembled QP (warm-started when
    the constraint pattern matches the previous step) and falls back to
    maximal braking when the solver cannot certify a solution.
    """
    reqs = predict_conflicts(subject, snapshot, view, forecasts, config)
    program, layout = assemble(subject.state, reqs, config, reference_speed)
    if layout.dropped:
        log.warning(
            "vehicle %d dropped unactionable rows: %s",
            subject.vehicle_id,
            "; ".join(layout.dropped),
        )
    if layout.clamped:
        log.warning(
            "vehicle %d clamped rows to the braking envelope: %s",
            subject.vehicle_id,
            "; ".join(layout.clamped),
        )

    warm_arg = None
    if warm is not None and len(warm.z) == program.n:
        if warm.cache_key == layout.cache_key and len(warm.multipliers) == program.m:
            warm_arg = (warm.z, warm.multipliers)
        else:
            warm_arg = (warm.z, np.zeros(program.m))
    sol = qpmod.solve(
        program,
        tol=config.solver_tolerance,
        max_iter=config.solver_max_iter,
        warm_start=warm_arg,
        factor_cache=factor_cache,
        cache_key=layout.cache_key,
    )

    H = config.horizon
    if sol.status == "optimal":
        u = np.clip(sol.z[:H], config.a_min, config.a_max)
        accel = float(u[0])
        used_fallback = False
        next_warm = WarmStart(
            z=sol.z.copy(), multipliers=sol.multipliers.copy(),
            cache_key=layout.cache_key,
        )
    else:
        log.warning(
            "vehicle %d solver status %s (%s); braking",
            subject.vehicle_id, sol.status, sol.detail,
        )
        accel = fallback_input(subject.state.v, config)
        u = np.full(H, config.a_min)
        u[0] = accel
        used_fallback = True
        next_warm = None
    pos, spd = _saturated_plan(subject.state, u, config)
    return ControlDecision(
        accel=accel,
        plan_positions=pos,
        plan_speeds=spd,
        status=sol.status,
        used_fallback=used_fallback,
        layout=layout,
        solution=sol,
        warm=next_warm,
    )


def shift_warm_start(warm: WarmStart, horizon: int) -> WarmStart:
    """Advance a stored solution one step for the next solve's initial point."""
    z = np.array(warm.z, dtype=float)
    u = z[:horizon]
    d = z[horizon:]
    u_next = np.concatenate([u[1:], u[-1:]])
    d_next = np.concatenate([d[1:], d[-1:]])
    return WarmStart(
        z=np.concatenate([u_next, d_next]),
        multipliers=warm.multipliers,
        cache_key=warm.cache_key,
    )
