"""Longitudinal vehicle dynamics: discrete double integrator along a path.

State is (arc position p, speed v) with acceleration input u:

    p(k+1) = p(k) + T_s * v(k)
    v(k+1) = v(k) + T_s * u(k)

The plant never reverses: a negative updated speed is clamped to zero and
the clamp is reported, so callers can log it.  Prediction rollouts either
saturate speed into the vehicle's speed bounds (rollout_const_input) or
stay exactly affine (rollout_inputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class VehicleState:
    """Arc position (m) and speed (m/s) along a path.

    Plant states always have v >= 0 (step clamps); unsaturated prediction
    rollouts may carry negative speeds, so the type does not reject them.
    """

    p: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p) and math.isfinite(self.v)):
            raise ValueError(f"non-finite state ({self.p}, {self.v})")


@dataclass(frozen=True)
class StepParams:
    """Discretization parameters."""

    sampling_time: float = 0.03  # s

    def __post_init__(self) -> None:
        if not (self.sampling_time > 0.0 and math.isfinite(self.sampling_time)):
            raise ValueError(f"sampling_time must be positive, got {self.sampling_time}")


def step(x: VehicleState, u: float, params: StepParams) -> tuple[VehicleState, bool]:
    """One plant step.  Returns the next state and whether v was clamped at 0."""
    ts = params.sampling_time
    p_next = x.p + ts * x.v
    v_next = x.v + ts * u
    clamped = v_next < 0.0
    if clamped:
        v_next = 0.0
    return VehicleState(p_next, v_next), clamped


def rollout_const_input(
    x0: VehicleState,
    u: float,
    horizon: int,
    params: StepParams,
    v_min: float = 0.0,
    v_max: float = math.inf,
) -> list[VehicleState]:
    """States x(0..horizon) under a constant input, speed saturated to [v_min, v_max].

    This is the broadcast-based prediction of another vehicle: hold its last
    input and keep the speed inside its admissible range.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    ts = params.sampling_time
    out = [x0]
    p, v = x0.p, x0.v
    for _ in range(horizon):
        p = p + ts * v
        v = min(max(v + ts * u, v_min), v_max)
        out.append(VehicleState(p, v))
    return out


def rollout_inputs(
    x0: VehicleState, inputs: Sequence[float], params: StepParams
) -> list[VehicleState]:
    """States x(0..len(inputs)) under an input sequence, exactly affine.

    No saturation or clamping: this mirrors the linear prediction model
    used in planning, so superposition holds to machine precision.
    """
    ts = params.sampling_time
    out = [x0]
    p, v = x0.p, x0.v
    for u in inputs:
        p = p + ts * v
        v = v + ts * u
        out.append(VehicleState(p, v))
    return out
