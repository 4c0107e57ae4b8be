"""Plant stepping and prediction rollouts."""

import math

import numpy as np
import pytest

from junctionsim.dynamics import (
    StepParams,
    VehicleState,
    rollout_const_input,
    rollout_inputs,
    step,
)


def test_step_exact_update():
    params = StepParams(sampling_time=0.03)
    x, clamped = step(VehicleState(p=10.0, v=12.0), u=2.0, params=params)
    assert not clamped
    assert x.p == pytest.approx(10.0 + 0.03 * 12.0, abs=0.0)
    assert x.v == pytest.approx(12.0 + 0.03 * 2.0, abs=0.0)


def test_step_clamps_reverse_motion():
    params = StepParams(sampling_time=0.03)
    x, clamped = step(VehicleState(p=3.0, v=0.1), u=-9.0, params=params)
    assert clamped
    assert x.v == 0.0
    # Position still advances by the pre-step speed.
    assert x.p == pytest.approx(3.0 + 0.03 * 0.1)
    # A stopped vehicle under braking stays put.
    x2, clamped2 = step(x, u=-9.0, params=params)
    assert clamped2
    assert x2.v == 0.0
    assert x2.p == pytest.approx(x.p)


def test_rollout_inputs_matches_closed_form():
    # Affine rollout: p(k) = p0 + k ts v0 + ts^2 sum_{j<k} (k-1-j) u(j),
    # v(k) = v0 + ts sum_{j<k} u(j).
    params = StepParams(sampling_time=0.05)
    rng = np.random.default_rng(3)
    for _ in range(50):
        p0, v0 = rng.uniform(-10, 10), rng.uniform(0, 20)
        inputs = rng.uniform(-9, 5, size=12)
        states = rollout_inputs(VehicleState(p0, v0), inputs, params)
        assert len(states) == 13
        ts = params.sampling_time
        for k in range(13):
            v_ref = v0 + ts * inputs[:k].sum()
            p_ref = p0 + k * ts * v0 + ts**2 * sum(
                (k - 1 - j) * inputs[j] for j in range(k)
            )
            assert states[k].v == pytest.approx(v_ref, abs=1e-9)
            assert states[k].p == pytest.approx(p_ref, abs=1e-9)


def test_rollout_inputs_superposition():
    params = StepParams(sampling_time=0.03)
    rng = np.random.default_rng(5)
    ua = rng.uniform(-5, 5, size=8)
    ub = rng.uniform(-5, 5, size=8)
    x0 = VehicleState(1.0, 6.0)
    zero = VehicleState(0.0, 0.0)
    base = rollout_inputs(x0, np.zeros(8), params)
    pa = rollout_inputs(zero, ua, params)
    pb = rollout_inputs(zero, ub, params)
    full = rollout_inputs(x0, ua + ub, params)
    for k in range(9):
        assert full[k].p == pytest.approx(base[k].p + pa[k].p + pb[k].p, abs=1e-12)
        assert full[k].v == pytest.approx(base[k].v + pa[k].v + pb[k].v, abs=1e-12)


def test_rollout_const_input_saturates():
    params = StepParams(sampling_time=0.1)
    # Accelerating from 9 m/s at 5 m/s^2 with a 10 m/s cap: speed pins at
    # the cap, position integrates the pinned speed.
    states = rollout_const_input(
        VehicleState(0.0, 9.0), u=5.0, horizon=4, params=params, v_max=10.0
    )
    speeds = [s.v for s in states]
    assert speeds == pytest.approx([9.0, 9.5, 10.0, 10.0, 10.0])
    # Braking saturates at v_min.
    states = rollout_const_input(
        VehicleState(0.0, 1.0), u=-9.0, horizon=3, params=params, v_min=0.0
    )
    speeds = [s.v for s in states]
    assert speeds == pytest.approx([1.0, 0.1, 0.0, 0.0])


def test_rollout_const_input_matches_step_when_unsaturated():
    params = StepParams(sampling_time=0.03)
    rng = np.random.default_rng(9)
    for _ in range(30):
        x = VehicleState(rng.uniform(0, 50), rng.uniform(5, 15))
        u = rng.uniform(-2, 2)
        pred = rollout_const_input(x, u, horizon=10, params=params)
        cur = x
        for k in range(10):
            cur, clamped = step(cur, u, params)
            assert not clamped
            assert cur.p == pytest.approx(pred[k + 1].p, abs=1e-12)
            assert cur.v == pytest.approx(pred[k + 1].v, abs=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        VehicleState(float("inf"), 0.0)
    with pytest.raises(ValueError):
        StepParams(sampling_time=0.0)
    with pytest.raises(ValueError):
        rollout_const_input(VehicleState(0, 0), 0.0, horizon=-1, params=StepParams())
    assert math.isfinite(StepParams().sampling_time)
