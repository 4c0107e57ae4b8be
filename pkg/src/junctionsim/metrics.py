"""Aggregate measures over simulation traces.

The central quantity is the speed ratio v / v_ref: one per trace sample,
averaged into one-meter position bins per maneuver class.  Slowdown
locations show up as local minima of the binned curve; traffic load is
the time-averaged number of active vehicles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.signal import find_peaks

from .sim import SimResult, TraceRecord


@dataclass(frozen=True)
class BinnedCurve:
    """Mean value per occupied position bin; empty bins are absent."""

    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.centers) == len(self.values) == len(self.counts)):
            raise ValueError("centers, values, counts must align")

    def value_near(self, position: float, tol: float = 0.51) -> float:
        """Curve value at the bin closest to position (within tol)."""
        if len(self.centers) == 0:
            raise ValueError("empty curve")
        i = int(np.argmin(np.abs(self.centers - position)))
        if abs(self.centers[i] - position) > tol:
            raise ValueError(f"no bin within {tol} of {position}")
        return float(self.values[i])


def speed_ratio(speed: float, reference_speed: float) -> float:
    if reference_speed <= 0.0:
        raise ValueError("reference_speed must be positive")
    return speed / reference_speed


def traffic_speed_ratio(
    traces: Iterable[TraceRecord], bin_width: float = 1.0
) -> dict[str, BinnedCurve]:
    """Binned mean speed ratio along the path, one curve per maneuver."""
    if bin_width <= 0.0:
        raise ValueError("bin_width must be positive")
    by_maneuver: dict[str, tuple[list[float], list[float]]] = {}
    for tr in traces:
        pos, ratio = by_maneuver.setdefault(tr.maneuver, ([], []))
        pos.append(tr.position)
        ratio.append(speed_ratio(tr.speed, tr.reference_speed))
    out: dict[str, BinnedCurve] = {}
    for maneuver, (pos, ratio) in by_maneuver.items():
        p = np.asarray(pos)
        r = np.asarray(ratio)
        idx = np.floor(p / bin_width).astype(int)
        idx = np.maximum(idx, 0)
        counts = np.bincount(idx)
        sums = np.bincount(idx, weights=r)
        occupied = np.flatnonzero(counts)
        out[maneuver] = BinnedCurve(
            centers=(occupied + 0.5) * bin_width,
            values=sums[occupied] / counts[occupied],
            counts=counts[occupied],
        )
    return out


def density(traces: Iterable[TraceRecord], n_steps: int | None = None) -> float:
    """Time-averaged number of active vehicles.

    n_steps fixes the averaging window; without it the latest observed
    step index defines the window, which undercounts only when the run
    ended with an empty road.
    """
    per_step: dict[int, int] = {}
    last = -1
    for tr in traces:
        per_step[tr.step] = per_step.get(tr.step, 0) + 1
        last = max(last, tr.step)
    if n_steps is None:
        n_steps = last + 1
    if n_steps <= 0:
        return 0.0
    return sum(per_step.values()) / n_steps


def find_dips(curve: BinnedCurve, prominence: float = 0.05) -> np.ndarray:
    """Positions of local minima of the curve, by peak-finding on its negative.

    Only interior minima with the requested prominence count; a monotone
    curve has none.
    """
    if len(curve.values) < 3:
        return np.array([])
    idx, _ = find_peaks(-curve.values, prominence=prominence)
    return curve.centers[idx]


@dataclass(frozen=True)
class MetricsReport:
    """Per-run (or per-batch) aggregate measures."""

    density: float
    curves: Mapping[str, BinnedCurve]
    dip_positions: Mapping[str, tuple[float, ...]]
    mean_ratio: Mapping[str, float]
    violation_count: int


def overall_mean_ratio(report: "MetricsReport") -> float:
    """Mean speed ratio averaged over all occupied bins of all classes.

    Bin-averaged on purpose: one congested meter of road counts once, no
    matter how many samples piled up in it.
    """
    values = [c.values for c in report.curves.values() if len(c.values)]
    if not values:
        return float("nan")
    return float(np.mean(np.concatenate(values)))


def summarize(
    result: SimResult, bin_width: float = 1.0, dip_prominence: float = 0.05
) -> MetricsReport:
    curves = traffic_speed_ratio(result.traces, bin_width)
    dips = {m: tuple(float(x) for x in find_dips(c, dip_prominence)) for m, c in curves.items()}
    means = {
        m: float(np.sum(c.values * c.counts) / np.sum(c.counts)) for m, c in curves.items()
    }
    return MetricsReport(
        density=density(result.traces, result.n_steps),
        curves=curves,
        dip_positions=dips,
        mean_ratio=means,
        violation_count=len(result.violations),
    )
