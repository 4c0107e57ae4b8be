"""Command-line interface.

Two subcommands:

  run-scenario --config FILE --out DIR [--seed N]
      One simulation run; emits traces.csv, events.csv, metrics.csv,
      per-vehicle plots (speed, acceleration, distance to the busiest
      collision point), and manifest.json.  Exit 0 when the collision
      monitor stayed silent, 1 when it flagged anything, 2 on bad input.

  sweep-density --config FILE --rates R1,R2,... --seeds S1,S2,... --out DIR
      One run per (rate, seed) pair in its own subdirectory, plus
      aggregate.csv (spawn rate, seed, realized density, mean speed
      ratio, violations), a sweep plot, and manifest.json.

CSV schemas (one row per unit in parentheses):

  traces.csv (vehicle sample): step, time_s, vehicle_id, approach,
      maneuver, position_m, speed_mps, accel_mps2, reference_speed_mps
  events.csv (collision-point crossing): step, time_s, vehicle_id,
      point_index
  metrics.csv (position bin): maneuver, bin_center_m, mean_speed_ratio,
      samples
  aggregate.csv (run): spawn_rate, seed, realized_density,
      mean_speed_ratio, violations

The manifest lists every file the command wrote and is written last, so
its presence marks a complete output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path as FsPath

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import __version__
from . import metrics as metricsmod
from .config import ConfigError, load_scenario, with_spawn_rate
from .sim import SimResult, run

plt.rcParams["svg.hashsalt"] = "junctionsim"
_SVG_META = {"Date": None}


def _write_csv(path: FsPath, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def _write_traces(path: FsPath, result: SimResult) -> None:
    _write_csv(
        path,
        [
            "step", "time_s", "vehicle_id", "approach", "maneuver",
            "position_m", "speed_mps", "accel_mps2", "reference_speed_mps",
        ],
        [
            (
                tr.step, tr.time, tr.vehicle_id, tr.approach, tr.maneuver,
                tr.position, tr.speed, tr.accel, tr.reference_speed,
            )
            for tr in result.traces
        ],
    )


def _write_events(path: FsPath, result: SimResult) -> None:
    _write_csv(
        path,
        ["step", "time_s", "vehicle_id", "point_index"],
        [(ev.step, ev.time, ev.vehicle_id, ev.point_index) for ev in result.events],
    )


def _write_metrics(path: FsPath, report: metricsmod.MetricsReport) -> None:
    rows = []
    for maneuver in sorted(report.curves):
        curve = report.curves[maneuver]
        for c, v, n in zip(curve.centers, curve.values, curve.counts):
            rows.append((maneuver, float(c), float(v), int(n)))
    _write_csv(path, ["maneuver", "bin_center_m", "mean_speed_ratio", "samples"], rows)


def _busiest_point(result: SimResult) -> int | None:
    """Collision point shared by the most vehicles in the run."""
    counts: dict[int, int] = {}
    for rec in result.vehicles:
        for index, _coord in rec.path.collision_point_coords:
            counts[index] = counts.get(index, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    return min(idx for idx, n in counts.items() if n == best)


def _scenario_plots(result: SimResult, out_dir: FsPath) -> list[str]:
    by_vehicle: dict[int, list] = {}
    for tr in result.traces:
        by_vehicle.setdefault(tr.vehicle_id, []).append(tr)
    point = _busiest_point(result)
    coords = {
        rec.vehicle_id: dict(rec.path.collision_point_coords).get(point)
        for rec in result.vehicles
    }
    panels = [
        ("speed.svg", "speed [m/s]", lambda tr, vid: tr.speed),
        ("accel.svg", "acceleration [m/s^2]", lambda tr, vid: tr.accel),
        (
            "distance.svg",
            f"distance to point {point} [m]",
            lambda tr, vid: coords[vid] - tr.position,
        ),
    ]
    written = []
    for name, ylabel, value in panels:
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for vid in sorted(by_vehicle):
            if name == "distance.svg" and coords.get(vid) is None:
                continue
            rows = by_vehicle[vid]
            ax.plot(
                [tr.time for tr in rows],
                [value(tr, vid) for tr in rows],
                label=f"vehicle {vid}",
            )
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        if len(by_vehicle) <= 8:
            ax.legend(loc="best", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_dir / name, format="svg", metadata=_SVG_META)
        plt.close(fig)
        written.append(name)
    return written


def _sweep_plot(rows: list[tuple], path: FsPath) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    mus = [r[2] for r in rows]
    ratios = [r[3] for r in rows]
    ax.scatter(mus, ratios, s=18, alpha=0.8)
    order = sorted(range(len(rows)), key=lambda i: mus[i])
    ax.plot([mus[i] for i in order], [ratios[i] for i in order], alpha=0.4)
    ax.set_xlabel("realized traffic density [vehicles]")
    ax.set_ylabel("mean speed ratio")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _write_manifest(out_dir: FsPath, payload: dict) -> None:
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(config_path: str):
    try:
        return load_scenario(config_path)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    except (ConfigError, ValueError) as exc:
        print(f"error: invalid scenario file {config_path}: {exc}", file=sys.stderr)
        return None


def cmd_run_scenario(config_path: str, out_dir: str, seed: int | None) -> int:
    started = time.monotonic()
    scenario = _load(config_path)
    if scenario is None:
        return 2
    if seed is not None:
        import dataclasses

        scenario = dataclasses.replace(scenario, seed=seed)
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run(scenario)
    report = metricsmod.summarize(result)
    _write_traces(out / "traces.csv", result)
    _write_events(out / "events.csv", result)
    _write_metrics(out / "metrics.csv", report)
    files = ["traces.csv", "events.csv", "metrics.csv"]
    files += _scenario_plots(result, out)
    _write_manifest(
        out,
        {
            "command": "run-scenario",
            "config_path": str(config_path),
            "seeds": [scenario.seed],
            "out_dir": str(out),
            "files": sorted(files),
            "tool_version": __version__,
            "wall_clock_s": round(time.monotonic() - started, 3),
            "violations": len(result.violations),
            "realized_density": report.density,
            "vehicles": len(result.vehicles),
        },
    )
    if result.violations:
        print(f"{len(result.violations)} collision-monitor violations", file=sys.stderr)
        return 1
    return 0


def cmd_sweep_density(
    config_path: str, rates: list[float], seeds: list[int], out_dir: str
) -> int:
    started = time.monotonic()
    if not rates or not seeds:
        print("error: need at least one rate and one seed", file=sys.stderr)
        return 2
    scenario = _load(config_path)
    if scenario is None:
        return 2
    if scenario.spawning is None:
        print(
            f"error: {config_path} has no [generator] section; nothing to sweep",
            file=sys.stderr,
        )
        return 2
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    aggregate_rows: list[tuple] = []
    total_violations = 0
    for rate in rates:
        for seed in seeds:
            label = f"rate_{rate:g}_seed_{seed}"
            sub = out / label
            sub.mkdir(parents=True, exist_ok=True)
            cfg = with_spawn_rate(scenario, rate, seed, label=label)
            result = run(cfg)
            report = metricsmod.summarize(result)
            _write_traces(sub / "traces.csv", result)
            _write_events(sub / "events.csv", result)
            _write_metrics(sub / "metrics.csv", report)
            files += [f"{label}/traces.csv", f"{label}/events.csv", f"{label}/metrics.csv"]
            aggregate_rows.append(
                (
                    rate,
                    seed,
                    report.density,
                    metricsmod.overall_mean_ratio(report),
                    len(result.violations),
                )
            )
            total_violations += len(result.violations)
    _write_csv(
        out / "aggregate.csv",
        ["spawn_rate", "seed", "realized_density", "mean_speed_ratio", "violations"],
        aggregate_rows,
    )
    _sweep_plot(aggregate_rows, out / "sweep.svg")
    files += ["aggregate.csv", "sweep.svg"]
    _write_manifest(
        out,
        {
            "command": "sweep-density",
            "config_path": str(config_path),
            "rates": rates,
            "seeds": seeds,
            "out_dir": str(out),
            "files": sorted(files),
            "tool_version": __version__,
            "wall_clock_s": round(time.monotonic() - started, 3),
            "violations": total_violations,
        },
    )
    if total_violations:
        print(f"{total_violations} collision-monitor violations", file=sys.stderr)
        return 1
    return 0


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="junctionsim",
        description="Signal-free intersection simulator with auctioned priorities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run-scenario", help="run one scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)

    p_sweep = sub.add_parser("sweep-density", help="run a spawn-rate sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--rates", required=True, type=_float_list)
    p_sweep.add_argument("--seeds", required=True, type=_int_list)
    p_sweep.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.command == "run-scenario":
        return cmd_run_scenario(args.config, args.out, args.seed)
    return cmd_sweep_density(args.config, args.rates, args.seeds, args.out)


if __name__ == "__main__":
    sys.exit(main())
