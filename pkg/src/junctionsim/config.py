"""Scenario files: INI text with explicit unit suffixes.

Values carry an optional unit after the number ("45 km/h", "3.5 m",
"0.03 s", "-9 m/s2"); speeds given in km/h are converted to m/s on load so
everything downstream is SI.  A bare number means the SI unit of its kind.
Unknown sections, keys, or units are errors, not warnings.

Sections:

  [scenario]   mode (scripted|generated), duration, seed, label,
               safety_distance
  [layout]     lane_width, road_length
  [timing]     sampling_time
  [mpc]        horizon, reference_speed, speed_weight, accel_weight,
               margin_weight, v_min, v_max, a_min, a_max, headway_time,
               headway_relax, standstill_gap, margin_cap,
               crossing_clearance, solver_tolerance, solver_max_iter
  [bid]        speed_weight, distance_weight, epsilon
  [generator]  probability, right_turn_probability, speed_mean, speed_std
  [vehicle.X]  approach, maneuver, position, speed, reference_speed,
               spawn_time   (one section per scripted vehicle, X is a label)

Every key is optional; omitted keys keep the package defaults.  scripted
mode requires at least one [vehicle.*] section, generated mode a
[generator] section.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path as FsPath

from .geometry import APPROACHES, MANEUVERS, LayoutConfig
from .mpc import MpcConfig
from .priority import BidParams
from .sim import ScenarioConfig, ScriptedVehicle, SpawnConfig


class ConfigError(ValueError):
    """A scenario file that cannot be used, with the offending detail."""


_UNIT_FACTORS = {
    "speed": {"m/s": 1.0, "km/h": 1.0 / 3.6},
    "length": {"m": 1.0},
    "time": {"s": 1.0},
    "accel": {"m/s2": 1.0, "m/s^2": 1.0},
    "plain": {},
}


def parse_quantity(text: str, kind: str) -> float:
    """Parse "<number> [unit]" into the SI value for the given kind."""
    if kind not in _UNIT_FACTORS:
        raise ValueError(f"unknown quantity kind {kind!r}")
    parts = text.split()
    if not parts or len(parts) > 2:
        raise ConfigError(f"malformed quantity {text!r}")
    try:
        value = float(parts[0])
    except ValueError as exc:
        raise ConfigError(f"malformed number in {text!r}") from exc
    if len(parts) == 1:
        return value
    unit = parts[1]
    factors = _UNIT_FACTORS[kind]
    if unit not in factors:
        allowed = ", ".join(sorted(factors)) or "no unit"
        raise ConfigError(
            f"unit {unit!r} not valid for a {kind} value (allowed: {allowed})"
        )
    return value * factors[unit]


def _parse_int(text: str, key: str) -> int:
    try:
        return int(text.split()[0])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{key} must be an integer, got {text!r}") from exc


# key -> (dataclass field, quantity kind); "int"/"str" handled separately.
_LAYOUT_KEYS = {"lane_width": "length", "road_length": "length"}
_MPC_KEYS = {
    "reference_speed": "speed",
    "speed_weight": "plain",
    "accel_weight": "plain",
    "margin_weight": "plain",
    "v_min": "speed",
    "v_max": "speed",
    "a_min": "accel",
    "a_max": "accel",
    "headway_time": "time",
    "headway_relax": "plain",
    "standstill_gap": "length",
    "margin_cap": "length",
    "crossing_clearance": "length",
    "solver_tolerance": "plain",
}
_MPC_INT_KEYS = ("horizon", "solver_max_iter")
_BID_KEYS = {"speed_weight": "plain", "distance_weight": "plain", "epsilon": "plain"}
_GENERATOR_KEYS = {
    "probability": "plain",
    "right_turn_probability": "plain",
    "speed_mean": "speed",
    "speed_std": "speed",
}
_VEHICLE_KEYS = {
    "position": "length",
    "speed": "speed",
    "reference_speed": "speed",
    "spawn_time": "time",
}


def _section_floats(
    section: configparser.SectionProxy, keys: dict[str, str], name: str
) -> dict[str, float]:
    out = {}
    for key in section:
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        out[key] = parse_quantity(section[key], keys[key])
    return out


def load_scenario(path: str | FsPath) -> ScenarioConfig:
    """Read a scenario file into a fully validated ScenarioConfig."""
    path = FsPath(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    parser = configparser.ConfigParser(
        delimiters=("=",), inline_comment_prefixes=(";", "#"), strict=True
    )
    parser.optionxform = str  # keep key case as written
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    known = {"scenario", "layout", "timing", "mpc", "bid", "generator"}
    for name in parser.sections():
        if name not in known and not name.startswith("vehicle."):
            raise ConfigError(f"unknown section [{name}] in {path}")

    layout = LayoutConfig(
        **_section_floats(parser["layout"], _LAYOUT_KEYS, "layout")
    ) if parser.has_section("layout") else LayoutConfig()

    sampling_time = None
    if parser.has_section("timing"):
        for key in parser["timing"]:
            if key != "sampling_time":
                raise ConfigError(f"unknown key {key!r} in [timing]")
        if "sampling_time" in parser["timing"]:
            sampling_time = parse_quantity(parser["timing"]["sampling_time"], "time")

    mpc_kwargs: dict = {}
    if parser.has_section("mpc"):
        sec = parser["mpc"]
        for key in sec:
            if key in _MPC_INT_KEYS:
                mpc_kwargs[key] = _parse_int(sec[key], key)
            elif key in _MPC_KEYS:
                mpc_kwargs[key] = parse_quantity(sec[key], _MPC_KEYS[key])
            else:
                raise ConfigError(f"unknown key {key!r} in [mpc]")
    if sampling_time is not None:
        mpc_kwargs["sampling_time"] = sampling_time
    try:
        mpc = MpcConfig(**mpc_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid [mpc]/[timing] values: {exc}") from exc

    bid = BidParams(
        **_section_floats(parser["bid"], _BID_KEYS, "bid")
    ) if parser.has_section("bid") else BidParams()

    mode = "scripted"
    duration_s = 10.0
    seed = 0
    label = path.stem
    safety_distance = 3.5
    if parser.has_section("scenario"):
        sec = parser["scenario"]
        for key in sec:
            if key == "mode":
                mode = sec[key].strip()
            elif key == "duration":
                duration_s = parse_quantity(sec[key], "time")
            elif key == "seed":
                seed = _parse_int(sec[key], "seed")
            elif key == "label":
                label = sec[key].strip()
            elif key == "safety_distance":
                safety_distance = parse_quantity(sec[key], "length")
            else:
                raise ConfigError(f"unknown key {key!r} in [scenario]")
    if mode not in ("scripted", "generated"):
        raise ConfigError(f"mode must be scripted or generated, got {mode!r}")

    scripted: list[ScriptedVehicle] = []
    for name in parser.sections():
        if not name.startswith("vehicle."):
            continue
        sec = parser[name]
        fields: dict = {}
        for key in sec:
            if key in ("approach", "maneuver"):
                fields[key] = sec[key].strip()
            elif key in _VEHICLE_KEYS:
                fields[key] = parse_quantity(sec[key], _VEHICLE_KEYS[key])
            else:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
        for required in ("approach", "maneuver", "position", "speed"):
            if required not in fields:
                raise ConfigError(f"[{name}] is missing {required!r}")
        if fields["approach"] not in APPROACHES:
            raise ConfigError(f"[{name}]: unknown approach {fields['approach']!r}")
        if fields["maneuver"] not in MANEUVERS:
            raise ConfigError(f"[{name}]: unknown maneuver {fields['maneuver']!r}")
        spawn_time = fields.pop("spawn_time", 0.0)
        scripted.append(
            ScriptedVehicle(
                approach=fields["approach"],
                maneuver=fields["maneuver"],
                position=fields["position"],
                speed=fields["speed"],
                reference_speed=fields.get("reference_speed"),
                spawn_step=int(round(spawn_time / mpc.sampling_time)),
            )
        )
    scripted.sort(key=lambda sv: sv.spawn_step)

    spawning = None
    if parser.has_section("generator"):
        spawning = SpawnConfig(
            **_section_floats(parser["generator"], _GENERATOR_KEYS, "generator")
        )

    if mode == "scripted" and not scripted:
        raise ConfigError("scripted mode needs at least one [vehicle.*] section")
    if mode == "generated" and spawning is None:
        raise ConfigError("generated mode needs a [generator] section")
    if mode == "scripted":
        spawning = None

    duration_steps = max(1, int(round(duration_s / mpc.sampling_time)))
    try:
        return ScenarioConfig(
            duration_steps=duration_steps,
            layout=layout,
            mpc=mpc,
            bid=bid,
            scripted=tuple(scripted),
            spawning=spawning,
            safety_distance=safety_distance,
            seed=seed,
            label=label,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def with_spawn_rate(
    config: ScenarioConfig, probability: float, seed: int, label: str | None = None
) -> ScenarioConfig:
    """Derive a sweep run config: same scenario, new spawn rate and seed."""
    if config.spawning is None:
        raise ConfigError("scenario has no [generator] section to sweep")
    return dataclasses.replace(
        config,
        spawning=dataclasses.replace(config.spawning, probability=probability),
        seed=seed,
        label=label if label is not None else config.label,
    )
