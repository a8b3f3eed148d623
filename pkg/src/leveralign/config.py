"""Experiment configuration: flat TOML, validated, with an effective dump.

Every parameter the alignment experiment needs but the method itself does
not fix (trajectory, sensor grades, rates, horizon) is a key here, so each
run's assumptions can be audited from the written ``effective_config.toml``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli

from .alignment import CompensationMode, LeverArm
from .simkit import DEG, DEG_PER_HOUR, ProfileKind, SensorErrorModel, TrajectoryProfile

UG = 9.80665e-6


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem."""

    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    # trajectory
    profile_kind: str = "climbing-turn"
    speed: float = 100.0
    turn_rate: float = 0.1
    weave_period: float = 40.0
    weave_phase_deg: float = 0.0
    entry_time: float = 1.5
    accel: float = 0.0
    climb_angle_deg: float = 0.0
    heading_deg: float = 0.0
    lat_deg: float = 30.0
    lon_deg: float = 112.0
    height: float = 1000.0
    # sensors
    gyro_bias_deg_h: float = 0.01
    gyro_arw_deg_rt_h: float = 0.001
    accel_bias_ug: float = 100.0
    accel_vrw_ug_rt_hz: float = 10.0
    gnss_vel_sigma: float = 0.02
    gnss_pos_sigma: float = 0.5
    # lever arm and algorithm
    lever_arm_truth: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    lever_arm_assumed: list | None = None
    compensation_mode: str = "eq9"
    coning: bool = True
    settle_time: float = 0.0
    pair_weighting: str = "uniform"
    pair_window: int = 0
    # experiment
    run_count: int = 100
    horizon: float = 60.0
    remarks_horizon: float = 1000.0
    imu_dt: float = 0.01
    gnss_dt: float = 1.0
    base_seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(key, msg):
            raise ConfigError(msg, key=key)

        try:
            ProfileKind(self.profile_kind)
        except ValueError:
            bad("profile_kind", f"unknown profile '{self.profile_kind}'; "
                                f"choose from {[k.value for k in ProfileKind]}")
        try:
            CompensationMode(self.compensation_mode)
        except ValueError:
            bad("compensation_mode", f"unknown mode '{self.compensation_mode}'")
        if self.pair_weighting not in ("uniform", "ramp"):
            bad("pair_weighting", "must be 'uniform' or 'ramp'")
        for key in ("lever_arm_truth", "lever_arm_assumed"):
            v = getattr(self, key)
            if v is None:
                continue
            if len(v) != 3:
                bad(key, "must be a 3-element array [m]")
            try:
                LeverArm(v)
            except (ValueError, TypeError) as e:
                bad(key, str(e))
            setattr(self, key, [float(x) for x in v])
        if self.lever_arm_assumed is None:
            self.lever_arm_assumed = list(self.lever_arm_truth)
        if not isinstance(self.run_count, int) or self.run_count < 1:
            bad("run_count", "must be an integer >= 1")
        if not isinstance(self.pair_window, int) or self.pair_window < 0:
            bad("pair_window", "must be an integer >= 0 (0 = all pairs)")
        if not self.horizon > 0:
            bad("horizon", "must be positive")
        if not self.remarks_horizon > 0:
            bad("remarks_horizon", "must be positive")
        if not 1e-3 <= self.imu_dt <= 0.1:
            bad("imu_dt", "must be within [1e-3, 0.1] s")
        ratio = self.gnss_dt / self.imu_dt
        if not self.gnss_dt >= self.imu_dt or abs(ratio - round(ratio)) > 1e-9:
            bad("gnss_dt", "must be an integer multiple of imu_dt")
        if not isinstance(self.base_seed, int) or not 0 <= self.base_seed < 2**64:
            bad("base_seed", "must be an unsigned 64-bit integer")
        for key in ("gyro_arw_deg_rt_h", "accel_vrw_ug_rt_hz", "gnss_vel_sigma", "gnss_pos_sigma",
                    "settle_time", "entry_time"):
            if not getattr(self, key) >= 0:
                bad(key, "must be non-negative")
        try:
            self.profile(self.horizon)
        except ValueError as e:
            bad("profile", str(e))

    def profile(self, duration: float | None = None) -> TrajectoryProfile:
        return TrajectoryProfile(
            kind=ProfileKind(self.profile_kind),
            speed=self.speed,
            turn_rate=self.turn_rate,
            duration=self.horizon if duration is None else duration,
            lat=self.lat_deg * DEG,
            lon=self.lon_deg * DEG,
            height=self.height,
            heading=self.heading_deg * DEG,
            accel=self.accel,
            climb_angle=self.climb_angle_deg * DEG,
            weave_period=self.weave_period,
            weave_phase=self.weave_phase_deg * DEG,
            entry_time=self.entry_time,
        )

    def error_model(self, noise_free: bool = False) -> SensorErrorModel:
        if noise_free:
            return SensorErrorModel(seed=self.base_seed)
        return SensorErrorModel(
            gyro_bias=self.gyro_bias_deg_h * DEG_PER_HOUR,
            gyro_arw=self.gyro_arw_deg_rt_h * DEG / 60.0,
            accel_bias=self.accel_bias_ug * UG,
            accel_vrw=self.accel_vrw_ug_rt_hz * UG,
            gnss_vel_sigma=self.gnss_vel_sigma,
            gnss_pos_sigma=self.gnss_pos_sigma,
            seed=self.base_seed,
        )

    def replace(self, **changes) -> ExperimentConfig:
        data = self.to_dict()
        if "lever_arm_truth" in changes and "lever_arm_assumed" not in changes:
            data["lever_arm_assumed"] = None
        data.update(changes)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def dump(self) -> str:
        """Flat TOML text listing every key with its effective value."""
        lines = ["# effective configuration (all keys, defaults filled in)"]
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {_toml_value(v)}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(float(x)) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _key_line(text: str, key: str) -> int | None:
    k = re.escape(key)
    m = re.search(rf"^[ \t]*(?:{k}[ \t]*=|\[{k}\])", text, re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _coerce(key: str, value, line):
    kind = _TYPES[key]
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", key, line)
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", key, line)
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", key, line)
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError("expected a string", key, line)
        return value
    if not isinstance(value, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
    ):
        raise ConfigError("expected an array of numbers", key, line)
    return [float(x) for x in value]


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"syntax error: {e}", line=int(m.group(1)) if m else None) from None
    values = {}
    for key, value in raw.items():
        line = _key_line(text, key)
        if isinstance(value, dict):
            raise ConfigError("nested tables are not supported; use flat keys", key, line)
        if key not in _TYPES:
            raise ConfigError("unknown key", key, line)
        values[key] = _coerce(key, value, line)
    try:
        return ExperimentConfig(**values)
    except ConfigError as e:
        if e.key is not None and e.line is None:
            raise ConfigError(str(e).rsplit(" (", 1)[0], e.key, _key_line(text, e.key)) from None
        raise


def parse_config(path) -> ExperimentConfig:
    """Read and validate a flat TOML experiment file.

    Raises
    ------
    ConfigError
        Missing file, syntax error, unknown key or invalid value.
    """
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config file {p}: {e}") from None
    return parse_config_text(text)
