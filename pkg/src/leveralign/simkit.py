"""Truth trajectories, inverse strapdown and sensor synthesis.

Trajectories are built from closed-form speed, heading and flight-path
angle histories with coordinated (zero sideslip) bank, so attitude, body
rates, velocity and acceleration are all analytic. Only geodetic position is
integrated numerically, with a tight-tolerance adaptive ODE solver.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import earth
from .strapdown import GnssStream, ImuStream, derive_rates

G_NOMINAL = 9.80665
DEG = math.pi / 180.0
DEG_PER_HOUR = DEG / 3600.0

# noise channels for the counter-based generator
GYRO, ACCEL, GNSS_VEL, GNSS_POS = range(4)


class ProfileKind(str, enum.Enum):
    STRAIGHT_ACCELERATE = "straight-accelerate"
    S_TURN = "s-turn"
    CLIMBING_TURN = "climbing-turn"


@dataclass(frozen=True)
class TrajectoryProfile:
    """Parameters of an analytic flight profile.

    ``turn_rate`` is the constant heading rate of a climbing turn or the
    peak heading rate of an S-turn weave of period ``weave_period``, whose
    heading rate is ``turn_rate * sin(2 pi t / weave_period + weave_phase)``.
    A positive ``entry_time`` makes the climbing turn start wings level and
    roll in, with heading rate ``turn_rate * tanh(t / entry_time)``; the
    vehicle is then already rolling at ``t = 0``.
    """

    kind: ProfileKind = ProfileKind.CLIMBING_TURN
    speed: float = 100.0
    turn_rate: float = 0.05
    duration: float = 600.0
    lat: float = 30.0 * DEG
    lon: float = 112.0 * DEG
    height: float = 1000.0
    heading: float = 0.0
    accel: float = 0.0
    climb_angle: float = 0.0
    weave_period: float = 60.0
    weave_phase: float = 0.0
    entry_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if not 0.0 <= self.speed < 400.0:
            raise ValueError(f"speed {self.speed} outside [0, 400) m/s")
        if not abs(self.turn_rate) < 0.5:
            raise ValueError(f"turn rate {self.turn_rate} outside (-0.5, 0.5) rad/s")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not abs(self.climb_angle) < math.pi / 2:
            raise ValueError("climb angle must be within (-pi/2, pi/2)")
        if not self.entry_time >= 0:
            raise ValueError("entry time must be non-negative")
        if not self.weave_period > 0:
            raise ValueError("weave period must be positive")
        v_end = self.speed + self.accel * self.duration
        if not 0.0 <= v_end < 400.0:
            raise ValueError(f"final speed {v_end} outside [0, 400) m/s")
        # validates the geodetic triple
        earth.GeodeticPosition(self.lat, self.lon, self.height)


@dataclass
class Trajectory:
    """Truth states on a uniform grid, stored column-wise."""

    t: np.ndarray
    pos: np.ndarray
    v_n: np.ndarray
    a_n: np.ndarray
    C_b_n: np.ndarray
    omega_nb_b: np.ndarray
    profile: TrajectoryProfile | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def rates(self, omega_ib_b):
        return derive_rates(self.C_b_n, omega_ib_b, self.pos[:, 0], self.pos[:, 2], self.v_n)


@dataclass(frozen=True)
class SensorErrorModel:
    """Additive sensor errors in SI units. Biases may be scalars or 3-vectors."""

    gyro_bias: np.ndarray | float = 0.0
    gyro_arw: float = 0.0
    accel_bias: np.ndarray | float = 0.0
    accel_vrw: float = 0.0
    gnss_vel_sigma: float = 0.0
    gnss_pos_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("gyro_arw", "accel_vrw", "gnss_vel_sigma", "gnss_pos_sigma"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("gyro_bias", "accel_bias"):
            b = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if not np.all(np.isfinite(b)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, b)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def is_zero(self) -> bool:
        return (not np.any(self.gyro_bias) and not np.any(self.accel_bias)
                and self.gyro_arw == 0 and self.accel_vrw == 0
                and self.gnss_vel_sigma == 0 and self.gnss_pos_sigma == 0)


def noise_rng(seed: int, run_index: int, channel: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, run_index, channel)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


def _euler_rates_to_body(roll, pitch, d_roll, d_pitch, d_yaw):
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    return np.column_stack([
        d_roll - d_yaw * sp,
        d_pitch * cr + d_yaw * sr * cp,
        -d_pitch * sr + d_yaw * cr * cp,
    ])


def _euler_to_dcm_batch(roll, pitch, yaw):
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    C = np.empty(np.shape(roll) + (3, 3))
    C[..., 0, 0] = cp * cy
    C[..., 0, 1] = -cr * sy + sr * sp * cy
    C[..., 0, 2] = sr * sy + cr * sp * cy
    C[..., 1, 0] = cp * sy
    C[..., 1, 1] = cr * cy + sr * sp * sy
    C[..., 1, 2] = -sr * cy + cr * sp * sy
    C[..., 2, 0] = -sp
    C[..., 2, 1] = sr * cp
    C[..., 2, 2] = cr * cp
    return C


def _kinematics(profile: TrajectoryProfile, t):
    """Speed, heading, flight-path angle and their derivatives at ``t``."""
    t = np.asarray(t, dtype=float)
    zero = np.zeros_like(t)
    speed = profile.speed + profile.accel * t
    d_speed = np.full_like(t, profile.accel)
    gamma = np.full_like(t, profile.climb_angle)
    d_gamma = zero
    if profile.kind is ProfileKind.STRAIGHT_ACCELERATE:
        yaw, d_yaw, dd_yaw = profile.heading + zero, zero, zero
    elif profile.kind is ProfileKind.CLIMBING_TURN:
        tau = profile.entry_time
        if tau > 0:
            # roll-in from wings level; tanh keeps the roll acceleration zero at t = 0
            x = t / tau
            log_cosh = x + np.log1p(np.exp(-2 * x)) - math.log(2.0)
            yaw = profile.heading + profile.turn_rate * tau * log_cosh
            d_yaw = profile.turn_rate * np.tanh(x)
            dd_yaw = profile.turn_rate / tau / np.cosh(np.minimum(x, 350.0)) ** 2
        else:
            yaw = profile.heading + profile.turn_rate * t
            d_yaw, dd_yaw = np.full_like(t, profile.turn_rate), zero
    else:
        w = 2 * math.pi / profile.weave_period
        ph = profile.weave_phase
        yaw = profile.heading + profile.turn_rate / w * (math.cos(ph) - np.cos(w * t + ph))
        d_yaw = profile.turn_rate * np.sin(w * t + ph)
        dd_yaw = profile.turn_rate * w * np.cos(w * t + ph)
    return speed, d_speed, yaw, d_yaw, dd_yaw, gamma, d_gamma


def _velocity(speed, yaw, gamma):
    cg = np.cos(gamma)
    return np.stack([speed * cg * np.cos(yaw), speed * cg * np.sin(yaw), -speed * np.sin(gamma)], -1)


def _attitude(profile: TrajectoryProfile, t):
    """Coordinated-bank ``C_b^n`` and ``omega_nb^b`` at arbitrary times."""
    speed, d_speed, yaw, d_yaw, dd_yaw, gamma, d_gamma = _kinematics(profile, t)
    u = speed * d_yaw / G_NOMINAL
    roll = np.arctan(u)
    d_roll = (d_speed * d_yaw + speed * dd_yaw) / G_NOMINAL / (1.0 + u * u)
    C_b_n = _euler_to_dcm_batch(roll, gamma, yaw)
    return C_b_n, _euler_rates_to_body(roll, gamma, d_roll, d_gamma, d_yaw)


def gen_trajectory(profile: TrajectoryProfile, dt: float) -> Trajectory:
    """Sample the analytic profile on ``[0, duration]`` with step ``dt``."""
    if not 1e-3 <= dt <= 0.1:
        raise ValueError(f"dt {dt} outside [1e-3, 0.1] s")
    n = int(round(profile.duration / dt))
    t = np.arange(n + 1) * dt
    speed, d_speed, yaw, d_yaw, dd_yaw, gamma, d_gamma = _kinematics(profile, t)

    v_n = _velocity(speed, yaw, gamma)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cy, sy = np.cos(yaw), np.sin(yaw)
    a_n = np.column_stack([
        d_speed * cg * cy - speed * (sg * d_gamma * cy + cg * sy * d_yaw),
        d_speed * cg * sy - speed * (sg * d_gamma * sy - cg * cy * d_yaw),
        -d_speed * sg - speed * cg * d_gamma,
    ])
    C_b_n, omega_nb_b = _attitude(profile, t)

    def position_ode(tt, p):
        s, _, y, _, _, g, _ = _kinematics(profile, tt)
        return earth.position_rate(_velocity(s, y, g), p[0], p[2])

    sol = solve_ivp(position_ode, (0.0, t[-1]), [profile.lat, profile.lon, profile.height],
                    method="DOP853", t_eval=t, rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise RuntimeError(f"position integration failed: {sol.message}")
    pos = sol.y.T.copy()
    return Trajectory(t, pos, v_n, a_n, C_b_n, omega_nb_b, profile)


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)


def synthesize_imu(traj: Trajectory) -> ImuStream:
    """Error-free gyro and accelerometer output consistent with ``traj``.

    Rates and specific force are sampled at ``traj.t``. When the analytic
    profile is known, the gyro also reports angle increments over each
    sample interval, integrated with 3-point Gauss-Legendre quadrature as a
    strapdown gyro would deliver them.
    """
    lat, h = traj.pos[:, 0], traj.pos[:, 2]
    w_ie = earth.earth_rate_n(lat)
    w_en = earth.transport_rate(traj.v_n, lat, h)
    g = earth.gravity_n(lat, h)
    C_n_b = np.swapaxes(traj.C_b_n, 1, 2)
    w_in = w_ie + w_en
    omega_ib_b = traj.omega_nb_b + np.einsum("nij,nj->ni", C_n_b, w_in)
    f_n = traj.a_n + np.cross(2 * w_ie + w_en, traj.v_n) - g
    f_b = np.einsum("nij,nj->ni", C_n_b, f_n)
    dtheta = None
    if traj.profile is not None and len(traj) > 1:
        dts = np.diff(traj.t)
        dtheta = np.zeros_like(omega_ib_b)
        for x, w in zip(_GAUSS_X, _GAUSS_W):
            frac = 0.5 * (1.0 + x)
            tn = traj.t[:-1] + frac * dts
            C, w_nb = _attitude(traj.profile, tn)
            # omega_in varies on the orbital time scale; linear in-step is ample
            w_in_n = (1.0 - frac) * w_in[:-1] + frac * w_in[1:]
            w_ib = w_nb + np.einsum("nji,nj->ni", C, w_in_n)
            dtheta[1:] += 0.5 * w * w_ib * dts[:, None]
    return ImuStream(traj.t.copy(), omega_ib_b, f_b, dtheta)


def antenna_offsets(traj: Trajectory, omega_ib_b, lever) -> tuple[np.ndarray, np.ndarray]:
    """Exact antenna position and velocity offsets at the truth rate.

    Returns ``(dpos, dv)`` where ``dpos = R_c C_b^n l`` and
    ``dv = C_b^n (omega_eb^b x l)``.
    """
    lever = np.asarray(lever, dtype=float).reshape(3)
    rates = traj.rates(omega_ib_b)
    Rc = earth.position_matrix_Rc(traj.pos[:, 0], traj.pos[:, 2])
    l_n = np.einsum("nij,j->ni", traj.C_b_n, lever)
    dpos = np.einsum("nij,nj->ni", Rc, l_n)
    dv = np.einsum("nij,nj->ni", traj.C_b_n, np.cross(rates.omega_eb_b, lever))
    return dpos, dv


def synthesize_gnss(
    traj: Trajectory,
    omega_ib_b,
    lever,
    err: SensorErrorModel | None = None,
    gnss_dt: float = 1.0,
    run_index: int = 0,
) -> GnssStream:
    """Antenna position/velocity, noisy per ``err``, decimated to ``gnss_dt``.

    ``omega_ib_b`` is the error-free gyro stream at the truth rate; the
    lever-arm velocity uses ``omega_eb^b`` resolved with truth attitude.
    """
    dt = traj.dt
    step = int(round(gnss_dt / dt))
    if step < 1 or abs(step * dt - gnss_dt) > 1e-9 * max(1.0, gnss_dt):
        raise ValueError(f"gnss_dt {gnss_dt} must be a positive multiple of dt {dt}")
    dpos, dv = antenna_offsets(traj, omega_ib_b, lever)
    idx = np.arange(0, len(traj), step)
    t = traj.t[idx]
    pos = traj.pos[idx] + dpos[idx]
    v = traj.v_n[idx] + dv[idx]
    if err is not None:
        if err.gnss_vel_sigma > 0:
            v = v + noise_rng(err.seed, run_index, GNSS_VEL).normal(0.0, err.gnss_vel_sigma, v.shape)
        if err.gnss_pos_sigma > 0:
            d = noise_rng(err.seed, run_index, GNSS_POS).normal(0.0, err.gnss_pos_sigma, pos.shape)
            pos = pos + np.einsum("nij,nj->ni", earth.position_matrix_Rc(pos[:, 0], pos[:, 2]), d)
    return GnssStream(t, pos, v)


def apply_imu_errors(stream: ImuStream, err: SensorErrorModel, run_index: int = 0) -> ImuStream:
    """Add bias and white rate noise; ``sigma_discrete = sigma / sqrt(dt)``."""
    dtheta = None if stream.dtheta is None else stream.dtheta.copy()
    if err.is_zero:
        return ImuStream(stream.t.copy(), stream.omega_ib_b.copy(), stream.f_b.copy(), dtheta)
    dt = float(np.median(np.diff(stream.t))) if len(stream) > 1 else 1.0
    n = len(stream)
    gyro_err = np.broadcast_to(err.gyro_bias, (n, 3)).copy()
    accel = stream.f_b + err.accel_bias
    if err.gyro_arw > 0:
        gyro_err += noise_rng(err.seed, run_index, GYRO).normal(0.0, err.gyro_arw / math.sqrt(dt), (n, 3))
    if err.accel_vrw > 0:
        accel = accel + noise_rng(err.seed, run_index, ACCEL).normal(0.0, err.accel_vrw / math.sqrt(dt), (n, 3))
    if dtheta is not None:
        # sample k's rate error is held over the interval ending at t_k
        dtheta[1:] += gyro_err[1:] * np.diff(stream.t)[:, None]
    return ImuStream(stream.t.copy(), stream.omega_ib_b + gyro_err, accel, dtheta)


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([format(x, ".17g") for x in row])


def export_streams(out_dir, traj: Trajectory, imu: ImuStream, gnss: GnssStream) -> list[Path]:
    """Write ``truth.csv``, ``imu.csv`` and ``gnss.csv`` into ``out_dir``.

    Column schemas (SI units, angles in rad, ``t`` in seconds):

    * truth: t, lat, lon, h, vn, ve, vd, an, ae, ad, q_w, q_x, q_y, q_z,
      wnb_x, wnb_y, wnb_z  (``q`` is the body-to-NED quaternion)
    * imu: t, wib_x, wib_y, wib_z, f_x, f_y, f_z, and dth_x, dth_y, dth_z
      (gyro angle increment ending at ``t``) when the stream carries them
    * gnss: t, lat, lon, h, vn, ve, vd
    """
    from .attitude import dcm_to_quat

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    q = np.array([dcm_to_quat(C) for C in traj.C_b_n])
    paths = [out / "truth.csv", out / "imu.csv", out / "gnss.csv"]
    _write_csv(paths[0], ["t", "lat", "lon", "h", "vn", "ve", "vd", "an", "ae", "ad",
                          "q_w", "q_x", "q_y", "q_z", "wnb_x", "wnb_y", "wnb_z"],
               [traj.t, traj.pos, traj.v_n, traj.a_n, q, traj.omega_nb_b])
    imu_cols = ["t", "wib_x", "wib_y", "wib_z", "f_x", "f_y", "f_z"]
    imu_data = [imu.t, imu.omega_ib_b, imu.f_b]
    if imu.dtheta is not None:
        imu_cols += ["dth_x", "dth_y", "dth_z"]
        imu_data.append(imu.dtheta)
    _write_csv(paths[1], imu_cols, imu_data)
    _write_csv(paths[2], ["t", "lat", "lon", "h", "vn", "ve", "vd"], [gnss.t, gnss.pos, gnss.v_n])
    return paths


@dataclass
class SimulatedRun:
    """Everything one alignment run consumes, plus its truth."""

    traj: Trajectory
    imu_true: ImuStream
    imu: ImuStream
    gnss: GnssStream
    lever: np.ndarray = field(default_factory=lambda: np.zeros(3))


def simulate(
    profile: TrajectoryProfile,
    lever,
    err: SensorErrorModel | None = None,
    imu_dt: float = 0.01,
    gnss_dt: float = 1.0,
    run_index: int = 0,
    traj: Trajectory | None = None,
    imu_true: ImuStream | None = None,
) -> SimulatedRun:
    """Generate truth, IMU and GNSS streams for one run.

    ``traj`` and ``imu_true`` may be passed in to share the deterministic
    part between Monte Carlo runs.
    """
    if traj is None:
        traj = gen_trajectory(profile, imu_dt)
    if imu_true is None:
        imu_true = synthesize_imu(traj)
    err = err or SensorErrorModel()
    imu = apply_imu_errors(imu_true, err, run_index)
    gnss = synthesize_gnss(traj, imu_true.omega_ib_b, lever, err, gnss_dt, run_index)
    return SimulatedRun(traj, imu_true, imu, gnss, np.asarray(lever, dtype=float).reshape(3))
