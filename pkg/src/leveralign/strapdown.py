"""Attitude-chain integrators for the frozen-frame factorization.

The body chain ``C_{b(t)}^{b(0)}`` is driven by gyro increments and the
navigation chain ``C_{n(t)}^{n(0)}`` by ``omega_in^n``. Both obey
``dC/dt = C (omega x)`` and are advanced by right-multiplying the rotation of
each step. Quaternions are the integration state and are renormalized every
step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import earth
from .attitude import Frame, PrincipalRangeError, RotationMatrix, quat_to_dcm


class TimestampError(ValueError):
    """Samples are out of order, non-contiguous, or have a dropout."""


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega_ib_b: np.ndarray
    f_b: np.ndarray


@dataclass(frozen=True)
class GnssSample:
    t: float
    p_gps: earth.GeodeticPosition
    v_gps_n: np.ndarray


@dataclass
class ImuStream:
    """Column-wise IMU samples: ``t (n,)``, ``omega_ib_b (n, 3)``, ``f_b (n, 3)``.

    ``dtheta (n, 3)``, when given, holds the gyro angle increment over
    ``(t[k-1], t[k]]`` in row ``k`` (row 0 is unused). Consumers prefer it
    over trapezoidal integration of ``omega_ib_b``.
    """

    t: np.ndarray
    omega_ib_b: np.ndarray
    f_b: np.ndarray
    dtheta: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.omega_ib_b = np.asarray(self.omega_ib_b, dtype=float).reshape(-1, 3)
        self.f_b = np.asarray(self.f_b, dtype=float).reshape(-1, 3)
        if self.dtheta is not None:
            self.dtheta = np.asarray(self.dtheta, dtype=float).reshape(-1, 3)
            if len(self.dtheta) != len(self.t):
                raise ValueError("IMU columns differ in length")
        if not (len(self.t) == len(self.omega_ib_b) == len(self.f_b)):
            raise ValueError("IMU columns differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise TimestampError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx) -> ImuStream:
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        dth = None if self.dtheta is None else self.dtheta[idx]
        return ImuStream(self.t[idx], self.omega_ib_b[idx], self.f_b[idx], dth)

    def sample(self, i: int) -> ImuSample:
        return ImuSample(float(self.t[i]), self.omega_ib_b[i].copy(), self.f_b[i].copy())


@dataclass
class GnssStream:
    """Column-wise GNSS samples; ``pos`` columns are ``(lat, lon, h)``."""

    t: np.ndarray
    pos: np.ndarray
    v_n: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.pos = np.asarray(self.pos, dtype=float).reshape(-1, 3)
        self.v_n = np.asarray(self.v_n, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.pos) == len(self.v_n)):
            raise ValueError("GNSS columns differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise TimestampError("GNSS timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> GnssSample:
        lat, lon, h = self.pos[i]
        return GnssSample(float(self.t[i]), earth.GeodeticPosition(lat, lon, h), self.v_n[i].copy())

    def interpolate(self, t) -> GnssStream:
        """Linear interpolation of position and velocity onto times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(self.t) == 1:
            if np.any(t != self.t[0]):
                raise TimestampError("cannot interpolate a single GNSS sample")
            return GnssStream(t, np.repeat(self.pos, len(t), 0), np.repeat(self.v_n, len(t), 0))
        if t.min() < self.t[0] - 1e-9 or t.max() > self.t[-1] + 1e-9:
            raise TimestampError("interpolation time outside GNSS coverage")
        lon = np.unwrap(self.pos[:, 1])
        pos = np.column_stack([
            np.interp(t, self.t, self.pos[:, 0]),
            np.interp(t, self.t, lon),
            np.interp(t, self.t, self.pos[:, 2]),
        ])
        v = np.column_stack([np.interp(t, self.t, self.v_n[:, k]) for k in range(3)])
        return GnssStream(t, pos, v)


@dataclass(frozen=True)
class DerivedRates:
    omega_in_n: np.ndarray
    omega_ie_n: np.ndarray
    omega_en_n: np.ndarray
    omega_eb_b: np.ndarray
    omega_nb_b: np.ndarray
    omega_ie_b: np.ndarray


def derive_rates(C_b_n, omega_ib_b, lat, height, v_n) -> DerivedRates:
    """Resolve the auxiliary angular rates given an attitude.

    Broadcasts over leading dimensions of ``C_b_n (..., 3, 3)`` and the
    vector arguments.
    """
    C_b_n = np.asarray(C_b_n, dtype=float)
    omega_ib_b = np.asarray(omega_ib_b, dtype=float)
    w_ie = earth.earth_rate_n(lat)
    w_en = earth.transport_rate(v_n, lat, height)
    w_in = w_ie + w_en
    C_n_b = np.swapaxes(C_b_n, -1, -2)
    w_ie_b = np.einsum("...ij,...j->...i", C_n_b, w_ie)
    w_nb_b = omega_ib_b - np.einsum("...ij,...j->...i", C_n_b, w_in)
    return DerivedRates(
        omega_in_n=w_in,
        omega_ie_n=w_ie,
        omega_en_n=w_en,
        omega_eb_b=omega_ib_b - w_ie_b,
        omega_nb_b=w_nb_b,
        omega_ie_b=w_ie_b,
    )


@dataclass(frozen=True)
class AttitudeChainState:
    """State of both frozen-frame chains at time ``t``."""

    t: float
    q_bt_b0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    q_nt_n0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    omega_ib_b_0: np.ndarray | None = None
    prev_dtheta: np.ndarray | None = None

    @property
    def C_bt_b0(self) -> RotationMatrix:
        return RotationMatrix(quat_to_dcm(self.q_bt_b0), Frame.B, Frame.B0)

    @property
    def C_nt_n0(self) -> RotationMatrix:
        return RotationMatrix(quat_to_dcm(self.q_nt_n0), Frame.N, Frame.N0)

    def latch(self, omega_ib_b_0) -> AttitudeChainState:
        if self.omega_ib_b_0 is not None:
            raise ValueError("initial gyro rate already latched")
        return replace(self, omega_ib_b_0=np.array(omega_ib_b_0, dtype=float))


def integrate_rotvecs(q0, rotvecs) -> np.ndarray:
    """Right-multiply ``q0`` by each step rotation; returns ``(n + 1, 4)``.

    Every step is renormalized.

    Raises
    ------
    PrincipalRangeError
        If any step rotation is ``>= pi``.
    """
    rotvecs = np.asarray(rotvecs, dtype=float).reshape(-1, 3)
    n = len(rotvecs)
    out = np.empty((n + 1, 4))
    w, x, y, z = (float(c) for c in q0)
    out[0] = w, x, y, z
    angles = np.sqrt(np.einsum("ij,ij->i", rotvecs, rotvecs))
    if n and not np.all(angles < math.pi):
        raise PrincipalRangeError("step rotation outside the principal range")
    small = angles < 1e-6
    half = 0.5 * angles
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angles**2 / 48.0, np.sin(half) / angles)
    c = np.where(small, 1.0 - angles**2 / 8.0, np.cos(half))
    steps = np.column_stack([c, rotvecs * k[:, None]]).tolist()
    sqrt = math.sqrt
    for i, (bw, bx, by, bz) in enumerate(steps, start=1):
        nw = w * bw - x * bx - y * by - z * bz
        nx = w * bx + x * bw + y * bz - z * by
        ny = w * by - x * bz + y * bw + z * bx
        nz = w * bz + x * by - y * bx + z * bw
        s = 1.0 / sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
        w, x, y, z = nw * s, nx * s, ny * s, nz * s
        out[i] = w, x, y, z
    return out


def trapezoid_increments(t, omega) -> np.ndarray:
    """Angle increments from rate samples by the trapezoidal rule."""
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return 0.5 * (omega[1:] + omega[:-1]) * np.diff(t)[:, None]


def coning_corrected(dthetas, prev=None) -> np.ndarray:
    """Two-sample coning correction ``dtheta_k + dtheta_{k-1} x dtheta_k / 12``."""
    dthetas = np.asarray(dthetas, dtype=float).reshape(-1, 3)
    if len(dthetas) == 0:
        return dthetas
    before = np.empty_like(dthetas)
    before[0] = prev if prev is not None else 0.0
    before[1:] = dthetas[:-1]
    return dthetas + np.cross(before, dthetas) / 12.0


def _check_durations(dts) -> None:
    if np.any(np.asarray(dts) <= 0):
        raise TimestampError("non-positive step duration")


def propagate_body_chain(
    state: AttitudeChainState, increments, coning: bool = False
) -> AttitudeChainState:
    """Advance ``C_{b(t)}^{b(0)}`` through a sequence of ``(dt, dtheta)``.

    ``increments`` is a sequence of ``(dt, dtheta)`` pairs that starts at
    ``state.t``.
    """
    increments = list(increments)
    if not increments:
        return state
    dts = np.array([dt for dt, _ in increments], dtype=float)
    dth = np.array([np.asarray(d, dtype=float).reshape(3) for _, d in increments])
    _check_durations(dts)
    rv = coning_corrected(dth, state.prev_dtheta) if coning else dth
    q = integrate_rotvecs(state.q_bt_b0, rv)[-1]
    return replace(state, t=state.t + float(dts.sum()), q_bt_b0=q, prev_dtheta=dth[-1].copy())


def propagate_nav_chain(state: AttitudeChainState, omega_in_n, dt: float) -> AttitudeChainState:
    """Advance ``C_{n(t)}^{n(0)}`` by one step at rate ``omega_in_n``.

    This moves only the navigation chain; ``state.t`` is left to the body
    chain, which owns the sample clock.
    """
    if not dt > 0:
        raise TimestampError(f"step duration must be positive, got {dt}")
    rv = np.asarray(omega_in_n, dtype=float).reshape(3) * dt
    q = integrate_rotvecs(state.q_nt_n0, rv[None, :])[-1]
    return replace(state, q_nt_n0=q)


def propagate_nav_chain_series(q0, t, omega_in_n) -> np.ndarray:
    """Quaternions of the navigation chain on a grid, trapezoidal rate average."""
    t = np.asarray(t, dtype=float)
    omega_in_n = np.asarray(omega_in_n, dtype=float)
    rv = 0.5 * (omega_in_n[1:] + omega_in_n[:-1]) * np.diff(t)[:, None]
    return integrate_rotvecs(q0, rv)


def propagate_body_chain_series(q0, t, omega_ib_b, coning: bool = False, prev=None) -> np.ndarray:
    """Quaternions of the body chain at every sample of a rate stream."""
    dth = trapezoid_increments(t, omega_ib_b)
    if coning:
        dth = coning_corrected(dth, prev)
    return integrate_rotvecs(q0, dth)
