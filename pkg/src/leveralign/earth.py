"""WGS-84 earth model resolved in the local NED frame.

All functions broadcast over leading array dimensions, so the simulator
can evaluate whole trajectories at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A = 6378137.0
F = 1.0 / 298.257223563
B = A * (1.0 - F)
E2 = F * (2.0 - F)
RATE = 7.292115e-5
GM = 3.986004418e14
GAMMA_E = 9.7803253359
GAMMA_P = 9.8321849379
K_SOMIGLIANA = (B * GAMMA_P - A * GAMMA_E) / (A * GAMMA_E)
M_RATIO = RATE**2 * A**2 * B / GM

POLAR_GUARD = 1e-6


class PolarSingularityError(ValueError):
    """Latitude too close to a pole for longitude-rate terms."""


@dataclass(frozen=True)
class GeodeticPosition:
    lat: float
    lon: float
    height: float = 0.0

    def __post_init__(self):
        if not abs(self.lat) <= np.pi / 2:
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        if not self.height > -1e4:
            raise ValueError(f"height {self.height} below -1e4 m")
        lon = float(self.lon)
        lon = (lon + np.pi) % (2 * np.pi) - np.pi
        if lon == -np.pi:
            lon = np.pi
        object.__setattr__(self, "lon", lon)

    def as_array(self) -> np.ndarray:
        return np.array([self.lat, self.lon, self.height])


@dataclass(frozen=True)
class EarthKinematics:
    omega_ie_n: np.ndarray
    omega_en_n: np.ndarray
    gravity_n: np.ndarray
    R_N: float
    R_E: float
    Rc: np.ndarray

    @property
    def omega_in_n(self) -> np.ndarray:
        return self.omega_ie_n + self.omega_en_n


def curvature_radii(lat):
    """Meridian and transverse radii of curvature ``(R_N, R_E)`` [m]."""
    s2 = np.sin(lat) ** 2
    w = 1.0 - E2 * s2
    R_E = A / np.sqrt(w)
    R_N = A * (1.0 - E2) / w**1.5
    return R_N, R_E


def earth_rate_n(lat) -> np.ndarray:
    lat = np.asarray(lat, dtype=float)
    z = np.zeros_like(lat)
    return np.stack([RATE * np.cos(lat), z, -RATE * np.sin(lat)], axis=-1)


def gravity_magnitude(lat, height=0.0):
    """Somigliana normal gravity with the linear free-air correction."""
    s2 = np.sin(lat) ** 2
    g0 = GAMMA_E * (1.0 + K_SOMIGLIANA * s2) / np.sqrt(1.0 - E2 * s2)
    return g0 * (1.0 - 2.0 / A * (1.0 + F + M_RATIO - 2.0 * F * s2) * np.asarray(height))


def gravity_n(lat, height=0.0) -> np.ndarray:
    g = np.asarray(gravity_magnitude(lat, height), dtype=float)
    z = np.zeros_like(g)
    return np.stack([z, z, g], axis=-1)


def _guard(lat):
    if np.any(np.abs(lat) >= np.pi / 2 - POLAR_GUARD):
        raise PolarSingularityError("latitude within the polar guard band")


def transport_rate(v_n, lat, height=0.0) -> np.ndarray:
    """Rotation rate of NED with respect to the earth, ``omega_en^n``."""
    lat = np.asarray(lat, dtype=float)
    _guard(lat)
    v_n = np.asarray(v_n, dtype=float)
    R_N, R_E = curvature_radii(lat)
    re = R_E + height
    rn = R_N + height
    vn, ve = v_n[..., 0], v_n[..., 1]
    return np.stack([ve / re, -vn / rn, -ve * np.tan(lat) / re], axis=-1)


def position_matrix_Rc(lat, height=0.0) -> np.ndarray:
    """Map a NED displacement [m] to ``(dlat [rad], dlon [rad], dh [m])``."""
    lat = np.asarray(lat, dtype=float)
    _guard(lat)
    R_N, R_E = curvature_radii(lat)
    out = np.zeros(lat.shape + (3, 3))
    out[..., 0, 0] = 1.0 / (R_N + height)
    out[..., 1, 1] = 1.0 / ((R_E + height) * np.cos(lat))
    out[..., 2, 2] = -1.0
    return out


def position_rate(v_n, lat, height=0.0) -> np.ndarray:
    """Time derivative of ``(lat, lon, h)`` for a NED velocity."""
    return np.einsum("...ij,...j->...i", position_matrix_Rc(lat, height), v_n)


def earth_kinematics(pos: GeodeticPosition, v_n) -> EarthKinematics:
    R_N, R_E = curvature_radii(pos.lat)
    return EarthKinematics(
        omega_ie_n=earth_rate_n(pos.lat),
        omega_en_n=transport_rate(v_n, pos.lat, pos.height),
        gravity_n=gravity_n(pos.lat, pos.height),
        R_N=float(R_N),
        R_E=float(R_E),
        Rc=position_matrix_Rc(pos.lat, pos.height),
    )


def kinematics_series(pos, v_n) -> EarthKinematics:
    """Vectorized :func:`earth_kinematics` for ``pos (n, 3)`` as ``(lat, lon, h)``."""
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    lat, h = pos[:, 0], pos[:, 2]
    R_N, R_E = curvature_radii(lat)
    return EarthKinematics(
        omega_ie_n=earth_rate_n(lat),
        omega_en_n=transport_rate(v_n, lat, h),
        gravity_n=gravity_n(lat, h),
        R_N=R_N,
        R_E=R_E,
        Rc=position_matrix_Rc(lat, h),
    )
