"""Attitude representations and frame-tagged linear algebra.

Conventions: the navigation frame is NED, the body frame is
forward-right-down. A DCM ``C_a^b`` maps vectors resolved in frame ``a`` into
frame ``b``. Quaternions are scalar-first ``(w, x, y, z)`` and correspond to
the same (active) rotation as the DCM returned by :func:`quat_to_dcm`.

The tagged types :class:`FrameVector` and :class:`RotationMatrix` are used at
API boundaries. Inner integration loops work on bare ``ndarray``/float data;
tag checking is switched by :data:`CHECK_FRAMES`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

#: Frame-tag checking. Disable for production batch runs if desired.
CHECK_FRAMES = True

ORTHONORMALITY_TOL = 1e-9


class Frame(str, enum.Enum):
    B = "b"
    N = "n"
    B0 = "b0"
    N0 = "n0"
    E = "e"
    NONE = "-"


class FrameError(ValueError):
    """Frame tags of operands do not chain."""


class PrincipalRangeError(ValueError):
    """Rotation vector magnitude is outside ``[0, pi)``."""


def _check(cond: bool, msg: str) -> None:
    if CHECK_FRAMES and not cond:
        raise FrameError(msg)


@dataclass(frozen=True)
class FrameVector:
    """A 3-vector resolved in a named frame."""

    vec: np.ndarray
    frame: Frame = Frame.NONE

    def __post_init__(self):
        v = np.array(self.vec, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite vector components: {v}")
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)
        object.__setattr__(self, "frame", Frame(self.frame))

    def __add__(self, other: FrameVector) -> FrameVector:
        _check(self.frame == other.frame, f"cannot add {self.frame} to {other.frame}")
        return FrameVector(self.vec + other.vec, self.frame)

    def __sub__(self, other: FrameVector) -> FrameVector:
        _check(self.frame == other.frame, f"cannot subtract {other.frame} from {self.frame}")
        return FrameVector(self.vec - other.vec, self.frame)

    def __neg__(self) -> FrameVector:
        return FrameVector(-self.vec, self.frame)

    def __mul__(self, k: float) -> FrameVector:
        return FrameVector(self.vec * k, self.frame)

    __rmul__ = __mul__

    def cross(self, other: FrameVector) -> FrameVector:
        _check(self.frame == other.frame, f"cross product of {self.frame} and {other.frame}")
        return FrameVector(np.cross(self.vec, other.vec), self.frame)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vec, dtype=dtype)


@dataclass(frozen=True)
class RotationMatrix:
    """DCM mapping vectors from ``from_frame`` to ``to_frame``."""

    matrix: np.ndarray
    from_frame: Frame = Frame.NONE
    to_frame: Frame = Frame.NONE

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite DCM entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "from_frame", Frame(self.from_frame))
        object.__setattr__(self, "to_frame", Frame(self.to_frame))

    @classmethod
    def identity(cls, from_frame=Frame.NONE, to_frame=Frame.NONE) -> RotationMatrix:
        return cls(np.eye(3), from_frame, to_frame)

    @property
    def T(self) -> RotationMatrix:
        return RotationMatrix(self.matrix.T, self.to_frame, self.from_frame)

    def __matmul__(self, other):
        if isinstance(other, RotationMatrix):
            _check(
                self.from_frame == other.to_frame,
                f"cannot compose {self.from_frame}->{self.to_frame} "
                f"after {other.from_frame}->{other.to_frame}",
            )
            return RotationMatrix(self.matrix @ other.matrix, other.from_frame, self.to_frame)
        if isinstance(other, FrameVector):
            _check(
                self.from_frame == other.frame,
                f"cannot apply {self.from_frame}->{self.to_frame} to a {other.frame} vector",
            )
            return FrameVector(self.matrix @ other.vec, self.to_frame)
        return self.matrix @ np.asarray(other)

    def orthonormality_defect(self) -> float:
        return orthonormality_defect(self.matrix)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


@dataclass(frozen=True)
class UnitQuaternion:
    """Scalar-first unit quaternion for the rotation ``from_frame -> to_frame``."""

    q: np.ndarray
    from_frame: Frame = Frame.NONE
    to_frame: Frame = Frame.NONE

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "from_frame", Frame(self.from_frame))
        object.__setattr__(self, "to_frame", Frame(self.to_frame))

    @classmethod
    def identity(cls, from_frame=Frame.NONE, to_frame=Frame.NONE) -> UnitQuaternion:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), from_frame, to_frame)

    def inverse(self) -> UnitQuaternion:
        w, x, y, z = self.q
        return UnitQuaternion(np.array([w, -x, -y, -z]), self.to_frame, self.from_frame)

    def __matmul__(self, other: UnitQuaternion) -> UnitQuaternion:
        return quat_multiply(self, other)

    def to_dcm(self) -> RotationMatrix:
        return RotationMatrix(quat_to_dcm(self.q), self.from_frame, self.to_frame)


class AttitudeError(NamedTuple):
    """Euler-angle attitude errors [rad]."""

    pitch: float
    roll: float
    yaw: float
    gimbal_lock: bool = False


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stack of cross-product matrices for an ``(n, 3)`` array."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def orthonormality_defect(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.max(np.abs(m @ m.T - np.eye(3))))


def quat_from_rotvec(phi) -> np.ndarray:
    """Quaternion for rotation vector ``phi`` (any magnitude)."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = math.sqrt(phi @ phi)
    half = 0.5 * angle
    if angle < 1e-6:
        # Taylor series of sin(x/2)/x and cos(x/2)
        a2 = angle * angle
        k = 0.5 - a2 / 48.0
        c = 1.0 - a2 / 8.0
    else:
        k = math.sin(half) / angle
        c = math.cos(half)
    return np.array([c, k * phi[0], k * phi[1], k * phi[2]])


def dcm_from_rotvec(phi, from_frame=Frame.NONE, to_frame=Frame.NONE) -> RotationMatrix:
    """Rodrigues formula for a principal rotation vector.

    Raises
    ------
    PrincipalRangeError
        If ``||phi|| >= pi``.
    """
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = float(np.linalg.norm(phi))
    if not np.isfinite(angle) or angle >= math.pi:
        raise PrincipalRangeError(f"rotation angle {angle} outside [0, pi)")
    K = skew(phi)
    if angle < 1e-6:
        a2 = angle * angle
        s = 1.0 - a2 / 6.0
        c = 0.5 - a2 / 24.0
    else:
        s = math.sin(angle) / angle
        c = (1.0 - math.cos(angle)) / (angle * angle)
    return RotationMatrix(np.eye(3) + s * K + c * (K @ K), from_frame, to_frame)


def quat_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of scalar-first quaternions (broadcasts)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Compose ``a`` after ``b``; the result matches ``a.to_dcm() @ b.to_dcm()``."""
    _check(
        a.from_frame == b.to_frame,
        f"cannot compose {a.from_frame}->{a.to_frame} after {b.from_frame}->{b.to_frame}",
    )
    return UnitQuaternion(quat_product(a.q, b.q), b.from_frame, a.to_frame)


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """DCM of a scalar-first quaternion, or a stack of them ``(..., 4)``.

    The quaternion is normalized first.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    ww, xx, yy, zz = w * w, x * x, y * y, z * z
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = ww + xx - yy - zz
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = ww - xx + yy - zz
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = ww - xx - yy + zz
    return out


def dcm_to_quat(C: np.ndarray) -> np.ndarray:
    """Scalar-first quaternion of a DCM, using Shepperd's method.

    The sign is chosen with ``w >= 0``.
    """
    C = np.asarray(C, dtype=float)
    tr = np.trace(C)
    diag = np.array([tr, C[0, 0], C[1, 1], C[2, 2]])
    i = int(np.argmax(diag))
    if i == 0:
        w = 0.5 * math.sqrt(1.0 + tr)
        f = 0.25 / w
        q = np.array([w, (C[2, 1] - C[1, 2]) * f, (C[0, 2] - C[2, 0]) * f, (C[1, 0] - C[0, 1]) * f])
    elif i == 1:
        x = 0.5 * math.sqrt(1.0 + 2 * C[0, 0] - tr)
        f = 0.25 / x
        q = np.array([(C[2, 1] - C[1, 2]) * f, x, (C[0, 1] + C[1, 0]) * f, (C[0, 2] + C[2, 0]) * f])
    elif i == 2:
        y = 0.5 * math.sqrt(1.0 + 2 * C[1, 1] - tr)
        f = 0.25 / y
        q = np.array([(C[0, 2] - C[2, 0]) * f, (C[0, 1] + C[1, 0]) * f, y, (C[1, 2] + C[2, 1]) * f])
    else:
        z = 0.5 * math.sqrt(1.0 + 2 * C[2, 2] - tr)
        f = 0.25 / z
        q = np.array([(C[1, 0] - C[0, 1]) * f, (C[0, 2] + C[2, 0]) * f, (C[1, 2] + C[2, 1]) * f, z])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def dcm_to_rotvec(C: np.ndarray) -> np.ndarray:
    """Rotation vector of a DCM (angle in ``[0, pi]``)."""
    q = dcm_to_quat(C)
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:] / q[0]
    return 2.0 * math.atan2(s, q[0]) * q[1:] / s


def rotation_angle(C: np.ndarray) -> float:
    """Angle of the rotation represented by ``C`` [rad]."""
    return float(np.linalg.norm(dcm_to_rotvec(C)))


def compose_attitude(
    Cn0_nt: RotationMatrix, Cb_n0: RotationMatrix, Cbt_b0: RotationMatrix
) -> RotationMatrix:
    """Chain rule ``C_b^n(t) = (C_{n(t)}^{n(0)})^T C_b^n(0) C_{b(t)}^{b(0)}``.

    Parameters
    ----------
    Cn0_nt : RotationMatrix
        ``C_{n(t)}^{n(0)}``, tagged ``n -> n0``.
    Cb_n0 : RotationMatrix
        ``C_b^n(0)``, tagged ``b0 -> n0``.
    Cbt_b0 : RotationMatrix
        ``C_{b(t)}^{b(0)}``, tagged ``b -> b0``.
    """
    _check(Cn0_nt.from_frame == Frame.N and Cn0_nt.to_frame == Frame.N0,
           "first factor must be n -> n0")
    _check(Cb_n0.from_frame == Frame.B0 and Cb_n0.to_frame == Frame.N0,
           "second factor must be b0 -> n0")
    _check(Cbt_b0.from_frame == Frame.B and Cbt_b0.to_frame == Frame.B0,
           "third factor must be b -> b0")
    return Cn0_nt.T @ Cb_n0 @ Cbt_b0


def euler_to_dcm(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-NED DCM ``Rz(yaw) Ry(pitch) Rx(roll)``."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cp * cy, -cr * sy + sr * sp * cy, sr * sy + cr * sp * cy],
        [cp * sy, cr * cy + sr * sp * sy, -sr * cy + cr * sp * sy],
        [-sp, sr * cp, cr * cp],
    ])


def dcm_to_euler(C: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_dcm`, returns ``(roll, pitch, yaw)``."""
    C = np.asarray(C)
    pitch = -math.asin(max(-1.0, min(1.0, C[2, 0])))
    roll = math.atan2(C[2, 1], C[2, 2])
    yaw = math.atan2(C[1, 0], C[0, 0])
    return roll, pitch, yaw


def attitude_error_angles(C_est, C_true, gimbal_tol: float = 1e-6) -> AttitudeError:
    """Euler angles of ``C_est @ C_true.T`` in yaw-pitch-roll order.

    Near ``|pitch| = pi/2`` the result is flagged and the combined
    yaw/roll angle is reported in ``yaw`` with ``roll = 0``.
    """
    E = np.asarray(C_est) @ np.asarray(C_true).T
    s = max(-1.0, min(1.0, -E[2, 0]))
    pitch = math.asin(s)
    if abs(abs(pitch) - math.pi / 2) < gimbal_tol:
        combined = math.atan2(-E[0, 1], E[1, 1])
        return AttitudeError(pitch, 0.0, combined, True)
    roll = math.atan2(E[2, 1], E[2, 2])
    yaw = math.atan2(E[1, 0], E[0, 0])
    return AttitudeError(pitch, roll, yaw, False)
