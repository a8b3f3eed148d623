"""In-motion coarse alignment by velocity integration with lever-arm compensation.

The constant initial attitude ``C_b^n(0)`` links two observation vectors
built from sensor data::

    alpha(t) = C_{n(t)}^{n(0)} v_gps^n - v_gps^n(0)
               + int C_{n(t)}^{n(0)} (omega_ie^n x v_gps^n) dt
               - int C_{n(t)}^{n(0)} g^n dt
    beta(t)  = int C_{b(t)}^{b(0)} f^b dt
               + (C_{b(t)}^{b(0)} [omega_ib^b x] - [omega_ib^b(0) x]) l^b

with ``alpha(t) = C_b^n(0) beta(t)``. The lever term is the first-order
form that drops earth-rate contributions. The exact form, which needs
``omega_eb^b`` resolved with true attitude, replaces it by::

    (C_{b(t)}^{b(0)} [omega_eb^b x] - [omega_eb^b(0) x]
     + [omega_ie^{b(0)} x] int C_{b(t)}^{b(0)} [omega_eb^b x] dt) l^b

All integrals use the trapezoidal rule at the IMU rate. The body chain is
advanced from gyro angle increments when the stream carries them, else
from trapezoidal increments of the rate samples.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import earth
from .attitude import Frame, RotationMatrix, quat_to_dcm, skew, skew_batch
from .strapdown import (
    DerivedRates,
    GnssStream,
    ImuStream,
    TimestampError,
    coning_corrected,
    integrate_rotvecs,
    trapezoid_increments,
)

LEVER_ARM_LIMIT = 100.0
DEGENERACY_RATIO = 1e-6


class CompensationMode(str, enum.Enum):
    NONE = "none"
    EQ9 = "eq9"
    EXACT = "exact"


class UnobservableError(ValueError):
    """Pair geometry leaves a rotation axis unobservable."""

    def __init__(self, msg: str, axis=None):
        super().__init__(msg)
        self.axis = None if axis is None else np.asarray(axis)


class MissingTruthError(ValueError):
    """Exact-form quantities requested without truth rates."""


@dataclass(frozen=True)
class LeverArm:
    l_b: np.ndarray

    def __post_init__(self):
        l = np.array(self.l_b, dtype=float).reshape(3)
        if not np.all(np.isfinite(l)) or np.linalg.norm(l) >= LEVER_ARM_LIMIT:
            raise ValueError(f"lever arm {l} must be finite and shorter than {LEVER_ARM_LIMIT} m")
        l.setflags(write=False)
        object.__setattr__(self, "l_b", l)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.l_b)


@dataclass(frozen=True)
class ObservationPair:
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class AttitudeSolution:
    C_b_n0: RotationMatrix
    largest_eigenvalue_gap: float
    pair_count: int
    loss: float


def lever_arm_velocity(v_n, C_b_n, omega_eb_b, lever) -> np.ndarray:
    """Antenna velocity ``v^n + C_b^n (omega_eb^b x l^b)``."""
    l = lever.l_b if isinstance(lever, LeverArm) else np.asarray(lever, dtype=float)
    return np.asarray(v_n, dtype=float) + np.asarray(C_b_n) @ np.cross(omega_eb_b, l)


def lever_arm_velocity_inverse(v_gps_n, C_b_n, omega_eb_b, lever) -> np.ndarray:
    """Recover ``v^n`` from the antenna velocity."""
    l = lever.l_b if isinstance(lever, LeverArm) else np.asarray(lever, dtype=float)
    return np.asarray(v_gps_n, dtype=float) - np.asarray(C_b_n) @ np.cross(omega_eb_b, l)


def _trapz(y, dts):
    return np.einsum("k,k...->...", 0.5 * dts, y[1:] + y[:-1])


class AlignmentAccumulator:
    """Running integrals and attitude chains of one alignment run.

    Feed time-ordered slices with :meth:`accumulate`; query observation
    pairs with :meth:`emit_pair` / :meth:`emit_pair_exact` at the time of
    the latest sample.

    Parameters
    ----------
    lever : LeverArm or array_like
        Lever arm assumed by the algorithm [m].
    coning : bool
        Apply the two-sample coning correction to gyro increments.
    settle_time : float
        Window [s] over which the median initial gyro rate is latched.
    nominal_dt : float, optional
        Expected IMU interval; defaults to the first observed step. Gaps
        longer than twice this value raise :class:`TimestampError`.
    """

    def __init__(self, lever=(0.0, 0.0, 0.0), coning=False, settle_time=0.1, nominal_dt=None):
        self.lever = lever if isinstance(lever, LeverArm) else LeverArm(lever)
        self.coning = coning
        self.settle_time = float(settle_time)
        self.nominal_dt = nominal_dt

        self.t0 = None
        self.t = None
        self.n_samples = 0
        self.q_b = np.array([1.0, 0.0, 0.0, 0.0])
        self.q_n = np.array([1.0, 0.0, 0.0, 0.0])
        self.prev_dtheta = None

        self.I_fv = np.zeros(3)
        self.I_cor = np.zeros(3)
        self.I_g = np.zeros(3)
        self.I_lever_exact = np.zeros((3, 3))

        self.v_gps_0 = None
        self._settling = []
        self.omega_ib_b_0 = None
        self.omega_eb_b_0 = None
        self.omega_ie_b0 = None

        # latest sample and integrand values
        self._last = None
        self._has_truth = None

    @property
    def C_bt_b0(self) -> np.ndarray:
        return quat_to_dcm(self.q_b)

    @property
    def C_nt_n0(self) -> np.ndarray:
        return quat_to_dcm(self.q_n)

    @property
    def omega_ib_initial(self) -> np.ndarray:
        """Latched (or provisional, inside the settling window) ``omega_ib^b(0)``."""
        if self.omega_ib_b_0 is not None:
            return self.omega_ib_b_0
        return np.median(np.array(self._settling), axis=0)

    def accumulate(
        self,
        imu: ImuStream,
        gnss: GnssStream,
        kin: earth.EarthKinematics | None = None,
        truth: DerivedRates | None = None,
        omega_ie_b0=None,
    ) -> AlignmentAccumulator:
        """Advance the chains and integrals over a slice of samples.

        ``gnss`` must already be interpolated onto ``imu.t``. ``kin`` holds
        per-sample earth quantities (computed from ``gnss`` when omitted).
        ``truth`` supplies per-sample ``omega_eb_b`` for the exact form, and
        ``omega_ie_b0`` the earth rate resolved in ``b(0)``; both must be
        given from the first slice on, or never.
        """
        n = len(imu)
        if n == 0:
            return self
        if len(gnss) != n or np.any(gnss.t != imu.t):
            raise TimestampError("GNSS slice must be sampled at the IMU times")
        if kin is None:
            kin = earth.kinematics_series(gnss.pos, gnss.v_n)
        has_truth = truth is not None
        if self._has_truth is None:
            self._has_truth = has_truth
        elif self._has_truth != has_truth:
            raise MissingTruthError("truth rates must be supplied for every slice or none")

        t = imu.t
        w_ib = imu.omega_ib_b
        w_ie = np.asarray(kin.omega_ie_n, dtype=float).reshape(n, 3)
        w_in = w_ie + np.asarray(kin.omega_en_n, dtype=float).reshape(n, 3)
        g = np.asarray(kin.gravity_n, dtype=float).reshape(n, 3)
        v = gnss.v_n
        w_eb = np.asarray(truth.omega_eb_b, dtype=float).reshape(n, 3) if has_truth else None

        start = 0
        if self.t is None:
            self.t0 = self.t = float(t[0])
            self.v_gps_0 = v[0].copy()
            if has_truth:
                if omega_ie_b0 is None:
                    raise MissingTruthError("omega_ie_b0 is required with truth rates")
                self.omega_eb_b_0 = w_eb[0].copy()
                self.omega_ie_b0 = np.asarray(omega_ie_b0, dtype=float).reshape(3).copy()
            self._last = {
                "t": float(t[0]), "w_ib": w_ib[0].copy(), "w_in": w_in[0].copy(),
                "v": v[0].copy(), "w_eb": None if w_eb is None else w_eb[0].copy(),
                "fv": imu.f_b[0].copy(), "cor": np.cross(w_ie[0], v[0]), "g": g[0].copy(),
                "lev": skew(w_eb[0]) if has_truth else None,
            }
            self._settling.append(w_ib[0].copy())
            self.n_samples = 1
            start = 1
            if n == 1:
                self._maybe_latch()
                return self

        last = self._last
        tt = np.concatenate([[last["t"]], t[start:]])
        dts = np.diff(tt)
        if np.any(dts <= 0):
            raise TimestampError("samples must be strictly after the accumulator time")
        if self.nominal_dt is None:
            self.nominal_dt = float(dts[0])
        if np.any(dts > 2.0 * self.nominal_dt * (1 + 1e-9)):
            k = int(np.argmax(dts > 2.0 * self.nominal_dt * (1 + 1e-9)))
            raise TimestampError(f"data gap of {dts[k]:.6g} s at t = {tt[k]:.6g} s")

        wib = np.vstack([last["w_ib"], w_ib[start:]])
        win = np.vstack([last["w_in"], w_in[start:]])
        if imu.dtheta is not None:
            dth = imu.dtheta[start:]
        else:
            dth = trapezoid_increments(tt, wib)
        if self.coning:
            dth_c = coning_corrected(dth, self.prev_dtheta)
        else:
            dth_c = dth
        self.prev_dtheta = dth[-1].copy()
        qb = integrate_rotvecs(self.q_b, dth_c)
        qn = integrate_rotvecs(self.q_n, 0.5 * (win[1:] + win[:-1]) * dts[:, None])
        Cb = quat_to_dcm(qb[1:])
        Cn = quat_to_dcm(qn[1:])

        fv = np.einsum("kij,kj->ki", Cb, imu.f_b[start:])
        cor = np.einsum("kij,kj->ki", Cn, np.cross(w_ie[start:], v[start:]))
        gg = np.einsum("kij,kj->ki", Cn, g[start:])
        self.I_fv = self.I_fv + _trapz(np.vstack([last["fv"], fv]), dts)
        self.I_cor = self.I_cor + _trapz(np.vstack([last["cor"], cor]), dts)
        self.I_g = self.I_g + _trapz(np.vstack([last["g"], gg]), dts)
        if has_truth:
            lev = Cb @ skew_batch(w_eb[start:])
            self.I_lever_exact = self.I_lever_exact + _trapz(np.concatenate([last["lev"][None], lev]), dts)

        self.q_b = qb[-1]
        self.q_n = qn[-1]
        self.t = float(tt[-1])
        self.n_samples += len(dts)
        self._last = {
            "t": self.t, "w_ib": wib[-1].copy(), "w_in": win[-1].copy(), "v": v[-1].copy(),
            "w_eb": None if w_eb is None else w_eb[-1].copy(),
            "fv": fv[-1], "cor": cor[-1], "g": gg[-1], "lev": lev[-1] if has_truth else None,
        }
        if self.omega_ib_b_0 is None:
            inside = (t[start:] - self.t0) <= self.settle_time + 1e-12
            self._settling.extend(w_ib[start:][inside])
            self._maybe_latch()
        return self

    def _maybe_latch(self):
        if self.omega_ib_b_0 is None and self.t - self.t0 >= self.settle_time - 1e-12:
            self.omega_ib_b_0 = np.median(np.array(self._settling), axis=0)
            self._settling = []

    def _require(self, t):
        if self.t is None:
            raise ValueError("no samples accumulated yet")
        if t is not None and abs(t - self.t) > 1e-9 * max(1.0, abs(t)):
            raise TimestampError(f"accumulator is at t = {self.t}, not {t}")

    def alpha(self) -> np.ndarray:
        self._require(None)
        return self.C_nt_n0 @ self._last["v"] - self.v_gps_0 + self.I_cor - self.I_g

    def lever_coefficient(self) -> np.ndarray:
        """``C_{b(t)}^{b(0)} [omega_ib^b(t) x] - [omega_ib^b(0) x]``."""
        self._require(None)
        return self.C_bt_b0 @ skew(self._last["w_ib"]) - skew(self.omega_ib_initial)

    def lever_coefficient_exact(self) -> np.ndarray:
        self._require(None)
        if not self._has_truth:
            raise MissingTruthError("exact lever term needs truth rates")
        return (self.C_bt_b0 @ skew(self._last["w_eb"]) - skew(self.omega_eb_b_0)
                + skew(self.omega_ie_b0) @ self.I_lever_exact)

    def emit_pair(self, t=None, weight=1.0, mode=CompensationMode.EQ9) -> ObservationPair:
        """Observation pair at the latest sample time.

        ``mode`` selects the lever term: ``none`` omits it, ``eq9`` uses
        the approximate form and ``exact`` dispatches to
        :meth:`emit_pair_exact`.
        """
        mode = CompensationMode(mode)
        if mode is CompensationMode.EXACT:
            return self.emit_pair_exact(t, weight)
        self._require(t)
        beta = self.I_fv.copy()
        if mode is CompensationMode.EQ9 and not self.lever.is_zero:
            beta = beta + self.lever_coefficient() @ self.lever.l_b
        return ObservationPair(self.t, self.alpha(), beta, float(weight))

    def emit_pair_exact(self, t=None, weight=1.0) -> ObservationPair:
        self._require(t)
        beta = self.I_fv.copy()
        if not self.lever.is_zero:
            beta = beta + self.lever_coefficient_exact() @ self.lever.l_b
        return ObservationPair(self.t, self.alpha(), beta, float(weight))

    def approximation_ratio(self, t=None) -> float:
        """Size of the dropped earth-rate integral relative to the kept term.

        Returns ``||[w_ie^{b(0)} x] int C [w_eb x] dt||_F / ||C [w_eb(t) x]||_F``.
        Raises ``ZeroDivisionError`` when ``omega_eb^b(t)`` vanishes.
        """
        self._require(t)
        if not self._has_truth:
            raise MissingTruthError("approximation ratio needs truth rates")
        num = np.linalg.norm(skew(self.omega_ie_b0) @ self.I_lever_exact)
        den = np.linalg.norm(self.C_bt_b0 @ skew(self._last["w_eb"]))
        if den == 0.0:
            raise ZeroDivisionError("omega_eb^b vanishes; ratio is degenerate")
        return float(num / den)

    def lever_term_growth(self, t=None) -> tuple[float, float]:
        """``(||int C f dt||, ||lever coefficient @ l^b||)``."""
        self._require(t)
        return (float(np.linalg.norm(self.I_fv)),
                float(np.linalg.norm(self.lever_coefficient() @ self.lever.l_b)))


def solve_attitude(pairs, window: int | None = None) -> AttitudeSolution:
    """Davenport q-method for ``min sum w ||alpha - C beta||^2``.

    Parameters
    ----------
    pairs : sequence of ObservationPair
    window : int, optional
        Use only the last ``window`` pairs.

    Raises
    ------
    UnobservableError
        If the weighted beta scatter has rank below two (ratio of its second
        to largest singular value under ``DEGENERACY_RATIO``). ``axis`` is the
        dominant beta direction.
    """
    pairs = list(pairs)
    if window is not None:
        pairs = pairs[-window:]
    if not pairs:
        raise UnobservableError("no observation pairs")
    w = np.array([p.weight for p in pairs], dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    a = np.array([p.alpha for p in pairs], dtype=float)
    b = np.array([p.beta for p in pairs], dtype=float)

    gram = np.einsum("k,ki,kj->ij", w, b, b)
    s, u = np.linalg.eigh(gram)
    if s[2] <= 0 or s[1] / s[2] < DEGENERACY_RATIO:
        raise UnobservableError("beta vectors are collinear; rotation about them is unobservable",
                                axis=u[:, 2])

    B = np.einsum("k,ki,kj->ij", w, a, b)
    S = B + B.T
    sigma = np.trace(B)
    z = np.array([B[1, 2] - B[2, 1], B[2, 0] - B[0, 2], B[0, 1] - B[1, 0]])
    K = np.empty((4, 4))
    K[0, 0] = sigma
    K[0, 1:] = z
    K[1:, 0] = z
    K[1:, 1:] = S - sigma * np.eye(3)
    lam, vec = np.linalg.eigh(K)
    q = vec[:, 3]
    # K is built for the frame-transformation quaternion; conjugate for C_b^n(0)
    q = np.array([q[0], -q[1], -q[2], -q[3]])
    C = quat_to_dcm(q)
    resid = a - b @ C.T
    loss = float(np.einsum("k,ki,ki->", w, resid, resid))
    return AttitudeSolution(RotationMatrix(C, Frame.B0, Frame.N0), float(lam[3] - lam[2]), len(pairs), loss)


def solve_attitude_svd(pairs) -> np.ndarray:
    """SVD solution of the same problem, used as a cross-check."""
    B = sum(p.weight * np.outer(p.alpha, p.beta) for p in pairs)
    U, _, Vt = np.linalg.svd(B)
    d = np.linalg.det(U) * np.linalg.det(Vt)
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def write_pairs_csv(path, pairs) -> None:
    """Columns ``t, alpha_x, alpha_y, alpha_z, beta_x, beta_y, beta_z, weight``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha_x", "alpha_y", "alpha_z", "beta_x", "beta_y", "beta_z", "weight"])
        for p in pairs:
            w.writerow([format(float(x), ".17g") for x in (p.t, *p.alpha, *p.beta, p.weight)])


def read_pairs_csv(path) -> list[ObservationPair]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ObservationPair(
            float(r["t"]),
            np.array([float(r["alpha_x"]), float(r["alpha_y"]), float(r["alpha_z"])]),
            np.array([float(r["beta_x"]), float(r["beta_y"]), float(r["beta_z"])]),
            float(r["weight"]),
        )
        for r in rows
    ]


def _slice_kin(kin: earth.EarthKinematics, sl: slice) -> earth.EarthKinematics:
    return earth.EarthKinematics(
        omega_ie_n=kin.omega_ie_n[sl], omega_en_n=kin.omega_en_n[sl],
        gravity_n=kin.gravity_n[sl], R_N=kin.R_N[sl], R_E=kin.R_E[sl], Rc=kin.Rc[sl],
    )


def _slice_rates(r: DerivedRates, sl: slice) -> DerivedRates:
    return DerivedRates(*(getattr(r, f)[sl] for f in DerivedRates.__dataclass_fields__))


def run_epochs(
    imu: ImuStream,
    gnss: GnssStream,
    lever=(0.0, 0.0, 0.0),
    kin: earth.EarthKinematics | None = None,
    truth: DerivedRates | None = None,
    omega_ie_b0=None,
    coning: bool = False,
    settle_time: float = 0.1,
    epochs=None,
):
    """Accumulate a whole run, yielding the accumulator at each GNSS epoch.

    GNSS samples are linearly interpolated to the IMU times. ``kin``
    overrides the per-IMU-sample earth quantities, which otherwise come
    from the interpolated GNSS position and velocity. GNSS epochs must fall
    on IMU sample times. ``epochs`` overrides the yield times (default:
    the GNSS sample times).
    """
    g_i = gnss.interpolate(imu.t)
    if kin is None:
        kin = earth.kinematics_series(g_i.pos, g_i.v_n)
    ep_t = gnss.t if epochs is None else np.asarray(epochs, dtype=float)
    idx = np.searchsorted(imu.t, ep_t - 1e-9)
    ok = idx < len(imu.t)
    idx, ep_t = idx[ok], ep_t[ok]
    if np.any(np.abs(imu.t[idx] - ep_t) > 1e-9 * np.maximum(1.0, np.abs(ep_t))):
        raise TimestampError("GNSS epochs must coincide with IMU sample times")
    acc = AlignmentAccumulator(lever, coning=coning, settle_time=settle_time)
    prev = 0
    for i in idx:
        sl = slice(prev, i + 1)
        acc.accumulate(
            imu[sl], GnssStream(g_i.t[sl], g_i.pos[sl], g_i.v_n[sl]), _slice_kin(kin, sl),
            None if truth is None else _slice_rates(truth, sl), omega_ie_b0,
        )
        prev = i + 1
        yield acc
