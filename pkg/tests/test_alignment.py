import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from leveralign import earth, simkit
from leveralign.alignment import (
    AlignmentAccumulator,
    CompensationMode,
    LeverArm,
    MissingTruthError,
    ObservationPair,
    UnobservableError,
    lever_arm_velocity,
    lever_arm_velocity_inverse,
    read_pairs_csv,
    run_epochs,
    solve_attitude,
    solve_attitude_svd,
    write_pairs_csv,
)
from leveralign.attitude import Frame, orthonormality_defect, rotation_angle
from leveralign.strapdown import DerivedRates, GnssStream, ImuStream, TimestampError

from oracles import cross_matrix, kabsch, random_rotation, rz
from simhelpers import default_profile, identity_residuals

OMEGA = earth.RATE
LEVER = np.array([1.0, 1.0, 1.0])

vec3 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).map(np.array)


def stationary(lat=0.0, duration=10.0, dt=0.01, gyro=None):
    """Level, north-facing body at rest: ``(imu, gnss, kin)``."""
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    pos = np.tile([lat, 0.3, 0.0], (n, 1))
    v = np.zeros((n, 3))
    kin = earth.kinematics_series(pos, v)
    w = kin.omega_ie_n if gyro is None else np.tile(gyro, (n, 1))
    imu = ImuStream(t, w, -kin.gravity_n)
    return imu, GnssStream(t, pos, v), kin


def constant_truth(n, w_eb):
    z = np.zeros((n, 3))
    return DerivedRates(z, z, z, np.tile(w_eb, (n, 1)), z, z)


def rel_angle(A, B):
    return rotation_angle(A.T @ B)


class TestLeverArmVelocity:
    def test_zero_lever(self):
        v = np.array([10.0, -3.0, 1.0])
        np.testing.assert_array_equal(lever_arm_velocity(v, np.eye(3), [0.1, 0.2, 0.3], [0, 0, 0]), v)

    def test_rate_parallel_to_lever(self):
        v = np.array([10.0, -3.0, 1.0])
        out = lever_arm_velocity(v, random_rotation(np.random.default_rng(1)), [0.2, 0.2, 0.2], LEVER)
        np.testing.assert_allclose(out, v, atol=1e-15)

    def test_yaw_rate_example(self):
        out = lever_arm_velocity(np.zeros(3), np.eye(3), [0, 0, 0.1], LeverArm(LEVER))
        np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], atol=1e-15)

    @given(vec3, vec3, vec3, st.integers(0, 2**32 - 1))
    def test_matches_cross_matrix_oracle_and_inverts(self, v, w, l, seed):
        C = random_rotation(np.random.default_rng(seed))
        out = lever_arm_velocity(v, C, w, l)
        np.testing.assert_allclose(out, v + C @ (cross_matrix(w) @ l), atol=1e-12)
        np.testing.assert_allclose(lever_arm_velocity_inverse(out, C, w, l), v, atol=1e-12)


class TestLeverArmType:
    @pytest.mark.parametrize("bad", [[100.0, 0, 0], [np.nan, 0, 0], [0, np.inf, 0]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            LeverArm(bad)

    def test_read_only(self):
        l = LeverArm([1, 2, 3])
        with pytest.raises(ValueError):
            l.l_b[0] = 5.0
        assert LeverArm([0, 0, 0]).is_zero and not l.is_zero


class TestAccumulate:
    def test_zero_length_slice(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator(LEVER).accumulate(imu[:50], GnssStream(gnss.t[:50], gnss.pos[:50], gnss.v_n[:50]))
        before = (acc.t, acc.n_samples, acc.I_fv.copy(), acc.I_g.copy(), acc.q_b.copy())
        acc.accumulate(imu[50:50], GnssStream(gnss.t[50:50], gnss.pos[50:50], gnss.v_n[50:50]))
        assert (acc.t, acc.n_samples) == before[:2]
        for a, b in zip((acc.I_fv, acc.I_g, acc.q_b), before[2:]):
            np.testing.assert_array_equal(a, b)

    def test_stationary_gravity_integral(self):
        # n rotates at the earth rate about north; |int R(Omega t) g dt| = g * 2 sin(Omega T / 2) / Omega
        imu, gnss, kin = stationary(lat=0.0, duration=10.0)
        acc = AlignmentAccumulator().accumulate(imu, gnss, kin)
        g = kin.gravity_n[0, 2]
        expect = g * 2.0 * np.sin(OMEGA * 5.0) / OMEGA
        assert abs(np.linalg.norm(acc.I_g) - expect) < 1e-6
        assert abs(np.linalg.norm(acc.I_g) - g * 10.0) < 1e-5

    def test_stationary_pair_satisfies_identity(self):
        imu, gnss, kin = stationary(lat=0.6, duration=30.0)
        acc = AlignmentAccumulator().accumulate(imu, gnss, kin)
        p = acc.emit_pair()
        np.testing.assert_allclose(p.alpha, p.beta, atol=1e-9)

    def test_first_sample_pair_is_zero(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator(LEVER, settle_time=0.0)
        acc.accumulate(imu[:1], GnssStream(gnss.t[:1], gnss.pos[:1], gnss.v_n[:1]))
        p = acc.emit_pair(t=0.0)
        np.testing.assert_array_equal(p.alpha, np.zeros(3))
        np.testing.assert_array_equal(p.beta, np.zeros(3))
        assert acc.lever_term_growth() == (0.0, 0.0)

    def test_emit_before_accumulate(self):
        with pytest.raises(ValueError):
            AlignmentAccumulator().emit_pair()

    def test_emit_at_wrong_time(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator().accumulate(imu, gnss, kin)
        with pytest.raises(TimestampError):
            acc.emit_pair(t=0.5)

    def test_gap_raises(self):
        imu, gnss, kin = stationary(duration=2.0)
        keep = np.r_[0:100, 103:len(imu)]
        with pytest.raises(TimestampError, match="gap"):
            AlignmentAccumulator().accumulate(imu[keep], GnssStream(gnss.t[keep], gnss.pos[keep], gnss.v_n[keep]))

    def test_non_increasing_time_raises(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator().accumulate(imu, gnss, kin)
        with pytest.raises(TimestampError):
            acc.accumulate(imu[-5:], GnssStream(gnss.t[-5:], gnss.pos[-5:], gnss.v_n[-5:]))

    def test_gnss_off_grid_raises(self):
        imu, gnss, kin = stationary(duration=1.0)
        with pytest.raises(TimestampError):
            AlignmentAccumulator().accumulate(imu, GnssStream(gnss.t + 1e-3, gnss.pos, gnss.v_n))

    def test_settle_median_latch(self):
        imu, gnss, kin = stationary(duration=1.0, gyro=[0.0, 0.0, 0.1])
        w = imu.omega_ib_b.copy()
        w[0] = [5.0, 5.0, 5.0]  # startup spike
        acc = AlignmentAccumulator(settle_time=0.1).accumulate(ImuStream(imu.t, w, imu.f_b), gnss, kin)
        np.testing.assert_array_equal(acc.omega_ib_b_0, [0.0, 0.0, 0.1])

    def test_slicing_is_transparent(self):
        traj = simkit.gen_trajectory(default_profile(5.0), 0.01)
        sim = simkit.simulate(default_profile(5.0), LEVER, traj=traj, gnss_dt=0.01)
        whole = AlignmentAccumulator(LEVER, coning=True, settle_time=0.0)
        whole.accumulate(sim.imu, sim.gnss)
        parts = AlignmentAccumulator(LEVER, coning=True, settle_time=0.0)
        for sl in (slice(0, 1), slice(1, 137), slice(137, 138), slice(138, None)):
            parts.accumulate(sim.imu[sl], GnssStream(sim.gnss.t[sl], sim.gnss.pos[sl], sim.gnss.v_n[sl]))
        np.testing.assert_allclose(parts.emit_pair().alpha, whole.emit_pair().alpha, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(parts.emit_pair().beta, whole.emit_pair().beta, rtol=1e-12, atol=1e-12)

    def test_increments_preferred_over_rates(self):
        imu, gnss, kin = stationary(duration=1.0, gyro=[0.0, 0.0, 0.0])
        dth = np.zeros((len(imu), 3))
        dth[1:, 2] = 0.2 * 0.01
        acc = AlignmentAccumulator().accumulate(ImuStream(imu.t, imu.omega_ib_b, imu.f_b, dth), gnss, kin)
        np.testing.assert_allclose(acc.C_bt_b0, rz(0.2), atol=1e-14)


class TestTruthInputs:
    def test_exact_without_truth(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator(LEVER).accumulate(imu, gnss, kin)
        with pytest.raises(MissingTruthError):
            acc.emit_pair(mode=CompensationMode.EXACT)
        with pytest.raises(MissingTruthError):
            acc.approximation_ratio()

    def test_truth_must_be_consistent_across_slices(self):
        imu, gnss, kin = stationary(duration=1.0)
        n = len(imu)
        acc = AlignmentAccumulator(LEVER)
        acc.accumulate(imu[:10], GnssStream(gnss.t[:10], gnss.pos[:10], gnss.v_n[:10]), None,
                       constant_truth(10, [0, 0, 0.1]), np.zeros(3))
        with pytest.raises(MissingTruthError):
            acc.accumulate(imu[10:n], GnssStream(gnss.t[10:], gnss.pos[10:], gnss.v_n[10:]))

    def test_truth_needs_earth_rate_in_b0(self):
        imu, gnss, kin = stationary(duration=1.0)
        with pytest.raises(MissingTruthError):
            AlignmentAccumulator(LEVER).accumulate(imu, gnss, kin, constant_truth(len(imu), [0, 0, 0.1]))


class TestZeroLever:
    def test_beta_is_force_integral_bitwise(self):
        prof = default_profile(20.0)
        sim0 = simkit.simulate(prof, np.zeros(3), gnss_dt=1.0)
        sim1 = simkit.simulate(prof, LEVER, gnss_dt=1.0, traj=sim0.traj, imu_true=sim0.imu)
        kw = dict(coning=True, settle_time=0.0)
        for a0, a1 in zip(run_epochs(sim0.imu, sim0.gnss, np.zeros(3), **kw),
                          run_epochs(sim1.imu, sim1.gnss, LEVER, **kw)):
            b = a0.emit_pair().beta
            assert np.array_equal(b, a1.I_fv)
            assert np.array_equal(b, a0.emit_pair(mode=CompensationMode.NONE).beta)

    def test_exact_equals_eq9_with_zero_lever(self):
        prof = default_profile(5.0)
        sim = simkit.simulate(prof, np.zeros(3))
        rates = sim.traj.rates(sim.imu.omega_ib_b)
        for acc in run_epochs(sim.imu, sim.gnss, np.zeros(3), truth=rates, omega_ie_b0=rates.omega_ie_b[0]):
            assert np.array_equal(acc.emit_pair_exact().beta, acc.emit_pair().beta)


class TestIdentity:
    @pytest.mark.parametrize("mode", [CompensationMode.EQ9, CompensationMode.EXACT])
    def test_default_profile_60s(self, mode):
        _, r = identity_residuals(default_profile(60.0), LEVER, 0.01, mode=mode, coning=True)
        assert r.max() < 1e-4

    @pytest.mark.parametrize("seed", range(4))
    def test_random_lever_up_to_5m(self, seed):
        rng = np.random.default_rng(seed)
        l = rng.normal(size=3)
        l *= rng.uniform(0.5, 5.0) / np.linalg.norm(l)
        _, r = identity_residuals(default_profile(60.0), l, 0.01, mode=CompensationMode.EXACT, coning=True)
        assert r.max() < 1e-4

    def test_s_turn(self):
        from leveralign.config import ExperimentConfig

        prof = ExperimentConfig(profile_kind="s-turn").profile(60.0)
        _, r = identity_residuals(prof, LEVER, 0.01, mode=CompensationMode.EXACT, coning=True)
        assert r.max() < 1e-4

    def test_uncompensated_violates_identity(self):
        _, r = identity_residuals(default_profile(10.0), LEVER, 0.01, mode=CompensationMode.NONE, coning=True)
        assert r.max() > 1e-2

    def test_exact_sign_as_implemented(self):
        prof = default_profile(120.0)
        _, good = identity_residuals(prof, 3 * LEVER, 0.01, mode=CompensationMode.EXACT, coning=True)
        _, flip = identity_residuals(prof, 3 * LEVER, 0.01, flip_exact=True, coning=True)
        assert flip.max() > 5 * good.max()

    def test_zero_earth_rate_makes_forms_agree(self, monkeypatch):
        monkeypatch.setattr(earth, "RATE", 0.0)
        prof = default_profile(10.0)
        sim = simkit.simulate(prof, LEVER, gnss_dt=1.0)
        rates = sim.traj.rates(sim.imu.omega_ib_b)
        assert not np.any(rates.omega_ie_b)
        for acc in run_epochs(sim.imu, sim.gnss, LEVER, truth=rates, omega_ie_b0=rates.omega_ie_b[0],
                              settle_time=0.0):
            np.testing.assert_allclose(acc.emit_pair_exact().beta, acc.emit_pair().beta, rtol=0, atol=1e-13)


class TestRemarks:
    def test_ratio_zero_at_start(self):
        imu, gnss, kin = stationary(duration=1.0, gyro=[0, 0, 0.01])
        acc = AlignmentAccumulator(LEVER)
        acc.accumulate(imu[:1], GnssStream(gnss.t[:1], gnss.pos[:1], gnss.v_n[:1]), kin.__class__(
            kin.omega_ie_n[:1], kin.omega_en_n[:1], kin.gravity_n[:1], kin.R_N[:1], kin.R_E[:1], kin.Rc[:1]),
            constant_truth(1, [0, 0, 0.01]), [OMEGA, 0, 0])
        assert acc.approximation_ratio() == 0.0

    def test_vanishing_rate_is_degenerate(self):
        imu, gnss, kin = stationary(duration=1.0)
        acc = AlignmentAccumulator(LEVER).accumulate(imu, gnss, kin, constant_truth(len(imu), np.zeros(3)),
                                                     [OMEGA, 0, 0])
        with pytest.raises(ZeroDivisionError):
            acc.approximation_ratio()

    def test_single_axis_ratio_against_quadrature(self):
        w = 0.01
        w_ie_b0 = OMEGA * np.array([np.cos(0.5), 0.0, -np.sin(0.5)])
        T = 1000.0
        imu, gnss, kin = stationary(duration=T, dt=0.01, gyro=[0, 0, w])
        truth = constant_truth(len(imu), [0, 0, w])
        epochs = np.arange(1.0, T + 0.5, 1.0)
        ratios = np.array([acc.approximation_ratio() for acc in run_epochs(
            imu, gnss, LEVER, kin=kin, truth=truth, omega_ie_b0=w_ie_b0, epochs=epochs)])
        W = cross_matrix([0, 0, w])
        den = np.linalg.norm(W)

        def oracle(t):
            integral, _ = quad_vec(lambda s: rz(w * s) @ W, 0.0, t, epsabs=1e-13)
            return np.linalg.norm(cross_matrix(w_ie_b0) @ integral) / den

        for t in (1.0, 10.0, 100.0, 314.0, 600.0, 1000.0):
            assert ratios[int(t) - 1] == pytest.approx(oracle(t), rel=1e-6)
        assert np.all(ratios <= OMEGA * epochs * (1 + 1e-12))
        assert ratios.max() < 0.1
        # closed form 2 sqrt(2) sin(w t / 2) rises until w t = pi
        rising = epochs <= np.pi / w
        assert np.all(np.diff(ratios[rising]) >= 0)

    def test_lever_term_growth_bounds(self):
        prof = default_profile(100.0)
        sim = simkit.simulate(prof, LEVER)
        acc = None
        for acc in run_epochs(sim.imu, sim.gnss, LEVER, coning=True, settle_time=0.0):
            pass
        force, lever = acc.lever_term_growth()
        assert acc.t == pytest.approx(100.0)
        assert force >= 100.0
        assert lever <= 2 * np.linalg.norm(sim.imu.omega_ib_b, axis=1).max() * np.linalg.norm(LEVER)

    def test_lever_ratio_falls_over_first_minute(self):
        prof = default_profile(60.0)
        sim = simkit.simulate(prof, LEVER)
        g = np.array([acc.lever_term_growth() for acc in run_epochs(sim.imu, sim.gnss, LEVER, settle_time=0.0)])
        ratio = g[1:, 1] / g[1:, 0]
        assert np.all(np.diff(ratio) <= 0)

    def test_approximation_ordering_bound(self):
        prof = default_profile(600.0)
        sim = simkit.simulate(prof, LEVER)
        rates = sim.traj.rates(sim.imu.omega_ib_b)
        w0 = rates.omega_ie_b[0]
        for acc in run_epochs(sim.imu, sim.gnss, LEVER, truth=rates, omega_ie_b0=w0, settle_time=0.0,
                              epochs=np.arange(0.0, 601.0, 50.0)):
            diff = np.linalg.norm(acc.emit_pair_exact().beta - acc.emit_pair().beta)
            bound = np.linalg.norm(cross_matrix(w0) @ acc.I_lever_exact @ LEVER) + 2 * OMEGA * np.linalg.norm(LEVER)
            assert diff <= bound * (1 + 1e-9) + 1e-12


def noiseless_pairs(rng, C, k):
    betas = rng.normal(size=(k, 3)) * rng.uniform(1, 100, size=(k, 1))
    return [ObservationPair(float(i), C @ b, b) for i, b in enumerate(betas)]


class TestSolver:
    @pytest.mark.parametrize("k", [2, 3, 10, 60])
    def test_recovers_random_attitudes(self, rng, k):
        worst = 0.0
        for _ in range(100):
            C = random_rotation(rng)
            sol = solve_attitude(noiseless_pairs(rng, C, k))
            worst = max(worst, rel_angle(sol.C_b_n0.matrix, C))
        assert worst < 1e-9

    def test_solution_metadata(self, rng):
        C = random_rotation(rng)
        sol = solve_attitude(noiseless_pairs(rng, C, 5))
        assert sol.C_b_n0.from_frame is Frame.B0 and sol.C_b_n0.to_frame is Frame.N0
        assert sol.largest_eigenvalue_gap > 0
        assert sol.pair_count == 5
        assert sol.loss < 1e-15 * 5 * 1e4
        assert orthonormality_defect(sol.C_b_n0.matrix) < 1e-12

    def test_single_pair_unobservable(self):
        b = np.array([1.0, 2.0, 2.0])
        with pytest.raises(UnobservableError) as e:
            solve_attitude([ObservationPair(1.0, b, b)])
        assert abs(abs(np.dot(e.value.axis, b / 3.0)) - 1.0) < 1e-12

    def test_collinear_pairs_unobservable(self):
        b = np.array([0.0, 3.0, -4.0])
        pairs = [ObservationPair(float(s), s * b, s * b) for s in (1.0, -2.0, 7.5)]
        with pytest.raises(UnobservableError):
            solve_attitude(pairs)

    @pytest.mark.parametrize("weights", [[], [-1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    def test_invalid_inputs(self, rng, weights):
        C = random_rotation(rng)
        pairs = [ObservationPair(p.t, p.alpha, p.beta, w) for p, w in zip(noiseless_pairs(rng, C, 3), weights)]
        with pytest.raises((UnobservableError, ValueError)):
            solve_attitude(pairs)

    @given(st.floats(1e-6, 1e6), st.integers(0, 2**32 - 1))
    def test_weight_scale_invariance(self, scale, seed):
        rng = np.random.default_rng(seed)
        C = random_rotation(rng)
        pairs = noiseless_pairs(rng, C, 6)
        w = rng.uniform(0.1, 2.0, 6)
        base = solve_attitude([ObservationPair(p.t, p.alpha, p.beta, x) for p, x in zip(pairs, w)])
        scaled = solve_attitude([ObservationPair(p.t, p.alpha, p.beta, x * scale) for p, x in zip(pairs, w)])
        assert rel_angle(base.C_b_n0.matrix, scaled.C_b_n0.matrix) < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_agrees_with_svd_and_scipy_on_noisy_pairs(self, seed):
        rng = np.random.default_rng(seed)
        C = random_rotation(rng)
        pairs = noiseless_pairs(rng, C, 8)
        pairs = [ObservationPair(p.t, p.alpha + rng.normal(0, 1.0, 3), p.beta, rng.uniform(0.5, 2)) for p in pairs]
        q = solve_attitude(pairs).C_b_n0.matrix
        assert rel_angle(q, solve_attitude_svd(pairs)) < 1e-9
        ref = kabsch([p.alpha for p in pairs], [p.beta for p in pairs], [p.weight for p in pairs])
        assert rel_angle(q, ref) < 1e-9

    def test_beats_random_rotations(self, rng):
        C = random_rotation(rng)
        pairs = [ObservationPair(p.t, p.alpha + rng.normal(0, 5.0, 3), p.beta) for p in noiseless_pairs(rng, C, 10)]
        sol = solve_attitude(pairs)

        def loss(M):
            return sum(p.weight * np.sum((p.alpha - M @ p.beta) ** 2) for p in pairs)

        assert sol.loss == pytest.approx(loss(sol.C_b_n0.matrix), rel=1e-9)
        assert all(sol.loss <= loss(random_rotation(rng)) for _ in range(1000))

    def test_window_drops_old_pairs(self, rng):
        C = random_rotation(rng)
        bad = [ObservationPair(p.t, -p.alpha, p.beta) for p in noiseless_pairs(rng, random_rotation(rng), 5)]
        good = noiseless_pairs(rng, C, 4)
        assert rel_angle(solve_attitude(bad + good, window=4).C_b_n0.matrix, C) < 1e-9
        assert rel_angle(solve_attitude(bad + good).C_b_n0.matrix, C) > 1e-3


def test_pairs_csv_round_trip(tmp_path, rng):
    pairs = [ObservationPair(0.1 * k, rng.normal(size=3) * 1e3, rng.normal(size=3) / 7, rng.uniform())
             for k in range(20)]
    path = tmp_path / "pairs.csv"
    write_pairs_csv(path, pairs)
    assert path.read_text().splitlines()[0] == "t,alpha_x,alpha_y,alpha_z,beta_x,beta_y,beta_z,weight"
    back = read_pairs_csv(path)
    for a, b in zip(pairs, back):
        assert a.t == b.t and a.weight == b.weight
        assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.beta, b.beta)
