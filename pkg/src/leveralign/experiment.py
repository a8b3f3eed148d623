"""Single-run alignment, Monte Carlo aggregation and remark diagnostics."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import earth, simkit
from .alignment import CompensationMode, UnobservableError, run_epochs, solve_attitude
from .attitude import attitude_error_angles
from .config import ExperimentConfig

log = logging.getLogger(__name__)

RAD2DEG = 180.0 / math.pi

#: Monte Carlo scenarios: name -> (use truth lever arm, compensation mode or None for config's)
SCENARIOS = {
    "compensated": (True, None),
    "uncompensated": (True, CompensationMode.NONE),
    "baseline": (False, CompensationMode.NONE),
}


class RunError(RuntimeError):
    def __init__(self, run_index: int, cause: BaseException):
        super().__init__(f"run {run_index} failed: {cause!r}")
        self.run_index = run_index


@dataclass
class ErrorSeries:
    """Per-epoch attitude errors of one run [rad]; NaN rows are unsolved epochs."""

    t: np.ndarray
    errors: np.ndarray  # (n, 3): pitch, roll, yaw

    @property
    def solved(self) -> np.ndarray:
        return ~np.isnan(self.errors).any(axis=1)


@dataclass
class ErrorCurve:
    """Epoch-wise mean errors [deg] across runs."""

    epochs: np.ndarray
    mean_deg: np.ndarray  # (n, 3): pitch, roll, yaw
    n_runs: int
    runs_deg: np.ndarray | None = field(default=None, repr=False)

    def peak(self, axis: int = 2) -> float:
        return float(np.max(np.abs(self.mean_deg[:, axis])))


@dataclass
class _Prepared:
    traj: simkit.Trajectory
    imu_true: object


def _prepare(cfg: ExperimentConfig, horizon: float | None = None) -> _Prepared:
    traj = simkit.gen_trajectory(cfg.profile(horizon), cfg.imu_dt)
    return _Prepared(traj, simkit.synthesize_imu(traj))


def _truth_inputs(prep: _Prepared):
    traj = prep.traj
    rates = traj.rates(prep.imu_true.omega_ib_b)
    w_ie_b0 = traj.C_b_n[0].T @ earth.earth_rate_n(traj.pos[0, 0])
    return rates, w_ie_b0


def run_single(
    cfg: ExperimentConfig,
    run_index: int = 0,
    mode: CompensationMode | str | None = None,
    lever_truth=None,
    noise_free: bool = False,
    prep: _Prepared | None = None,
) -> ErrorSeries:
    """Align one simulated run, solving at every GNSS epoch.

    The attitude at each epoch is ``C_b^n(t)`` rebuilt from the solved
    ``C_b^n(0)`` and the two chains, compared with truth. Epochs whose pair
    geometry is degenerate are returned as NaN rows.
    """
    mode = CompensationMode(mode or cfg.compensation_mode)
    if lever_truth is None:
        lever_truth = np.asarray(cfg.lever_arm_truth, float)
        lever_alg = np.asarray(cfg.lever_arm_assumed, float)
    else:
        lever_truth = lever_alg = np.asarray(lever_truth, float)
    prep = prep or _prepare(cfg)
    err = cfg.error_model(noise_free)
    sim = simkit.simulate(cfg.profile(), lever_truth, err, cfg.imu_dt, cfg.gnss_dt, run_index,
                          traj=prep.traj, imu_true=prep.imu_true)
    truth_kw = {}
    if mode is CompensationMode.EXACT:
        rates, w_ie_b0 = _truth_inputs(prep)
        truth_kw = {"truth": rates, "omega_ie_b0": w_ie_b0}

    traj = prep.traj
    pairs, ts, out = [], [], []
    window = cfg.pair_window or None
    for acc in run_epochs(sim.imu, sim.gnss, lever_alg, coning=cfg.coning,
                          settle_time=cfg.settle_time, **truth_kw):
        if acc.t <= acc.t0:
            continue
        w = (acc.t - acc.t0) if cfg.pair_weighting == "ramp" else 1.0
        pairs.append(acc.emit_pair(weight=w, mode=mode))
        ts.append(acc.t)
        k = int(round((acc.t - traj.t[0]) / cfg.imu_dt))
        try:
            sol = solve_attitude(pairs, window)
        except UnobservableError:
            out.append((np.nan, np.nan, np.nan))
            continue
        C = acc.C_nt_n0.T @ sol.C_b_n0.matrix @ acc.C_bt_b0
        e = attitude_error_angles(C, traj.C_b_n[k])
        out.append((e.pitch, e.roll, e.yaw))
    return ErrorSeries(np.array(ts), np.array(out, dtype=float).reshape(-1, 3))


def aggregate(series: list[ErrorSeries], keep_runs: bool = True) -> ErrorCurve:
    """Mean over runs, keeping only epochs solved in every run."""
    t = series[0].t
    for s in series[1:]:
        if len(s.t) != len(t) or np.any(s.t != t):
            raise ValueError("runs have different epoch grids")
    stack = np.stack([s.errors for s in series]) * RAD2DEG
    ok = ~np.isnan(stack).any(axis=(0, 2))
    stack = stack[:, ok]
    mean = stack.sum(axis=0) / len(series)
    return ErrorCurve(t[ok], mean, len(series), stack if keep_runs else None)


def _mc_job(args):
    cfg, run_index, mode, lever = args
    try:
        return run_single(cfg, run_index, mode, lever, prep=_job_prep(cfg))
    except Exception as e:  # noqa: BLE001 - reported with the run index
        raise RunError(run_index, e) from e


_PREP_CACHE: dict = {}


def _job_prep(cfg: ExperimentConfig) -> _Prepared:
    key = repr(cfg.profile()) + repr(cfg.imu_dt)
    if key not in _PREP_CACHE:
        _PREP_CACHE.clear()
        _PREP_CACHE[key] = _prepare(cfg)
    return _PREP_CACHE[key]


def run_monte_carlo(cfg: ExperimentConfig, threads: int = 1, keep_runs: bool = True) -> dict[str, ErrorCurve]:
    """Run every scenario ``cfg.run_count`` times and average epoch-wise.

    Noise for run ``i`` is keyed by ``(base_seed, i, channel)`` and shared by
    all scenarios, so the three curves differ only in lever arm handling.
    Results are aggregated in run-index order regardless of ``threads``.
    """
    curves = {}
    for name, (use_lever, mode) in SCENARIOS.items():
        lever = cfg.lever_arm_truth if use_lever else [0.0, 0.0, 0.0]
        mode = mode or CompensationMode(cfg.compensation_mode)
        jobs = [(cfg, i, mode, lever) for i in range(cfg.run_count)]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                series = list(pool.map(_mc_job, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
        else:
            series = [_mc_job(j) for j in jobs]
        curves[name] = aggregate(series, keep_runs)
        log.info("%s: %d runs, peak |yaw| %.4g deg", name, cfg.run_count, curves[name].peak())
    return curves


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_curve_csv(path, curve: ErrorCurve) -> None:
    """Columns ``epoch, pitch_err_deg, roll_err_deg, yaw_err_deg, n_runs``."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,pitch_err_deg,roll_err_deg,yaw_err_deg,n_runs\n")
        for t, (p, r, y) in zip(curve.epochs, curve.mean_deg):
            fh.write(f"{fmt(t)},{fmt(p)},{fmt(r)},{fmt(y)},{curve.n_runs}\n")


def write_series_csv(path, series: ErrorSeries) -> None:
    """Columns ``epoch, pitch_err_deg, roll_err_deg, yaw_err_deg, solved``."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,pitch_err_deg,roll_err_deg,yaw_err_deg,solved\n")
        for t, e, ok in zip(series.t, series.errors * RAD2DEG, series.solved):
            fh.write(f"{fmt(t)},{fmt(e[0])},{fmt(e[1])},{fmt(e[2])},{int(ok)}\n")


PLOT_SCRIPT = '''"""Overlay of mean alignment errors; run with matplotlib installed."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 8))
for name, style in [("compensated", "-"), ("uncompensated", "--"), ("baseline", ":")]:
    path = here / f"mc_{name}.csv"
    if not path.exists():
        continue
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    t = [float(r["epoch"]) for r in rows]
    for ax, col in zip(axes, ["pitch_err_deg", "roll_err_deg", "yaw_err_deg"]):
        ax.plot(t, [float(r[col]) for r in rows], style, label=name)
        ax.set_ylabel(col.replace("_err_deg", " error [deg]"))
axes[0].legend()
axes[-1].set_xlabel("time [s]")
fig.tight_layout()
fig.savefig(here / "mean_errors.png", dpi=150)
'''


def write_monte_carlo(out_dir, cfg: ExperimentConfig, curves: dict[str, ErrorCurve]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, curve in curves.items():
        p = out / f"mc_{name}.csv"
        write_curve_csv(p, curve)
        paths.append(p)
    (out / "plot_mean_errors.py").write_text(PLOT_SCRIPT)
    (out / "effective_config.toml").write_text(cfg.dump())
    return paths + [out / "plot_mean_errors.py", out / "effective_config.toml"]


@dataclass
class RemarkRows:
    t: np.ndarray
    approximation_ratio: np.ndarray
    force_integral: np.ndarray
    lever_term: np.ndarray
    beta_rel_diff: np.ndarray

    @property
    def lever_to_force(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.force_integral > 0, self.lever_term / self.force_integral, 0.0)


def report_remarks(cfg: ExperimentConfig, horizon: float | None = None) -> RemarkRows:
    """Noise-free truth run with the exact lever term available.

    Per GNSS epoch: the approximation ratio, ``||int C f dt||``, the lever
    coefficient magnitude and ``||beta_exact - beta_eq9|| / ||beta_exact||``.
    """
    horizon = cfg.remarks_horizon if horizon is None else horizon
    prep = _prepare(cfg, horizon)
    lever = np.asarray(cfg.lever_arm_truth, float)
    sim = simkit.simulate(cfg.profile(horizon), lever, None, cfg.imu_dt, cfg.gnss_dt,
                          traj=prep.traj, imu_true=prep.imu_true)
    rates, w_ie_b0 = _truth_inputs(prep)
    rows = []
    for acc in run_epochs(sim.imu, sim.gnss, lever, truth=rates, omega_ie_b0=w_ie_b0,
                          coning=cfg.coning, settle_time=cfg.settle_time):
        try:
            ratio = acc.approximation_ratio()
        except ZeroDivisionError:
            ratio = math.nan
        fi, lt = acc.lever_term_growth()
        b_ex = acc.emit_pair_exact().beta
        b_ap = acc.emit_pair(mode=CompensationMode.EQ9).beta
        nb = np.linalg.norm(b_ex)
        rel = float(np.linalg.norm(b_ex - b_ap) / nb) if nb > 0 else 0.0
        rows.append((acc.t, ratio, fi, lt, rel))
    a = np.array(rows, dtype=float)
    return RemarkRows(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4])


def write_remarks_csv(path, rows: RemarkRows) -> None:
    """Columns ``epoch, approximation_ratio, force_integral_norm, lever_term_norm,
    lever_to_force, beta_rel_diff``."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,approximation_ratio,force_integral_norm,lever_term_norm,"
                 "lever_to_force,beta_rel_diff\n")
        for vals in zip(rows.t, rows.approximation_ratio, rows.force_integral,
                        rows.lever_term, rows.lever_to_force, rows.beta_rel_diff):
            fh.write(",".join(fmt(v) for v in vals) + "\n")
