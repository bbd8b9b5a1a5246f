"""Evaluation metrics, consistency statistics and Monte-Carlo orchestration."""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2

from .errors import EmptyOverlap, SingularCovariance, TimestampMismatch
from .fusion import VEL, run_filter
from .geom import quat_conj, quat_mult, small_angle_quat
from .inertial import NominalState
from .sim import (euler_to_quat, generate_truth, simulate_detections, simulate_imu,
                  simulate_velocity_measurements)

THREADS_ENV = "EGOFUSE_THREADS"


@dataclass(frozen=True)
class Metrics:
    mse: np.ndarray
    mae: np.ndarray
    n: int

    def as_dict(self):
        return {"mse": [float(x) for x in self.mse], "mae": [float(x) for x in self.mae], "n": int(self.n)}

    def table_row(self):
        """Human-readable ``MSE | MAE`` triples, four decimals each."""
        return "MSE %s | MAE %s" % (format_triple(self.mse), format_triple(self.mae))


@dataclass(frozen=True)
class ConsistencyStats:
    mean_nees: float
    mean_nis: float
    n_runs: int
    chi2_bounds: tuple
    nis_bounds: tuple = (float("nan"), float("nan"))

    @property
    def nees_ok(self):
        lo, hi = self.chi2_bounds
        return lo <= self.mean_nees <= hi

    def as_dict(self):
        return {"mean_nees": self.mean_nees, "mean_nis": self.mean_nis, "n_runs": self.n_runs,
                "chi2_bounds": list(self.chi2_bounds), "nis_bounds": list(self.nis_bounds),
                "nees_within_bounds": bool(self.nees_ok)}


def format_triple(x):
    return ", ".join("%.4f" % v for v in x)


def align(est_t, gt_t):
    """Index into ``gt_t`` for every estimate timestamp; exact matches only."""
    est_t = np.asarray(est_t, dtype=float)
    gt_t = np.asarray(gt_t, dtype=float)
    if est_t.size == 0 or gt_t.size == 0:
        raise EmptyOverlap("no samples to compare")
    order = np.argsort(gt_t, kind="stable")
    pos = np.searchsorted(gt_t[order], est_t)
    pos = np.clip(pos, 0, gt_t.size - 1)
    idx = order[pos]
    bad = gt_t[idx] != est_t
    if bad.any():
        raise TimestampMismatch("%d estimate timestamps have no exact ground-truth match (first t=%r)"
                                % (int(bad.sum()), float(est_t[bad][0])))
    return idx


def compute_metrics(est_t, est_v, gt_t, gt_v):
    """Per-axis MSE and MAE of an estimated velocity series against ground truth."""
    idx = align(est_t, gt_t)
    e = np.asarray(est_v, dtype=float).reshape(-1, 3) - np.asarray(gt_v, dtype=float).reshape(-1, 3)[idx]
    return Metrics(mse=np.mean(e * e, axis=0), mae=np.mean(np.abs(e), axis=0), n=int(e.shape[0]))


def chi2_bounds(n_runs, dof=3, alpha=0.05):
    """Two-sided interval for the mean of ``n_runs`` chi-square(dof) draws."""
    lo, hi = chi2.ppf([alpha / 2.0, 1.0 - alpha / 2.0], n_runs * dof)
    return float(lo / n_runs), float(hi / n_runs)


def nees_series(est_v, P_vv, gt_v):
    """Velocity NEES per sample; ``P_vv`` is (T, 3, 3) or diagonal-only (T, 3)."""
    e = np.asarray(gt_v, dtype=float) - np.asarray(est_v, dtype=float)
    P = np.asarray(P_vv, dtype=float)
    if P.ndim == 2:
        if np.any(P <= 0):
            raise SingularCovariance("non-positive velocity variance")
        return np.sum(e * e / P, axis=1)
    try:
        Lc = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise SingularCovariance("velocity covariance is singular") from None
    z = np.linalg.solve(Lc, e[..., None])[..., 0]
    return np.sum(z * z, axis=1)


def compute_nees(runs, nis=None, alpha=0.05):
    """Time- and run-averaged velocity NEES over Monte-Carlo runs.

    ``runs`` holds ``(est_v, P_vv, gt_v)`` per run; ``nis`` optionally holds
    one NIS array per run (3-DoF innovations).
    """
    runs = list(runs)
    if not runs:
        raise EmptyOverlap("no runs")
    per_run = [nees_series(*r) for r in runs]
    mean_nees = float(np.mean([np.mean(x) for x in per_run]))
    mean_nis = float("nan")
    nis_bounds = (float("nan"), float("nan"))
    if nis:
        mean_nis = float(np.mean([np.mean(x) for x in nis if len(x)]))
        nis_bounds = chi2_bounds(len(nis), 3, alpha)
    return ConsistencyStats(mean_nees=mean_nees, mean_nis=mean_nis, n_runs=len(runs),
                            chi2_bounds=chi2_bounds(len(runs), 3, alpha), nis_bounds=nis_bounds)


def coarse_init(imu, radar=(), t_tol=0.05):
    """Level attitude from the first accel sample (yaw 0) and velocity from
    the first radar measurement when it is close to the first IMU sample."""
    u = imu[0]
    fx, fy, fz = u.accel
    roll = math.atan2(fy, fz)
    pitch = math.atan2(-fx, math.hypot(fy, fz))
    v = np.zeros(3)
    for m in radar:
        if abs(m.t - u.t) <= t_tol:
            v = m.v_m.copy()
            break
    return NominalState(q=euler_to_quat(roll, pitch, 0.0), v=v)


def perturbed_init(truth0, P0, rng, bg=None, ba=None):
    """Initial estimate ``x_hat`` with ``x_true = x_hat (+) dx`` and ``dx ~ N(0, P0)``."""
    dx = rng.multivariate_normal(np.zeros(12), P0, method="cholesky")
    q = quat_mult(quat_conj(small_angle_quat(dx[0:3])), truth0.q)
    bg = np.zeros(3) if bg is None else bg
    ba = np.zeros(3) if ba is None else ba
    return NominalState(q=q, v=truth0.v - dx[3:6], bg=bg - dx[6:9], ba=ba - dx[9:12])


@dataclass
class SimData:
    truth: list
    imu: list
    bg: np.ndarray
    ba: np.ndarray
    radar: list
    detections: list = field(default_factory=list)


def simulate(sc, detections=False):
    truth = generate_truth(sc)
    imu, bg, ba = simulate_imu(truth, sc, return_bias=True)
    radar = simulate_velocity_measurements(truth, sc)
    dets = simulate_detections(truth, sc) if detections else []
    return SimData(truth, imu, bg, ba, radar, dets)


@dataclass
class RunResult:
    seed: int
    t: np.ndarray
    est_v: np.ndarray
    P_vv: np.ndarray
    gt_v: np.ndarray
    nis: np.ndarray
    records: Optional[list] = None


def run_one(sc, cfg, keep_records=False):
    """Simulate one seeded scenario and filter it from a P0-consistent initial estimate."""
    data = simulate(sc)
    rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 0x5EED]))
    x0 = perturbed_init(data.truth[0], cfg.P0, rng, data.bg[0], data.ba[0])
    recs = run_filter(data.imu, data.radar, sc.extrinsics, cfg, x0=x0)
    t = np.array([r.t for r in recs])
    est_v = np.array([r.state.v for r in recs])
    P_vv = np.array([r.P[VEL, VEL] for r in recs])
    gt_v = np.array([g.v for g in data.truth])
    nis = np.array([r.report.nis for r in recs if r.report is not None])
    return RunResult(sc.seed, t, est_v, P_vv, gt_v, nis, recs if keep_records else None)


def thread_count(default=None):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default or (os.cpu_count() or 1)


def monte_carlo(sc, cfg, n_runs, seed0=0, threads=None, alpha=0.05):
    """Run ``n_runs`` seeded scenarios (seeds ``seed0 .. seed0+n-1``) and reduce in seed order."""
    seeds = [seed0 + i for i in range(n_runs)]
    workers = threads or thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda s: run_one(sc.with_seed(s), cfg), seeds))
    else:
        results = [run_one(sc.with_seed(s), cfg) for s in seeds]
    results.sort(key=lambda r: r.seed)
    stats = compute_nees([(r.est_v, r.P_vv, r.gt_v) for r in results],
                         nis=[r.nis for r in results], alpha=alpha)
    return stats, results
