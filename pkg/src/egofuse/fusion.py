"""Error-state EKF fusing IMU propagation with 3D velocity measurements.

Error state (12): ``[dtheta, dv, dbg, dba]``. The attitude error is applied on
the left in the world frame, ``q = exp(dtheta) (x) q_hat``; the others are
additive. Measurements are world-frame velocities of the radar origin.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.stats import chi2

from .errors import NonMonotoneTime, NotSPD, StaleMeasurement
from .geom import IDENTITY_QUAT, quat_mult, quat_to_rot, skew, small_angle_quat
from .inertial import STANDARD_GRAVITY, ImuNoiseParams, NominalState, check_dt, propagate_nominal

N_ERR = 12
ATT, VEL, BG, BA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)

DEFAULT_GATE_CHI2 = float(chi2.ppf(0.999, 3))
MEASUREMENT_MAX_AGE = 0.05  # s


@dataclass(frozen=True)
class VelocityMeasurement:
    t: float
    v_m: np.ndarray
    sigma_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_m", np.asarray(self.v_m, dtype=float).reshape(3))
        object.__setattr__(self, "sigma_m", np.asarray(self.sigma_m, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class Extrinsics:
    """Radar mounting. ``lever_arm`` is the radar origin in the IMU frame,
    ``q_RI`` rotates radar-frame vectors into the IMU frame."""

    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_RI: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(self, "lever_arm", np.asarray(self.lever_arm, dtype=float).reshape(3))
        q = np.asarray(self.q_RI, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("q_RI must be a unit quaternion")
        object.__setattr__(self, "q_RI", q)


def default_P0():
    return np.diag(np.repeat([0.02 ** 2, 0.1 ** 2, 0.01 ** 2, 0.1 ** 2], 3))


@dataclass(frozen=True)
class FilterConfig:
    P0: np.ndarray = field(default_factory=default_P0)
    noise: ImuNoiseParams = field(default_factory=ImuNoiseParams.default)
    r_floor: float = 1e-6
    gate_chi2: float = DEFAULT_GATE_CHI2
    use_predicted_sigma: bool = True
    # measurement covariance when the reported sigma is ignored
    r_fixed: np.ndarray = field(default_factory=lambda: 0.1 ** 2 * np.eye(3))
    gravity: float = STANDARD_GRAVITY

    def __post_init__(self):
        P0 = np.asarray(self.P0, dtype=float)
        if P0.shape != (N_ERR, N_ERR):
            raise ValueError("P0 must be 12x12")
        if np.linalg.eigvalsh(0.5 * (P0 + P0.T)).min() < -1e-9:
            raise ValueError("P0 must be positive semi-definite")
        if not self.gate_chi2 > 0:
            raise ValueError("gate_chi2 must be positive")
        if not self.r_floor >= 0:
            raise ValueError("r_floor must be >= 0")
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "r_fixed", np.asarray(self.r_fixed, dtype=float).reshape(3, 3))


@dataclass
class UpdateReport:
    t: float
    innovation: np.ndarray
    S: np.ndarray
    nis: float
    accepted: bool
    gain: Optional[np.ndarray] = None

    @property
    def gain_norm(self):
        return float(np.linalg.norm(self.gain)) if self.gain is not None else float("nan")


@dataclass
class FilterRecord:
    t: float
    state: NominalState
    P: np.ndarray
    report: Optional[UpdateReport] = None


def process_jacobian(s, u, R=None):
    """Continuous-time error dynamics matrix F at state ``s`` and IMU sample ``u``."""
    if R is None:
        R = quat_to_rot(s.q)
    F = np.zeros((N_ERR, N_ERR))
    F[ATT, BG] = -R
    F[VEL, ATT] = -skew(R @ (u.accel - s.ba))
    F[VEL, BA] = -R
    return F


def noise_jacobian(s, R=None):
    """Block-diagonal map ``[R, I, I, I]`` from ``[n_g, n_a, w_bg, w_ba]`` to the error state."""
    L = np.eye(N_ERR)
    L[ATT, ATT] = quat_to_rot(s.q) if R is None else R
    return L


def symmetrize(P):
    return 0.5 * (P + P.T)


_I12 = np.eye(N_ERR)


def predict(s, P, u, dt, cfg):
    """Propagate nominal state and error covariance over one IMU interval.

    ``P <- Phi P Phi^T + L Qd L^T`` with ``Phi = I + F dt`` and
    ``Qd = diag(psd) dt``.
    """
    check_dt(dt)
    R = quat_to_rot(s.q)
    Phi = _I12 + process_jacobian(s, u, R) * dt
    L = noise_jacobian(s, R)
    Qd = cfg.noise.psd_diagonal() * dt
    P_new = Phi @ P @ Phi.T + (L * Qd) @ L.T
    g = np.array([0.0, 0.0, cfg.gravity])
    return propagate_nominal(s, u, dt, gravity=g, R=R), symmetrize(P_new)


def measurement_predict(s, u_gyro, ex):
    """World-frame radar-origin velocity ``v + R (w x lever_arm)``; ``u_gyro`` is bias corrected."""
    return s.v + quat_to_rot(s.q) @ np.cross(u_gyro, ex.lever_arm)


def measurement_jacobian(s, u_gyro, ex):
    """3x12 Jacobian of :func:`measurement_predict` with respect to the error state.

    The attitude block is ``-[R (w x p)]x`` and the gyro-bias block ``R [p]x``
    (the bias enters through ``w = gyro - bg``).
    """
    R = quat_to_rot(s.q)
    H = np.zeros((3, N_ERR))
    H[:, ATT] = -skew(R @ np.cross(u_gyro, ex.lever_arm))
    H[:, VEL] = np.eye(3)
    H[:, BG] = R @ skew(ex.lever_arm)
    return H


def _cholesky(A, what):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NotSPD("%s is not symmetric positive definite" % what) from None


def adaptive_R(m, cfg):
    """Measurement covariance for one update.

    With ``use_predicted_sigma`` the reported covariance is used with its
    diagonal floored at ``r_floor``; otherwise the fixed ``r_fixed``.
    """
    if not cfg.use_predicted_sigma:
        return cfg.r_fixed.copy()
    sigma = symmetrize(m.sigma_m)
    _cholesky(sigma, "measurement covariance")
    R = sigma.copy()
    d = np.diag(R)
    R[np.diag_indices(3)] = np.maximum(d, cfg.r_floor)
    return R


def inject_error(s, dx):
    """Apply an error-state correction to the nominal state."""
    q = quat_mult(small_angle_quat(dx[ATT]), s.q)
    return NominalState(q=q, v=s.v + dx[VEL], bg=s.bg + dx[BG], ba=s.ba + dx[BA])


def update(s, P, m, u_gyro, ex, cfg, t=None):
    """Velocity update with chi-square gating and Joseph-form covariance.

    ``u_gyro`` is the bias-corrected body rate at the measurement time. When
    ``t`` (the current filter time) is given, the measurement must be within
    50 ms of it.
    """
    if t is not None and abs(m.t - t) > MEASUREMENT_MAX_AGE:
        raise StaleMeasurement("measurement at t=%.3f applied at t=%.3f" % (m.t, t))
    t_report = m.t if t is None else t
    H = measurement_jacobian(s, u_gyro, ex)
    Rk = adaptive_R(m, cfg)
    nu = m.v_m - measurement_predict(s, u_gyro, ex)
    PHt = P @ H.T
    S = symmetrize(H @ PHt + Rk)
    Lc = _cholesky(S, "innovation covariance")
    w = np.linalg.solve(Lc, nu)
    nis = float(w @ w)
    if nis > cfg.gate_chi2:
        return s, P, UpdateReport(t_report, nu, S, nis, False)
    # K = P H^T S^-1 via the Cholesky factor
    K = np.linalg.solve(Lc.T, np.linalg.solve(Lc, PHt.T)).T
    dx = K @ nu
    A = _I12 - K @ H
    P_new = symmetrize(A @ P @ A.T + K @ Rk @ K.T)
    return inject_error(s, dx), P_new, UpdateReport(t_report, nu, S, nis, True, K)


def run_filter(imu, radar, ex, cfg, x0=None, P0=None) -> List[FilterRecord]:
    """Run the filter over time-sorted IMU and velocity-measurement streams.

    The state is predicted at every IMU sample, holding each sample over the
    interval that follows it. A measurement is applied at the first IMU
    sample whose timestamp is at or past the measurement time, using that
    sample's gyro reading for the lever-arm term. One record per IMU sample.
    Measurements older than the first IMU sample are skipped.
    """
    imu = list(imu)
    radar = list(radar)
    if not imu:
        return []
    _check_sorted([u.t for u in imu], strict=True, what="IMU")
    _check_sorted([m.t for m in radar], strict=False, what="radar")
    s = NominalState() if x0 is None else x0
    P = cfg.P0.copy() if P0 is None else np.asarray(P0, dtype=float).copy()
    j = 0
    while j < len(radar) and radar[j].t < imu[0].t - MEASUREMENT_MAX_AGE:
        j += 1
    records = []
    prev = None
    for u in imu:
        if prev is not None:
            s, P = predict(s, P, prev, u.t - prev.t, cfg)
        report = None
        while j < len(radar) and radar[j].t <= u.t:
            s, P, report = update(s, P, radar[j], u.gyro - s.bg, ex, cfg, t=u.t)
            j += 1
        records.append(FilterRecord(u.t, s, P, report))
        prev = u
    return records


def _check_sorted(ts, strict, what):
    ts = np.asarray(ts, dtype=float)
    if ts.size < 2:
        return
    d = np.diff(ts)
    bad = (d <= 0) if strict else (d < 0)
    if bad.any():
        raise NonMonotoneTime("%s timestamps are not increasing" % what)
