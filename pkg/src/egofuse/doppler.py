"""Instantaneous ego-velocity from one scan of Doppler detections.

Static targets obey ``v_r = -d . v`` where ``d`` is the unit line-of-sight
direction (radar frame) and ``v`` the radar's own velocity, so ``v_r`` is the
range rate: negative while closing on a target.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NoConsensus, RankDeficient, TooFew
from .fusion import VelocityMeasurement
from .geom import quat_to_rot

log = logging.getLogger(__name__)

LS_VARIANCE_FLOOR = 1e-6  # (m/s)^2
_RANK_TOL = 1e-9
_MIN_SAMPLE_DET = 1e-6


@dataclass(frozen=True)
class RadarDetection:
    dir: np.ndarray
    v_r: float
    weight: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.dir, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("detection direction must be a unit vector")
        if not self.weight > 0:
            raise ValueError("detection weight must be positive")
        object.__setattr__(self, "dir", d)


@dataclass(frozen=True)
class DopplerFit:
    v: np.ndarray
    sigma: np.ndarray
    inliers: tuple
    residual_rms: float


def _arrays(dets):
    D = np.array([d.dir for d in dets], dtype=float).reshape(-1, 3)
    vr = np.array([d.v_r for d in dets], dtype=float)
    w = np.array([d.weight for d in dets], dtype=float)
    return D, vr, w


def _solve(D, vr, w, planar, s2_floor):
    p = 2 if planar else 3
    A = -D[:, :p]
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    sv = np.linalg.svd(Aw, compute_uv=False)
    if sv[-1] <= _RANK_TOL * max(sv[0], 1.0):
        raise RankDeficient("detection directions span fewer than %d dimensions" % p)
    x, *_ = np.linalg.lstsq(Aw, vr * sw, rcond=None)
    r = vr - A @ x
    n = len(vr)
    s2 = float(np.sum(w * r * r) / (n - p)) if n > p else 0.0
    s2 = max(s2, s2_floor)
    cov = s2 * np.linalg.inv(Aw.T @ Aw)
    v = np.zeros(3)
    v[:p] = x
    sigma = np.zeros((3, 3))
    sigma[:p, :p] = 0.5 * (cov + cov.T)
    if planar:
        sigma[2, 2] = np.inf
    return v, sigma, float(np.sqrt(np.mean(r * r)))


def ls_velocity(dets, planar=False, s2_floor=LS_VARIANCE_FLOOR):
    """Weighted least-squares ego-velocity.

    The covariance is ``s^2 (A^T W A)^-1`` with ``s^2`` the unbiased weighted
    residual variance, floored at ``s2_floor``. With ``planar=True`` only
    ``vx, vy`` are solved (for detections without elevation); ``v[2]`` is 0
    and ``sigma[2, 2]`` is ``inf``.
    """
    dets = list(dets)
    p = 2 if planar else 3
    if len(dets) < p:
        raise TooFew("need at least %d detections, got %d" % (p, len(dets)))
    D, vr, w = _arrays(dets)
    v, sigma, rms = _solve(D, vr, w, planar, s2_floor)
    return DopplerFit(v=v, sigma=sigma, inliers=tuple(range(len(dets))), residual_rms=rms)


def ransac_velocity(dets, iters=100, threshold=0.2, seed=0, planar=False, min_inliers=3):
    """Hypothesize-and-verify ego-velocity with a fixed iteration budget.

    Each iteration fits a minimal subset exactly and counts detections with
    ``|v_r + d . v| <= threshold``. The best hypothesis (most inliers, then
    lower inlier RMS, then earliest iteration) is refit with
    :func:`ls_velocity` on its inliers.
    """
    dets = list(dets)
    p = 2 if planar else 3
    if len(dets) < p:
        raise TooFew("need at least %d detections, got %d" % (p, len(dets)))
    if iters < 1 or not threshold > 0:
        raise ValueError("iters must be >= 1 and threshold > 0")
    D, vr, _ = _arrays(dets)
    A = -D[:, :p]
    rng = np.random.default_rng(seed)
    best = None
    for it in range(iters):
        idx = rng.choice(len(dets), size=p, replace=False)
        As = A[idx]
        if abs(np.linalg.det(As)) < _MIN_SAMPLE_DET:
            continue
        x = np.linalg.solve(As, vr[idx])
        r = np.abs(vr - A @ x)
        mask = r <= threshold
        count = int(mask.sum())
        rms = float(np.sqrt(np.mean(r[mask] ** 2))) if count else np.inf
        key = (-count, rms, it)
        if best is None or key < best[0]:
            best = (key, mask)
    if best is None or -best[0][0] < max(min_inliers, p):
        raise NoConsensus("no hypothesis gathered %d inliers" % max(min_inliers, p))
    inliers = np.flatnonzero(best[1])
    fit = ls_velocity([dets[i] for i in inliers], planar=planar)
    return DopplerFit(v=fit.v, sigma=fit.sigma, inliers=tuple(int(i) for i in inliers),
                      residual_rms=fit.residual_rms)


def to_measurement(fit, t, ex, attitude):
    """Rotate a radar-frame fit into a world-frame :class:`VelocityMeasurement`.

    The fit is the velocity of the radar origin, so no lever-arm term is
    added: ``v_world = R_WI R_IR v``.
    """
    R = quat_to_rot(attitude) @ quat_to_rot(ex.q_RI)
    sigma = R @ fit.sigma @ R.T
    if not np.all(np.isfinite(sigma)):
        raise ValueError("fit covariance is not finite (planar fit?)")
    return VelocityMeasurement(t=t, v_m=R @ fit.v, sigma_m=0.5 * (sigma + sigma.T))


def normalize_direction(d, t=None):
    """Unit-normalize a loaded direction, warning when it was off by more than 1e-6."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-6:
        log.warning("detection direction at t=%s has norm %.6f; normalizing", t, n)
    return d / n
