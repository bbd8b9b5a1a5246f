"""Ground-truth scenarios and synthetic IMU / radar streams.

Truth is closed form: every profile gives velocity, acceleration, ZYX Euler
angles and their rates analytically, so no finite differences enter the
truth. All random streams derive from ``Scenario.seed`` through independent
``SeedSequence`` children.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .doppler import RadarDetection
from .errors import UnknownProfile
from .fusion import Extrinsics, VelocityMeasurement, measurement_predict
from .geom import quat_mult, quat_to_rot
from .inertial import ImuNoiseParams, ImuSample, NominalState, gravity_enu

PROFILES = ("constant_velocity", "sinusoid", "figure_eight")

_DEFAULT_TRAJ = {
    "constant_velocity": {"velocity": [1.0, 0.0, 0.0], "euler": [0.0, 0.0, 0.0]},
    "sinusoid": {
        "amplitude": [0.5, 0.3, 0.1],
        "period": [60.0, 45.0, 30.0],
        "offset": [0.0, 0.0, 0.0],
        "euler": [0.0, 0.0, 0.0],
        "yaw_rate": 0.05,
    },
    "figure_eight": {
        "speed_mean": 1.5,
        "speed_amp": 0.5,
        "speed_period": 17.0,
        "yaw_amp": 2.0,
        "yaw_period": 20.0,
        "roll_amp": 0.15,
        "roll_period": 7.0,
        "pitch_amp": 0.12,
        "pitch_period": 9.0,
        "vz_amp": 0.2,
        "vz_period": 11.0,
    },
}


@dataclass(frozen=True)
class Scenario:
    duration: float = 60.0
    imu_rate: float = 100.0
    radar_rate: float = 5.0
    profile: str = "figure_eight"
    trajectory: dict = field(default_factory=dict)
    true_bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    true_ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise: ImuNoiseParams = field(default_factory=ImuNoiseParams.default)
    radar_sigma: np.ndarray = field(default_factory=lambda: 0.1 ** 2 * np.eye(3))
    extrinsics: Extrinsics = field(default_factory=lambda: Extrinsics(lever_arm=[0.15, 0.05, 0.2]))
    n_static_targets: int = 40
    n_dynamic_targets: int = 0
    det_noise: float = 0.05  # m/s on each radial velocity
    sigma_report_scale: float = 1.0
    # (t_start, t_end, factor): noise covariance and reported sigma both scaled
    sigma_windows: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise UnknownProfile("unknown trajectory profile %r" % self.profile)
        if not (self.duration > 0 and self.imu_rate > 0 and self.radar_rate > 0):
            raise ValueError("duration and rates must be positive")
        if self.radar_rate > self.imu_rate:
            raise ValueError("radar_rate must not exceed imu_rate")
        unknown = set(self.trajectory) - set(_DEFAULT_TRAJ[self.profile])
        if unknown:
            raise ValueError("unknown %s parameters: %s" % (self.profile, sorted(unknown)))
        for name in ("true_bg", "true_ba"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        rs = np.asarray(self.radar_sigma, dtype=float)
        if rs.ndim == 1:
            rs = np.diag(rs)
        object.__setattr__(self, "radar_sigma", rs.reshape(3, 3))
        object.__setattr__(self, "sigma_windows", tuple(tuple(w) for w in self.sigma_windows))

    @property
    def traj_params(self):
        p = dict(_DEFAULT_TRAJ[self.profile])
        p.update(self.trajectory)
        return p

    @property
    def dt(self):
        return 1.0 / self.imu_rate

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        traj = dict(d.pop("trajectory", {}))
        profile = traj.pop("profile", d.pop("profile", "figure_eight"))
        kw = {"profile": profile, "trajectory": traj}
        if "noise" in d:
            kw["noise"] = ImuNoiseParams(**d.pop("noise"))
        if "extrinsics" in d:
            kw["extrinsics"] = Extrinsics(**d.pop("extrinsics"))
        if "sigma_windows" in d:
            kw["sigma_windows"] = tuple(tuple(w) for w in d.pop("sigma_windows"))
        kw.update(d)
        return cls(**kw)


@dataclass(frozen=True)
class GroundTruthSample:
    t: float
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray  # body rate, rad/s
    accel_world: np.ndarray  # dv/dt, m/s^2

    def state(self, bg=None, ba=None):
        return NominalState(q=self.q, v=self.v,
                            bg=np.zeros(3) if bg is None else bg,
                            ba=np.zeros(3) if ba is None else ba)


def _sin(amp, period, t):
    w = 2.0 * math.pi / period
    return amp * math.sin(w * t), amp * w * math.cos(w * t)


def _profile_eval(profile, p, t):
    """(v, a, euler=(roll, pitch, yaw), euler rates) at time t."""
    if profile == "constant_velocity":
        e = np.asarray(p["euler"], dtype=float)
        return np.asarray(p["velocity"], dtype=float), np.zeros(3), e, np.zeros(3)
    if profile == "sinusoid":
        v, a = np.zeros(3), np.zeros(3)
        for i in range(3):
            w = 2.0 * math.pi / p["period"][i]
            v[i] = p["offset"][i] + p["amplitude"][i] * math.sin(w * t)
            a[i] = p["amplitude"][i] * w * math.cos(w * t)
        e0 = np.asarray(p["euler"], dtype=float)
        e = e0 + np.array([0.0, 0.0, p["yaw_rate"] * t])
        return v, a, e, np.array([0.0, 0.0, p["yaw_rate"]])
    if profile == "figure_eight":
        s, sd = _sin(p["speed_amp"], p["speed_period"], t)
        s += p["speed_mean"]
        psi, psid = _sin(p["yaw_amp"], p["yaw_period"], t)
        phi, phid = _sin(p["roll_amp"], p["roll_period"], t)
        th, thd = _sin(p["pitch_amp"], p["pitch_period"], t)
        vz, az = _sin(p["vz_amp"], p["vz_period"], t)
        c, sn = math.cos(psi), math.sin(psi)
        v = np.array([s * c, s * sn, vz])
        a = np.array([sd * c - s * psid * sn, sd * sn + s * psid * c, az])
        return v, a, np.array([phi, th, psi]), np.array([phid, thd, psid])
    raise UnknownProfile("unknown trajectory profile %r" % profile)


def euler_to_quat(roll, pitch, yaw):
    """ZYX Euler angles to quaternion: ``q = qz(yaw) (x) qy(pitch) (x) qx(roll)``."""
    qx = np.array([math.cos(roll / 2), math.sin(roll / 2), 0.0, 0.0])
    qy = np.array([math.cos(pitch / 2), 0.0, math.sin(pitch / 2), 0.0])
    qz = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
    return quat_mult(qz, quat_mult(qy, qx))


def euler_rates_to_body(euler, rates):
    phi, th, _ = euler
    phid, thd, psid = rates
    return np.array([
        phid - psid * math.sin(th),
        thd * math.cos(phi) + psid * math.sin(phi) * math.cos(th),
        -thd * math.sin(phi) + psid * math.cos(phi) * math.cos(th),
    ])


def sample_times(sc):
    n = int(round(sc.duration * sc.imu_rate))
    return np.arange(n + 1) / sc.imu_rate


def generate_truth(sc):
    p = sc.traj_params
    out = []
    for t in sample_times(sc):
        v, a, e, ed = _profile_eval(sc.profile, p, float(t))
        out.append(GroundTruthSample(t=float(t), q=euler_to_quat(*e), v=v,
                                     omega=euler_rates_to_body(e, ed), accel_world=a))
    return out


def _rngs(sc):
    children = np.random.SeedSequence(sc.seed).spawn(4)
    return [np.random.default_rng(c) for c in children]


def true_bias_tracks(truth, sc):
    """Bias random-walk realizations ``(bg[k], ba[k])`` shared by :func:`simulate_imu`."""
    n = len(truth)
    rng = _rngs(sc)[3]
    dt = sc.dt
    steps_g = rng.standard_normal((n, 3)) * sc.noise.sigma_bg * math.sqrt(dt)
    steps_a = rng.standard_normal((n, 3)) * sc.noise.sigma_ba * math.sqrt(dt)
    steps_g[0] = 0.0
    steps_a[0] = 0.0
    bg = sc.true_bg + np.cumsum(steps_g, axis=0)
    ba = sc.true_ba + np.cumsum(steps_a, axis=0)
    return bg, ba


def simulate_imu(truth, sc, return_bias=False):
    """Gyro/accel samples inverting the strapdown model, with seeded noise."""
    rng = _rngs(sc)[0]
    dt = sc.dt
    n = len(truth)
    ng = rng.standard_normal((n, 3)) * sc.noise.sigma_g / math.sqrt(dt)
    na = rng.standard_normal((n, 3)) * sc.noise.sigma_a / math.sqrt(dt)
    bg, ba = true_bias_tracks(truth, sc)
    g = gravity_enu()
    samples = []
    for k, gt in enumerate(truth):
        R = quat_to_rot(gt.q)
        gyro = gt.omega + bg[k] + ng[k]
        accel = R.T @ (gt.accel_world + g) + ba[k] + na[k]
        samples.append(ImuSample(t=gt.t, gyro=gyro, accel=accel))
    if return_bias:
        return samples, bg, ba
    return samples


def radar_indices(truth, sc):
    """IMU sample indices nearest to each radar frame time."""
    n_frames = int(math.floor(sc.duration * sc.radar_rate + 1e-9)) + 1
    idx = np.round(np.arange(n_frames) * sc.imu_rate / sc.radar_rate).astype(int)
    return idx[idx < len(truth)]


def _sigma_scale(sc, t):
    f = 1.0
    for t0, t1, factor in sc.sigma_windows:
        if t0 <= t < t1:
            f *= factor
    return f


def simulate_velocity_measurements(truth, sc):
    """World-frame radar-origin velocities at the radar rate with Gaussian noise."""
    rng = _rngs(sc)[1]
    idx = radar_indices(truth, sc)
    # an all-zero radar_sigma means noise-free measurements
    L = np.linalg.cholesky(sc.radar_sigma) if sc.radar_sigma.any() else np.zeros((3, 3))
    z = rng.standard_normal((len(idx), 3))
    out = []
    for j, k in enumerate(idx):
        gt = truth[k]
        f = _sigma_scale(sc, gt.t)
        v = measurement_predict(gt.state(), gt.omega, sc.extrinsics) + math.sqrt(f) * (L @ z[j])
        out.append(VelocityMeasurement(t=gt.t, v_m=v, sigma_m=sc.radar_sigma * f * sc.sigma_report_scale))
    return out


def radar_frame_velocity(gt, ex):
    """Velocity of the radar origin expressed in the radar frame."""
    v_w = measurement_predict(gt.state(), gt.omega, ex)
    return quat_to_rot(ex.q_RI).T @ (quat_to_rot(gt.q).T @ v_w)


def _random_directions(rng, n, max_az=math.radians(60), max_el=math.radians(30)):
    az = rng.uniform(-max_az, max_az, n)
    el = rng.uniform(-max_el, max_el, n)
    d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def simulate_detections(truth, sc):
    """Per radar frame, static and dynamic Doppler detections in the radar frame.

    Static targets give ``v_r = -d . v_radar``; each dynamic target adds its
    own projected velocity of magnitude 1 to 3 m/s. The first
    ``n_static_targets`` detections of a frame are the static ones.
    """
    if sc.n_static_targets < 3:
        raise ValueError("need at least 3 static targets")
    rng = _rngs(sc)[2]
    ns, nd = sc.n_static_targets, sc.n_dynamic_targets
    frames = []
    for k in radar_indices(truth, sc):
        gt = truth[k]
        v_radar = radar_frame_velocity(gt, sc.extrinsics)
        d = _random_directions(rng, ns + nd)
        vr = -d @ v_radar
        if nd:
            own = rng.uniform(1.0, 3.0, nd) * rng.choice([-1.0, 1.0], nd)
            vr[ns:] += own
        if sc.det_noise > 0:
            vr = vr + sc.det_noise * rng.standard_normal(ns + nd)
        frames.append((gt.t, [RadarDetection(dir=d[i], v_r=float(vr[i])) for i in range(ns + nd)]))
    return frames
