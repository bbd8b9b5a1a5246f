"""Strapdown propagation of the nominal state (attitude, velocity, biases)."""
from dataclasses import dataclass, field

import numpy as np

from .errors import GapTooLarge, NonMonotoneTime
from .geom import IDENTITY_QUAT, integrate_quat, quat_to_rot

STANDARD_GRAVITY = 9.80665
MAX_IMU_GAP = 0.1  # s


def _vec3(v):
    return np.asarray(v, dtype=float).reshape(3)


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray  # rad/s, body frame
    accel: np.ndarray  # m/s^2, specific force, body frame

    def __post_init__(self):
        object.__setattr__(self, "gyro", _vec3(self.gyro))
        object.__setattr__(self, "accel", _vec3(self.accel))


@dataclass(frozen=True)
class ImuNoiseParams:
    """Continuous-time noise densities.

    sigma_g  : gyro white noise, rad/s/sqrt(Hz)
    sigma_a  : accel white noise, m/s^2/sqrt(Hz)
    sigma_bg : gyro bias random walk, rad/s^2/sqrt(Hz)
    sigma_ba : accel bias random walk, m/s^3/sqrt(Hz)
    """

    sigma_g: float = 0.0
    sigma_a: float = 0.0
    sigma_bg: float = 0.0
    sigma_ba: float = 0.0

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba"):
            if not getattr(self, name) >= 0.0:
                raise ValueError("%s must be >= 0" % name)

    @classmethod
    def default(cls):
        """Noise of a tactical-grade-ish MEMS unit, shared by simulator and filter defaults."""
        return cls(sigma_g=1e-3, sigma_a=2e-2, sigma_bg=1e-5, sigma_ba=1e-4)

    def psd_diagonal(self):
        """12 continuous PSD entries ordered [n_g, n_a, w_bg, w_ba]."""
        return np.repeat([self.sigma_g ** 2, self.sigma_a ** 2,
                          self.sigma_bg ** 2, self.sigma_ba ** 2], 3)


@dataclass(frozen=True)
class NominalState:
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("attitude quaternion is not unit norm")
        object.__setattr__(self, "q", q)
        for name in ("v", "bg", "ba"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    @property
    def R(self):
        return quat_to_rot(self.q)


def gravity_enu():
    """Gravity vector subtracted from the rotated specific force (ENU, up is +z)."""
    return np.array([0.0, 0.0, STANDARD_GRAVITY])


def check_dt(dt):
    if not dt > 0.0:
        raise NonMonotoneTime("non-positive time step %r" % dt)
    if dt > MAX_IMU_GAP:
        raise GapTooLarge("IMU gap %.4f s exceeds %.2f s" % (dt, MAX_IMU_GAP))


def propagate_nominal(s, u, dt, gravity=None, R=None):
    """Advance the nominal state across one IMU interval.

    Attitude uses the exact exponential of the bias-corrected rate; velocity
    is a forward Euler step with the attitude at the start of the interval.
    Biases are left untouched. ``R`` may pass in ``quat_to_rot(s.q)`` when
    the caller already has it.
    """
    check_dt(dt)
    g = gravity_enu() if gravity is None else gravity
    if R is None:
        R = quat_to_rot(s.q)
    a_world = R @ (u.accel - s.ba) - g
    q = integrate_quat(s.q, u.gyro - s.bg, dt)
    return NominalState(q=q, v=s.v + a_world * dt, bg=s.bg, ba=s.ba)
