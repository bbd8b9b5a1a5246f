"""Quaternion and small-matrix algebra.

Quaternions are numpy arrays ``[w, x, y, z]`` (scalar first, Hamilton
product). ``q`` is read as the attitude of the IMU in the world frame:
``quat_to_rot(q) @ v_body`` gives the vector in world coordinates.
"""
import math

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v):
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(S):
    """Inverse of :func:`skew` (uses the antisymmetric part of ``S``)."""
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def omega_matrix(w):
    """4x4 matrix with ``omega_matrix(w) @ q == q (x) [0, w]``."""
    wx, wy, wz = w
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def quat_derivative(q, w):
    """Time derivative ``0.5 * Omega(w) q`` for body rate ``w`` (not renormalized)."""
    return 0.5 * omega_matrix(w) @ np.asarray(q, dtype=float)


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize quaternion %r" % (q,))
    return q / n


def quat_mult(p, q):
    """Hamilton product ``p (x) q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q):
    w, x, y, z = q
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


def quat_rotate(q, v):
    """Rotate ``v`` by ``q`` using the sandwich product ``q (x) [0, v] (x) q*``."""
    p = quat_mult(quat_mult(q, np.array([0.0, v[0], v[1], v[2]])), quat_conj(q))
    return p[1:]


def quat_exp(phi):
    """Unit quaternion for the rotation vector ``phi`` (axis * angle)."""
    phi = np.asarray(phi, dtype=float)
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    half = 0.5 * angle
    if angle < 1e-8:
        # Taylor terms keep full precision near zero.
        s = 0.5 - angle * angle / 48.0
        c = 1.0 - angle * angle / 8.0
    else:
        s = math.sin(half) / angle
        c = math.cos(half)
    return quat_normalize(np.array([c, s * phi[0], s * phi[1], s * phi[2]]))


def quat_log(q):
    """Rotation vector of ``q``, using the shorter of ``q`` and ``-q``."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n < 1e-12:
        return 2.0 * v / q[0]
    return 2.0 * math.atan2(n, q[0]) * v / n


def integrate_quat(q, w, dt):
    """Advance ``q`` by the constant body rate ``w`` over ``dt`` (exact exponential)."""
    return quat_normalize(quat_mult(q, quat_exp(np.asarray(w, dtype=float) * dt)))


def small_angle_quat(dtheta):
    """Quaternion ``exp(dtheta / 2)`` used to inject an attitude error."""
    return quat_exp(dtheta)


def rot_to_quat(R):
    """Rotation matrix to quaternion (Shepperd's method, ``w >= 0``)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0.0 else q


def attitude_error(q_true, q_est):
    """Left (world-frame) attitude error angle vector with ``q_true = exp(e) (x) q_est``."""
    return quat_log(quat_mult(q_true, quat_conj(q_est)))
