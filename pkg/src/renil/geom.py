"""Quaternion algebra and frame rotations.

Quaternions are stored as float arrays ``[w, x, y, z]`` with shape ``(..., 4)``.
Every function broadcasts over leading axes.

Frame convention: an attitude quaternion ``q`` maps a device-frame vector
``v`` to the navigation frame as ``q^-1 ⊗ (0, v) ⊗ q``. Under this convention
the usual Hamilton "device to nav" quaternion is ``conj(q)``.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_UNIT_TOL = 1e-6


def as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have trailing dimension 4, got {q.shape}")
    return q


def as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise ValueError(f"vector must have trailing dimension 3, got {v.shape}")
    return v


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    a = as_quat(a)
    b = as_quat(b)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q) -> np.ndarray:
    q = as_quat(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_inverse(q) -> np.ndarray:
    q = as_quat(q)
    return quat_conjugate(q) / np.sum(q * q, axis=-1, keepdims=True)


def quat_normalize(q) -> np.ndarray:
    q = as_quat(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def _check_unit(q: np.ndarray) -> None:
    dev = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(dev > _UNIT_TOL):
        raise ValueError(f"quaternion is not unit norm (deviation {np.max(dev):.3g})")


def _pure(v: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def rotate_to_nav(q, v) -> np.ndarray:
    """Rotate device-frame vectors into the navigation frame: ``q^-1 ⊗ v ⊗ q``."""
    q = as_quat(q)
    v = as_vec3(v)
    _check_unit(q)
    out = quat_multiply(quat_multiply(quat_conjugate(q), _pure(v)), q)
    return out[..., 1:]


def rotate_to_device(q, v) -> np.ndarray:
    """Inverse of :func:`rotate_to_nav`: ``q ⊗ v ⊗ q^-1``."""
    q = as_quat(q)
    v = as_vec3(v)
    _check_unit(q)
    out = quat_multiply(quat_multiply(q, _pure(v)), quat_conjugate(q))
    return out[..., 1:]


def nav_matrix(q) -> np.ndarray:
    """3x3 matrix ``M`` with ``rotate_to_nav(q, v) == M @ v``."""
    w, x, y, z = np.moveaxis(as_quat(q), -1, 0)
    # transpose of the standard Hamilton rotation matrix of q
    m = np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)], -1),
            np.stack([2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)], -1),
            np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )
    return m


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    """Hamilton quaternion ``(cos(a/2), sin(a/2) * axis)`` for a unit-normalized axis."""
    axis = as_vec3(axis)
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis / norm], axis=-1)


def quat_to_axis_angle(q) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(axis, angle)`` with angle in ``[0, 2*pi)``; identity maps to the x axis."""
    q = quat_normalize(q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1)
    angle = 2.0 * np.arctan2(s, q[..., 0])
    safe = np.where(s > 0, s, 1.0)[..., None]
    axis = np.where(s[..., None] > 0, vec / safe, np.array([1.0, 0.0, 0.0]))
    return axis, angle


def quat_exp(rotvec) -> np.ndarray:
    """Unit quaternion of the rotation vector ``rotvec`` (axis times angle)."""
    rotvec = as_vec3(rotvec)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x, with its series near zero
    small = angle < 1e-8
    coef = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), coef * rotvec], axis=-1)


def quat_log(q) -> np.ndarray:
    """Rotation vector of a unit quaternion, taking the shorter of ``q``/``-q``."""
    q = as_quat(q)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    coef = np.where(small, 2.0 / np.maximum(q[..., :1], 1e-300), angle / np.where(small, 1.0, s))
    return coef * vec


def integrate_gyro(q, omega, dt: float) -> np.ndarray:
    """Advance attitude ``q`` by the body-frame rotation ``omega * dt`` (exact exponential map)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = as_quat(q)
    step = quat_exp(as_vec3(omega) * dt)
    return quat_normalize(quat_multiply(quat_conjugate(step), q))


def blend(q_main, q_corr, w: float) -> np.ndarray:
    """Hemisphere-aligned normalized linear interpolation ``w*q_main + (1-w)*q_corr``."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {w}")
    q_main = as_quat(q_main)
    q_corr = as_quat(q_corr)
    dot = float(np.dot(q_main, q_corr))
    if abs(dot) < 1e-6:
        raise ValueError("blend undefined for antipodal rotations")
    if dot < 0:
        q_corr = -q_corr
    return quat_normalize(w * q_main + (1.0 - w) * q_corr)


def rotation_distance(a, b) -> np.ndarray:
    """Angle in radians of the rotation taking ``a`` to ``b``; insensitive to sign."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = quat_multiply(quat_conjugate(a), b)
    return 2.0 * np.arctan2(np.linalg.norm(d[..., 1:], axis=-1), np.abs(d[..., 0]))
