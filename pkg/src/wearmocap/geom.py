"""Quaternion algebra and the arm forward-kinematic chain.

Conventions
-----------
* Quaternions are ``numpy`` arrays ``[w, x, y, z]`` (Hamilton product). All
  functions broadcast over leading dimensions, so an ensemble of shape
  ``(N, 4)`` goes through the same code as a single quaternion.
* ``q`` maps body-frame vectors into the world frame: ``v_w = R(q) v_b``.
* World frame: X forward, Y left, Z up. Fixed at calibration.
* Segment orientations are absolute (world frame), not parent-relative.
* Rest pose: every bone points along -Z (arm hanging down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
UP = np.array([0.0, 0.0, 1.0])
FORWARD = np.array([1.0, 0.0, 0.0])
BONE_DIRECTION = np.array([0.0, 0.0, -1.0])

UNIT_TOLERANCE = 1e-6


class GeometryError(ValueError):
    pass


class InvalidRotationError(GeometryError):
    """Quaternion is not unit within tolerance where a rotation is required."""


class DegenerateQuaternionError(GeometryError):
    """Zero-norm quaternion where a direction is required."""


class UndefinedYawError(GeometryError):
    """Forward axis maps onto the up axis, heading is undefined."""


def as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    return q


def quat_mul(a, b) -> np.ndarray:
    a = as_quat(a)
    b = as_quat(b)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q) -> np.ndarray:
    q = as_quat(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_norm(q) -> np.ndarray:
    return np.linalg.norm(as_quat(q), axis=-1)


def quat_normalize(q) -> np.ndarray:
    q = as_quat(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0) or not np.all(np.isfinite(n)):
        raise DegenerateQuaternionError("cannot normalize a zero or non-finite quaternion")
    return q / n


def quat_inverse(q) -> np.ndarray:
    q = as_quat(q)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise DegenerateQuaternionError("zero quaternion has no inverse")
    return quat_conj(q) / n2


def check_unit(q, tol: float = UNIT_TOLERANCE) -> np.ndarray:
    q = as_quat(q)
    err = np.abs(quat_norm(q) - 1.0)
    if not np.all(err <= tol):
        raise InvalidRotationError(f"quaternion norm off unit by {np.max(err):.3g} (tolerance {tol:g})")
    return q


def quat_rotate_vec(q, v) -> np.ndarray:
    """Rotate ``v`` by unit quaternion ``q``.

    Uses the two-cross-product form ``v + 2w(u x v) + 2u x (u x v)``.
    """
    q = check_unit(q)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_matrix(q) -> np.ndarray:
    q = as_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise DegenerateQuaternionError("rotation axis has zero length")
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis / n], axis=-1)


def from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 0, angle, 1.0), 0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half), k * rv], axis=-1)


def to_rotvec(q) -> np.ndarray:
    """Rotation vector of ``q``, taking the short way round (angle <= pi)."""
    q = as_quat(q)
    q = np.where(q[..., :1] < 0, -q, q)
    vn = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vn, q[..., :1])
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(vn > 1e-12, angle / np.where(vn > 0, vn, 1.0), 2.0)
    return k * q[..., 1:]


def yaw_quat(theta) -> np.ndarray:
    """Pure rotation about the world up axis."""
    half = 0.5 * np.asarray(theta, dtype=float)
    z = np.zeros_like(half)
    return np.stack([np.cos(half), z, z, np.sin(half)], axis=-1)


def hemisphere_align(q, ref) -> np.ndarray:
    """Flip ``q`` so that ``<q, ref> >= 0``."""
    q = as_quat(q)
    dot = np.sum(q * as_quat(ref), axis=-1, keepdims=True)
    return np.where(dot < 0, -q, q)


def quat_geodesic_angle(a, b) -> np.ndarray | float:
    """Rotation angle between ``a`` and ``b`` in [0, pi]; ``q`` and ``-q`` are the same point.

    Computed as ``2 atan2(|v|, |w|)`` of the relative rotation, which stays
    accurate near zero where ``acos`` loses half the digits.
    """
    r = quat_mul(quat_conj(a), b)
    angle = 2.0 * np.arctan2(np.linalg.norm(r[..., 1:], axis=-1), np.abs(r[..., 0]))
    return float(angle) if np.ndim(angle) == 0 else angle


def slerp(a, b, t) -> np.ndarray:
    a = check_unit(a)
    b = check_unit(b)
    t = np.asarray(t, dtype=float)
    dot = np.sum(a * b, axis=-1)
    b = np.where((dot < 0)[..., None], -b, b)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-9
    safe = np.where(small, 1.0, sin_theta)
    wa = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / safe)
    wb = np.where(small, t, np.sin(t * theta) / safe)
    out = wa[..., None] * a + wb[..., None] * b
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def yaw_of(q, degenerate_tol: float = 1e-6) -> np.ndarray | float:
    """Heading of the rotated forward axis about the up axis, in (-pi, pi]."""
    f = quat_rotate_vec(q, FORWARD)
    horizontal = np.hypot(f[..., 0], f[..., 1])
    if np.any(horizontal < degenerate_tol):
        raise UndefinedYawError("forward axis is vertical, yaw undefined")
    yaw = np.arctan2(f[..., 1], f[..., 0])
    yaw = np.where(yaw <= -math.pi, math.pi, yaw)
    return float(yaw) if np.ndim(yaw) == 0 else yaw


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w <= -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class BodyMeasurements:
    upper_arm_len: float = 0.30
    lower_arm_len: float = 0.28
    shoulder_offset: tuple[float, float, float] = (0.0, 0.20, 0.50)

    def __post_init__(self):
        for name in ("upper_arm_len", "lower_arm_len"):
            value = getattr(self, name)
            if not 0.05 < value < 1.0:
                raise ValueError(f"{name}={value} m outside (0.05, 1.0)")
        if len(self.shoulder_offset) != 3 or not all(math.isfinite(c) for c in self.shoulder_offset):
            raise ValueError("shoulder_offset must be three finite components")


@dataclass(frozen=True)
class JointPositions:
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray = field(repr=True)


def fk_arrays(q_ua, q_la, q_hi, body: BodyMeasurements):
    """Vectorised forward kinematics, returns ``(shoulder, elbow, wrist)`` arrays."""
    q_hi = IDENTITY if q_hi is None else q_hi
    shoulder = quat_rotate_vec(q_hi, np.asarray(body.shoulder_offset, dtype=float))
    elbow = shoulder + quat_rotate_vec(q_ua, BONE_DIRECTION * body.upper_arm_len)
    wrist = elbow + quat_rotate_vec(q_la, BONE_DIRECTION * body.lower_arm_len)
    return shoulder, elbow, wrist


def forward_kinematics(q_ua, q_la, q_hi, body: BodyMeasurements | None = None) -> JointPositions:
    """Joint positions from absolute segment orientations.

    ``q_hi`` may be ``None`` for the identity hip (Watch Only and Upper Arm
    modes). The shoulder is the hip-frame offset carried round by the hip.
    """
    body = body or BodyMeasurements()
    shoulder, elbow, wrist = fk_arrays(q_ua, q_la, q_hi, body)
    return JointPositions(shoulder=shoulder, elbow=elbow, wrist=wrist)
