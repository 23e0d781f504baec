"""Independent reference computations used by the tests.

Nothing here imports from ``wearmocap``; rotations are built with the
Rodrigues formula from axis/angle pairs so that they share no code with the
quaternion path under test.
"""

import math

import numpy as np


def rodrigues(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def random_axis_angle(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-math.pi, math.pi)
    return axis, angle


def axis_angle_quat(axis, angle):
    # literal construction, independent of wearmocap.geom
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    return np.r_[math.cos(angle / 2), math.sin(angle / 2) * axis]


def fk_matrix_chain(r_hi, r_ua, r_la, upper, lower, shoulder_offset):
    down = np.array([0.0, 0.0, -1.0])
    shoulder = r_hi @ np.asarray(shoulder_offset, dtype=float)
    elbow = shoulder + r_ua @ (down * upper)
    wrist = elbow + r_la @ (down * lower)
    return shoulder, elbow, wrist


def matrix_yaw(r):
    """Heading of the rotated forward axis, straight from matrix entries."""
    return math.atan2(r[1, 0], r[0, 0])


def scalar_riccati_fixed_point(q, r):
    """Posterior variance P solving P = (P + q) r / (P + q + r) for A = H = 1."""
    return (-q + math.sqrt(q * q + 4.0 * q * r)) / 2.0


def two_pass_stats(values):
    n = len(values)
    total = 0.0
    for v in values:
        total += v
    mean = total / n
    acc = 0.0
    for v in values:
        acc += (v - mean) ** 2
    return mean, math.sqrt(acc / n)
