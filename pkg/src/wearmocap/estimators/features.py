"""Per-frame feature vectors for the learned modes."""

from __future__ import annotations

import numpy as np

from .. import geom
from ..wire import DeviceKind, InvalidFrameError, Mode
from .calibration import CalibrationOffsets

WATCH_CHANNELS = 14
UPPER_ARM_CHANNELS = 24
OUTPUT_CHANNELS = 8  # q_la, q_ua

CHANNEL_NAMES = (
    ["la_qw", "la_qx", "la_qy", "la_qz", "w_gx", "w_gy", "w_gz", "w_ax", "w_ay", "w_az",
     "w_grav_x", "w_grav_y", "w_grav_z", "pressure_delta"]
    + ["ua_qw", "ua_qx", "ua_qy", "ua_qz", "p_gx", "p_gy", "p_gz", "p_ax", "p_ay", "p_az"]
)

_DOWN = np.array([0.0, 0.0, -1.0])


def channel_count(mode: Mode) -> int:
    if mode == Mode.WATCH_ONLY:
        return WATCH_CHANNELS
    if mode == Mode.UPPER_ARM:
        return UPPER_ARM_CHANNELS
    raise ValueError(f"{Mode(mode).label} mode has no learned features")


def watch_features(calib: CalibrationOffsets, orientation, gyro, accel, pressure) -> np.ndarray:
    """``(..., 14)`` watch channels from raw arrays with matching leading shapes."""
    if pressure is None:
        raise InvalidFrameError("watch frame without pressure")
    q = geom.quat_normalize(np.asarray(orientation, dtype=float))
    seg = calib.segment(DeviceKind.WATCH, q)
    gravity = geom.quat_rotate_vec(geom.quat_conj(q), np.broadcast_to(_DOWN, q.shape[:-1] + (3,)))
    delta = np.asarray(pressure, dtype=float)[..., None] - calib.ref_pressure_hpa
    return np.concatenate([seg, np.asarray(gyro, dtype=float), np.asarray(accel, dtype=float), gravity, delta],
                          axis=-1)


def phone_features(calib: CalibrationOffsets, orientation, gyro, accel) -> np.ndarray:
    seg = calib.segment(DeviceKind.PHONE_UPPER_ARM, np.asarray(orientation, dtype=float))
    return np.concatenate([seg, np.asarray(gyro, dtype=float), np.asarray(accel, dtype=float)], axis=-1)


def extract_features(watch, calib: CalibrationOffsets, mode: Mode, phone=None) -> np.ndarray:
    """Raw (un-normalised) features of one watch frame, plus the paired upper-arm phone frame when needed.

    Frames can be :class:`~wearmocap.wire.SensorFrame` objects or
    simulator ``DeviceStream`` objects (then every frame is featurised).
    """
    def arrays(f):
        if hasattr(f, "frames"):
            return f.orientation, f.gyro, f.accel, f.pressure
        return f.orientation, f.gyro, f.accel, f.pressure_hpa

    q, g, a, p = arrays(watch)
    feats = watch_features(calib, q, g, a, p)
    if Mode(mode) == Mode.UPPER_ARM:
        if phone is None:
            raise ValueError("upper-arm features need the phone frame")
        q2, g2, a2, _ = arrays(phone)
        feats = np.concatenate([feats, phone_features(calib, q2, g2, a2)], axis=-1)
    elif Mode(mode) != Mode.WATCH_ONLY:
        raise ValueError(f"{Mode(mode).label} mode has no learned features")
    return feats


def align_targets(q_la: np.ndarray, q_ua: np.ndarray, feats: np.ndarray, mode: Mode) -> np.ndarray:
    """Training targets ``[q_la, q_ua]`` on the hemispheres the network can infer from its inputs."""
    la = geom.hemisphere_align(q_la, feats[..., 0:4])
    ref = feats[..., 14:18] if Mode(mode) == Mode.UPPER_ARM else la
    ua = geom.hemisphere_align(q_ua, ref)
    return np.concatenate([la, ua], axis=-1)


def feature_statistics(features: np.ndarray, floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    flat = features.reshape(-1, features.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return mean, np.maximum(std, floor)
