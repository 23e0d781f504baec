"""Arm-down calibration: mounting offsets, heading, pressure and height references."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import geom
from ..wire import DeviceKind, SensorFrame

MAX_SPREAD_DEG = 10.0
MIN_CAPTURE_S = 1.0

KIND_KEYS = {DeviceKind.WATCH: "watch", DeviceKind.PHONE_UPPER_ARM: "upper_arm", DeviceKind.PHONE_POCKET: "pocket"}


class CalibrationError(ValueError):
    pass


class CalibrationUnstableError(CalibrationError):
    def __init__(self, device: DeviceKind, spread_deg: float):
        super().__init__(f"{KIND_KEYS[device]} orientation spread {spread_deg:.2f} deg exceeds {MAX_SPREAD_DEG:g} deg")
        self.device = device
        self.spread_deg = spread_deg


class Posture(enum.Enum):
    ARM_DOWN = "ArmDown"


# segment orientation each device rides in the posture, in the calibrated frame
_POSTURE_SEGMENTS = {Posture.ARM_DOWN: geom.IDENTITY}


@dataclass(frozen=True)
class CalibrationOffsets:
    """Everything needed to turn raw device orientations into calibrated segment orientations.

    ``mounts[kind]`` maps sensor-frame vectors into the segment frame, so the
    calibrated segment orientation is ``heading * q_device * conj(mount)``.
    ``heading`` rotates the devices' shared world frame onto the calibrated
    one (X forward at calibration time).
    """

    mounts: Mapping[DeviceKind, np.ndarray]
    heading: np.ndarray = field(default_factory=lambda: geom.IDENTITY.copy())
    ref_pressure_hpa: float = 1013.25
    ref_wrist_height_m: float = -0.08
    spread_deg: Mapping[DeviceKind, float] = field(default_factory=dict)

    def __post_init__(self):
        for q in (*self.mounts.values(), self.heading):
            geom.check_unit(q, 1e-6)
        if not math.isfinite(self.ref_pressure_hpa):
            raise CalibrationError("reference pressure must be finite")

    @classmethod
    def identity(cls, body: geom.BodyMeasurements | None = None, ref_pressure_hpa: float = 1013.25):
        return cls({k: geom.IDENTITY.copy() for k in DeviceKind}, geom.IDENTITY.copy(), ref_pressure_hpa,
                   rest_wrist_height(body))

    def segment(self, kind: DeviceKind, q_device) -> np.ndarray:
        """Calibrated segment orientation from raw device orientation(s), sign-canonical (w >= 0)."""
        if kind not in self.mounts:
            raise CalibrationError(f"no calibration for {KIND_KEYS[kind]}")
        q = geom.quat_mul(geom.quat_mul(self.heading, geom.quat_normalize(q_device)), geom.quat_conj(self.mounts[kind]))
        return np.where(q[..., :1] < 0, -q, q)


def rest_wrist_height(body: geom.BodyMeasurements | None = None) -> float:
    body = body or geom.BodyMeasurements()
    return float(geom.forward_kinematics(geom.IDENTITY, geom.IDENTITY, None, body).wrist[2])


def quat_average(qs: np.ndarray) -> np.ndarray:
    """Chordal mean of hemisphere-aligned unit quaternions."""
    qs = geom.quat_normalize(np.asarray(qs, dtype=float))
    aligned = geom.hemisphere_align(qs, qs[0])
    return geom.quat_normalize(aligned.mean(axis=0))


def _as_arrays(frames) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    if hasattr(frames, "orientation"):  # DeviceStream
        return frames.timestamp_us, np.asarray(frames.orientation), frames.pressure
    frames = list(frames)
    if not frames:
        return np.zeros(0), np.zeros((0, 4)), None
    ts = np.array([f.timestamp_us for f in frames], dtype=np.int64)
    q = np.array([f.orientation for f in frames], dtype=float)
    p = None if frames[0].pressure_hpa is None else np.array([f.pressure_hpa for f in frames], dtype=float)
    return ts, q, p


def capture_seconds(ts: np.ndarray) -> float:
    if len(ts) < 2:
        return 0.0
    return float(ts[-1] - ts[0] + np.median(np.diff(ts))) * 1e-6


def calibrate(frames: Mapping[DeviceKind, Sequence[SensorFrame]], posture: Posture = Posture.ARM_DOWN,
              body: geom.BodyMeasurements | None = None, max_spread_deg: float = MAX_SPREAD_DEG,
              min_seconds: float = MIN_CAPTURE_S) -> CalibrationOffsets:
    """Calibrate from frames captured while the user holds ``posture``.

    ``frames`` maps each participating device to its recent frames (or a
    simulator ``DeviceStream``); the watch is mandatory.
    """
    if DeviceKind.WATCH not in frames:
        raise CalibrationError("calibration needs the watch")
    segment = _POSTURE_SEGMENTS[posture]
    means, spreads = {}, {}
    pressure = None
    for kind, dev_frames in frames.items():
        ts, q, p = _as_arrays(dev_frames)
        if capture_seconds(ts) < min_seconds - 1e-9:
            raise CalibrationError(f"{KIND_KEYS[kind]}: {capture_seconds(ts):.2f} s captured, need {min_seconds:g} s")
        mean = quat_average(q)
        spread = float(np.degrees(np.max(geom.quat_geodesic_angle(geom.quat_normalize(q), mean))))
        if spread > max_spread_deg:
            raise CalibrationUnstableError(kind, spread)
        means[kind] = mean
        spreads[kind] = spread
        if kind == DeviceKind.WATCH:
            pressure = p
    if pressure is None:
        raise CalibrationError("watch frames carry no pressure")
    heading = geom.yaw_quat(-geom.yaw_of(means[DeviceKind.WATCH]))
    mounts = {}
    for kind, mean in means.items():
        m = geom.quat_mul(geom.quat_conj(segment), geom.quat_mul(heading, mean))
        mounts[kind] = m if m[0] >= 0 else -m
    return CalibrationOffsets(mounts, heading, float(np.mean(pressure)), rest_wrist_height(body), spreads)


# key,value file

def _fmt(x: float) -> str:
    return repr(float(x))


def save_calibration(calib: CalibrationOffsets, path) -> None:
    lines = ["key,value"]
    lines += [f"heading_q{c},{_fmt(v)}" for c, v in zip("wxyz", calib.heading)]
    for kind in DeviceKind:
        if kind in calib.mounts:
            lines += [f"{KIND_KEYS[kind]}_mount_q{c},{_fmt(v)}" for c, v in zip("wxyz", calib.mounts[kind])]
    lines.append(f"ref_pressure_hpa,{_fmt(calib.ref_pressure_hpa)}")
    lines.append(f"ref_wrist_height_m,{_fmt(calib.ref_wrist_height_m)}")
    for kind in DeviceKind:
        if kind in calib.spread_deg:
            lines.append(f"{KIND_KEYS[kind]}_spread_deg,{_fmt(calib.spread_deg[kind])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration(path) -> CalibrationOffsets:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line == "key,value":
            continue
        key, sep, value = line.partition(",")
        if not sep:
            raise CalibrationError(f"{path}:{lineno}: expected key,value")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise CalibrationError(f"{path}:{lineno}: {key} has non-numeric value {value!r}") from None

    def quat(prefix):
        try:
            return np.array([values[f"{prefix}_q{c}"] for c in "wxyz"])
        except KeyError as e:
            raise CalibrationError(f"{path}: missing key {e.args[0]}") from None

    mounts = {kind: quat(f"{name}_mount") for kind, name in KIND_KEYS.items() if f"{name}_mount_qw" in values}
    if DeviceKind.WATCH not in mounts:
        raise CalibrationError(f"{path}: missing key watch_mount_qw")
    for key in ("ref_pressure_hpa", "ref_wrist_height_m"):
        if key not in values:
            raise CalibrationError(f"{path}: missing key {key}")
    spreads = {kind: values[f"{name}_spread_deg"] for kind, name in KIND_KEYS.items() if f"{name}_spread_deg" in values}
    return CalibrationOffsets(mounts, quat("heading"), values["ref_pressure_hpa"], values["ref_wrist_height_m"],
                              spreads)
