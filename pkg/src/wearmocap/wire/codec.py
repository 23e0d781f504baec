"""Binary layouts for sensor frames ("WMC1") and pose results ("WMP1").

Both layouts are little-endian with f32 payloads.

WMC1::

    magic        4s   b"WMC1"
    device_kind  u8   0 watch, 1 phone on upper arm, 2 phone in pocket
    flags        u8   bit0: pressure present
    device_id    u32
    seq          u32
    timestamp_us u64
    accel        3 x f32   m/s^2, sensor frame, gravity included
    gyro         3 x f32   rad/s, sensor frame
    orientation  4 x f32   w, x, y, z
    pressure     f32       hPa, only when flags bit0 is set

That is 62 bytes without pressure and 66 with it.

WMP1::

    magic        4s   b"WMP1"
    mode         u8   0 watch only, 1 upper arm, 2 pocket
    flags        u8   bit0: q_hi present
    timestamp_us u64
    q_la, q_ua   2 x 4 x f32
    q_hi         4 x f32   only when flags bit0 is set
    shoulder, elbow, wrist   3 x 3 x f32   metres

82 bytes without q_hi, 98 with it.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

FRAME_MAGIC = b"WMC1"
POSE_MAGIC = b"WMP1"

_FRAME_HEAD = struct.Struct("<4sBBIIQ")
_FRAME_BODY = struct.Struct("<10f")
_F32 = struct.Struct("<f")
_POSE_HEAD = struct.Struct("<4sBBQ")

FRAME_SIZE = _FRAME_HEAD.size + _FRAME_BODY.size
FRAME_SIZE_WITH_PRESSURE = FRAME_SIZE + _F32.size
POSE_SIZE = _POSE_HEAD.size + 17 * 4
POSE_SIZE_WITH_HIP = POSE_SIZE + 16

PRESSURE_RANGE_HPA = (300.0, 1200.0)
ORIENTATION_NORM_TOL = 1e-3


class WireError(ValueError):
    pass


class UnknownPacketError(WireError):
    pass


class ShortPacketError(WireError):
    pass


class InvalidFrameError(WireError):
    pass


class EncodeRejectedError(WireError):
    pass


class DeviceKind(enum.IntEnum):
    WATCH = 0
    PHONE_UPPER_ARM = 1
    PHONE_POCKET = 2


class Mode(enum.IntEnum):
    WATCH_ONLY = 0
    UPPER_ARM = 1
    POCKET = 2

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"watch": cls.WATCH_ONLY, "watch_only": cls.WATCH_ONLY, "watchonly": cls.WATCH_ONLY,
                   "upper_arm": cls.UPPER_ARM, "upperarm": cls.UPPER_ARM, "upper": cls.UPPER_ARM,
                   "pocket": cls.POCKET}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown mode {text!r}") from None

    @property
    def label(self) -> str:
        return {Mode.WATCH_ONLY: "WatchOnly", Mode.UPPER_ARM: "UpperArm", Mode.POCKET: "Pocket"}[self]


Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


@dataclass(frozen=True)
class SensorFrame:
    device_kind: DeviceKind
    device_id: int
    seq: int
    timestamp_us: int
    accel: Vec3
    gyro: Vec3
    orientation: Quat
    pressure_hpa: Optional[float] = None

    def validate(self, exc=InvalidFrameError) -> None:
        try:
            kind = DeviceKind(self.device_kind)
        except ValueError:
            raise exc(f"unknown device kind {self.device_kind!r}") from None
        if len(self.accel) != 3 or len(self.gyro) != 3 or len(self.orientation) != 4:
            raise exc("accel/gyro need 3 components and orientation 4")
        values = (*self.accel, *self.gyro, *self.orientation)
        if self.pressure_hpa is not None:
            values = values + (self.pressure_hpa,)
        if not all(math.isfinite(v) for v in values):
            raise exc("non-finite sensor value")
        norm = math.sqrt(sum(c * c for c in self.orientation))
        if abs(norm - 1.0) > ORIENTATION_NORM_TOL:
            raise exc(f"orientation norm {norm:.6f} is not unit")
        has_pressure = self.pressure_hpa is not None
        if has_pressure != (kind is DeviceKind.WATCH):
            raise exc("pressure must be present on watch frames and only there")
        if has_pressure and not PRESSURE_RANGE_HPA[0] < self.pressure_hpa < PRESSURE_RANGE_HPA[1]:
            raise exc(f"pressure {self.pressure_hpa} hPa out of range")
        for name, limit in (("device_id", 0xFFFFFFFF), ("seq", 0xFFFFFFFF), ("timestamp_us", 0xFFFFFFFFFFFFFFFF)):
            value = getattr(self, name)
            if not 0 <= value <= limit:
                raise exc(f"{name}={value} does not fit its field")

    @property
    def timestamp_s(self) -> float:
        return self.timestamp_us * 1e-6


def encode_frame(f: SensorFrame) -> bytes:
    f.validate(exc=EncodeRejectedError)
    has_pressure = f.pressure_hpa is not None
    head = _FRAME_HEAD.pack(FRAME_MAGIC, int(f.device_kind), 1 if has_pressure else 0,
                            f.device_id, f.seq, f.timestamp_us)
    try:
        body = _FRAME_BODY.pack(*f.accel, *f.gyro, *f.orientation)
        tail = _F32.pack(f.pressure_hpa) if has_pressure else b""
    except OverflowError as e:
        raise EncodeRejectedError(f"value does not fit f32: {e}") from None
    return head + body + tail


def decode_frame(data: bytes) -> SensorFrame:
    if len(data) < 4:
        raise ShortPacketError(f"{len(data)} bytes, magic incomplete")
    if data[:4] != FRAME_MAGIC:
        raise UnknownPacketError(f"bad magic {bytes(data[:4])!r}")
    if len(data) < FRAME_SIZE:
        raise ShortPacketError(f"{len(data)} bytes, need at least {FRAME_SIZE}")
    _, kind, flags, device_id, seq, ts = _FRAME_HEAD.unpack_from(data)
    if flags & ~0x01:
        raise InvalidFrameError(f"reserved flag bits set: {flags:#04x}")
    expected = FRAME_SIZE_WITH_PRESSURE if flags & 0x01 else FRAME_SIZE
    if len(data) < expected:
        raise ShortPacketError(f"{len(data)} bytes, need {expected}")
    if len(data) > expected:
        raise InvalidFrameError(f"{len(data) - expected} trailing bytes")
    vals = _FRAME_BODY.unpack_from(data, _FRAME_HEAD.size)
    pressure = _F32.unpack_from(data, FRAME_SIZE)[0] if flags & 0x01 else None
    try:
        kind = DeviceKind(kind)
    except ValueError:
        raise InvalidFrameError(f"unknown device kind {kind}") from None
    frame = SensorFrame(kind, device_id, seq, ts, vals[0:3], vals[3:6], vals[6:10], pressure)
    frame.validate()
    return frame


@dataclass(frozen=True)
class PoseMessage:
    timestamp_us: int
    mode: Mode
    q_la: Quat
    q_ua: Quat
    q_hi: Optional[Quat]
    shoulder: Vec3
    elbow: Vec3
    wrist: Vec3

    def validate(self, exc=InvalidFrameError) -> None:
        try:
            mode = Mode(self.mode)
        except ValueError:
            raise exc(f"unknown mode {self.mode!r}") from None
        if (self.q_hi is not None) != (mode is Mode.POCKET):
            raise exc("q_hi must be present exactly in pocket mode")
        values = [*self.q_la, *self.q_ua, *self.shoulder, *self.elbow, *self.wrist]
        if self.q_hi is not None:
            values += list(self.q_hi)
        if not all(math.isfinite(v) for v in values):
            raise exc("non-finite pose value")

    def as_arrays(self):
        q_hi = None if self.q_hi is None else np.asarray(self.q_hi)
        return (np.asarray(self.q_la), np.asarray(self.q_ua), q_hi,
                np.asarray(self.shoulder), np.asarray(self.elbow), np.asarray(self.wrist))


def encode_pose(msg: PoseMessage) -> bytes:
    msg.validate(exc=EncodeRejectedError)
    has_hip = msg.q_hi is not None
    parts = [_POSE_HEAD.pack(POSE_MAGIC, int(msg.mode), 1 if has_hip else 0, msg.timestamp_us)]
    floats = [*msg.q_la, *msg.q_ua]
    if has_hip:
        floats += list(msg.q_hi)
    floats += [*msg.shoulder, *msg.elbow, *msg.wrist]
    try:
        parts.append(struct.pack(f"<{len(floats)}f", *floats))
    except OverflowError as e:
        raise EncodeRejectedError(f"value does not fit f32: {e}") from None
    return b"".join(parts)


def decode_pose(data: bytes) -> PoseMessage:
    if len(data) < 4:
        raise ShortPacketError(f"{len(data)} bytes, magic incomplete")
    if data[:4] != POSE_MAGIC:
        raise UnknownPacketError(f"bad magic {bytes(data[:4])!r}")
    if len(data) < POSE_SIZE:
        raise ShortPacketError(f"{len(data)} bytes, need at least {POSE_SIZE}")
    _, mode, flags, ts = _POSE_HEAD.unpack_from(data)
    if flags & ~0x01:
        raise InvalidFrameError(f"reserved flag bits set: {flags:#04x}")
    has_hip = bool(flags & 0x01)
    expected = POSE_SIZE_WITH_HIP if has_hip else POSE_SIZE
    if len(data) < expected:
        raise ShortPacketError(f"{len(data)} bytes, need {expected}")
    if len(data) > expected:
        raise InvalidFrameError(f"{len(data) - expected} trailing bytes")
    n = (expected - _POSE_HEAD.size) // 4
    v = struct.unpack_from(f"<{n}f", data, _POSE_HEAD.size)
    try:
        mode = Mode(mode)
    except ValueError:
        raise InvalidFrameError(f"unknown mode {mode}") from None
    q_hi = v[8:12] if has_hip else None
    o = 12 if has_hip else 8
    msg = PoseMessage(ts, mode, v[0:4], v[4:8], q_hi, v[o:o + 3], v[o + 3:o + 6], v[o + 6:o + 9])
    msg.validate()
    return msg
