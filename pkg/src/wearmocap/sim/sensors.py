"""Virtual watch and phones riding a ground-truth trajectory."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import geom
from ..wire import DeviceKind, SensorFrame
from .trajectory import Trajectory

GRAVITY = 9.81
SCALE_HEIGHT_M = 8434.5

DEVICE_IDS = {DeviceKind.WATCH: 1, DeviceKind.PHONE_UPPER_ARM: 2, DeviceKind.PHONE_POCKET: 3}


class SensorSynthesisError(ValueError):
    pass


def _default_mounts() -> dict:
    return {
        # watch mount has no yaw component: its heading is attributed to the world frame at calibration
        DeviceKind.WATCH: geom.from_axis_angle([1, 0, 0], math.radians(10)),
        DeviceKind.PHONE_UPPER_ARM: geom.quat_mul(geom.yaw_quat(math.radians(90)),
                                                  geom.from_axis_angle([1, 0, 0], math.radians(-15))),
        DeviceKind.PHONE_POCKET: geom.quat_mul(geom.from_axis_angle([1, 0, 0], math.radians(90)),
                                               geom.yaw_quat(math.radians(20))),
    }


@dataclass(frozen=True)
class NoiseConfig:
    seed: int = 0
    gyro_std: float = 0.01
    accel_std: float = 0.05
    orientation_std: float = 0.02
    pressure_std: float = 0.002
    p0: float = 1013.25
    world_heading: float = 0.0
    phone_offset_us: int = 0
    mounts: dict = field(default_factory=_default_mounts)

    def validate(self) -> None:
        for name in ("gyro_std", "accel_std", "orientation_std", "pressure_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def zero(cls, **kw) -> "NoiseConfig":
        return cls(gyro_std=0.0, accel_std=0.0, orientation_std=0.0, pressure_std=0.0, **kw)


def pressure_at(height_m, p0: float = 1013.25):
    return p0 * np.exp(-np.asarray(height_m, dtype=float) / SCALE_HEIGHT_M)


def height_from_pressure(p, p_ref):
    return -SCALE_HEIGHT_M * np.log(np.asarray(p, dtype=float) / p_ref)


def _angular_velocity(q: np.ndarray, dt: float) -> np.ndarray:
    """Body-frame angular velocity by central differences (one-sided at the ends)."""
    omega = np.empty((len(q), 3))
    omega[1:-1] = geom.to_rotvec(geom.quat_mul(geom.quat_conj(q[:-2]), q[2:])) / (2 * dt)
    omega[0] = geom.to_rotvec(geom.quat_mul(geom.quat_conj(q[0]), q[1])) / dt
    omega[-1] = geom.to_rotvec(geom.quat_mul(geom.quat_conj(q[-2]), q[-1])) / dt
    return omega


def _second_difference(p: np.ndarray, dt: float) -> np.ndarray:
    a = np.empty_like(p)
    a[1:-1] = (p[2:] - 2 * p[1:-1] + p[:-2]) / (dt * dt)
    a[0] = a[1]
    a[-1] = a[-2]
    return a


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def mounted_orientation(truth: Trajectory, kind: DeviceKind, mount: np.ndarray) -> np.ndarray:
    seg = {DeviceKind.WATCH: truth.q_la, DeviceKind.PHONE_UPPER_ARM: truth.q_ua,
           DeviceKind.PHONE_POCKET: truth.q_hi}[kind]
    return geom.quat_mul(seg, mount)


def mount_point(truth: Trajectory, kind: DeviceKind) -> np.ndarray:
    if kind == DeviceKind.WATCH:
        return truth.wrist
    if kind == DeviceKind.PHONE_UPPER_ARM:
        return 0.5 * (truth.shoulder + truth.elbow)
    return np.zeros_like(truth.wrist)


@dataclass
class DeviceStream:
    """Sensor samples of one device, column-wise (already rounded to f32)."""

    kind: DeviceKind
    device_id: int
    timestamp_us: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    orientation: np.ndarray
    pressure: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.timestamp_us)

    def frame(self, k: int) -> SensorFrame:
        return SensorFrame(
            self.kind, self.device_id, k + 1, int(self.timestamp_us[k]),
            tuple(self.accel[k].tolist()), tuple(self.gyro[k].tolist()), tuple(self.orientation[k].tolist()),
            None if self.pressure is None else float(self.pressure[k]),
        )

    def frames(self) -> list[SensorFrame]:
        return [self.frame(k) for k in range(len(self))]


def synth_device(truth: Trajectory, kind: DeviceKind, noise: NoiseConfig, rng: np.random.Generator) -> DeviceStream:
    n = len(truth)
    dt = 1.0 / truth.rate
    mount = np.asarray(noise.mounts[kind], dtype=float)
    q_mounted = mounted_orientation(truth, kind, mount)
    gyro = _angular_velocity(q_mounted, dt)
    acc_world = _second_difference(mount_point(truth, kind), dt) + np.array([0.0, 0.0, GRAVITY])
    accel = geom.quat_rotate_vec(geom.quat_conj(q_mounted), acc_world)
    q_dev = geom.quat_mul(geom.yaw_quat(noise.world_heading), q_mounted)
    if noise.orientation_std > 0:
        from ..enkf import random_rotations

        q_dev = geom.quat_mul(q_dev, random_rotations(rng, noise.orientation_std, n))
    q_dev = np.where(q_dev[:, :1] < 0, -q_dev, q_dev)
    gyro = gyro + rng.normal(size=gyro.shape) * noise.gyro_std
    accel = accel + rng.normal(size=accel.shape) * noise.accel_std
    pressure = None
    if kind == DeviceKind.WATCH:
        pressure = _f32(pressure_at(truth.wrist[:, 2], noise.p0) + rng.normal(size=n) * noise.pressure_std)
    ts = truth.timestamp_us.copy()
    if kind != DeviceKind.WATCH:
        ts = ts + noise.phone_offset_us
    return DeviceStream(kind, DEVICE_IDS[kind], ts, _f32(accel), _f32(gyro), _f32(q_dev), pressure)


def synth_sensors(truth: Trajectory, noise: NoiseConfig = NoiseConfig(),
                  devices=(DeviceKind.WATCH, DeviceKind.PHONE_UPPER_ARM, DeviceKind.PHONE_POCKET)
                  ) -> dict[DeviceKind, DeviceStream]:
    """Sensor streams for every requested device.

    Orientation is the mounted segment orientation in the device world frame
    plus axis-angle noise; gyro and accelerometer come from finite differences
    of the noiseless mounted pose (accelerometer reports specific force, so it
    reads +9.81 m/s^2 along up at rest); pressure follows the isothermal
    barometric law at the wrist height.
    """
    noise.validate()
    if len(truth) < 3:
        raise SensorSynthesisError(f"need at least 3 truth frames to differentiate, got {len(truth)}")
    rng = np.random.default_rng(noise.seed)
    return {kind: synth_device(truth, kind, noise, rng) for kind in devices}
