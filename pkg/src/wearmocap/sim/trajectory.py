"""Ground-truth arm trajectories.

Keyposes are drawn in the body frame (a box over shoulder azimuth,
elevation, twist and elbow flexion), then world orientations are the hip yaw
composed onto them. The first keypose is always the arm-down rest pose, held
for ``rest_s`` seconds so that every recording opens with a calibration
window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .. import geom
from ..geom import BodyMeasurements


class SpecError(ValueError):
    pass


HIP_PROFILES = ("fixed", "ramp", "random-walk")


@dataclass(frozen=True)
class Workspace:
    """Body-relative joint ranges in radians. The arm is the left one (shoulder at +Y)."""

    azimuth: tuple[float, float] = (math.radians(-30), math.radians(90))
    elevation: tuple[float, float] = (0.0, math.radians(120))
    twist: tuple[float, float] = (math.radians(-45), math.radians(45))
    elbow: tuple[float, float] = (0.0, math.radians(150))


@dataclass(frozen=True)
class TrajectorySpec:
    seed: int = 0
    duration: float = 20.0
    rate: float = 60.0
    keyposes: int = 24
    max_angular_velocity: float = 4.0
    hip_profile: str = "fixed"
    hip_yaw_start: float = 0.0
    hip_yaw_end: float = math.pi / 2
    hip_ramp_start: float | None = None  # defaults to mid-trajectory
    hip_ramp_duration: float = 5.0
    hip_walk_std: float = math.radians(30)
    hip_walk_interval: float = 2.0
    rest_s: float = 1.0
    body: BodyMeasurements = field(default_factory=BodyMeasurements)
    workspace: Workspace = field(default_factory=Workspace)

    def validate(self) -> None:
        if not self.rate > 0:
            raise SpecError(f"rate must be positive, got {self.rate}")
        if not self.duration > 0:
            raise SpecError(f"duration must be positive, got {self.duration}")
        if self.keyposes < 1:
            raise SpecError("need at least one keypose")
        if not self.max_angular_velocity > 0:
            raise SpecError("max_angular_velocity must be positive")
        if self.hip_profile not in HIP_PROFILES:
            raise SpecError(f"hip profile {self.hip_profile!r} not in {HIP_PROFILES}")
        if self.keyposes > 1 and self.rest_s >= self.duration:
            raise SpecError("rest hold leaves no time for motion")


@dataclass(frozen=True)
class GroundTruthFrame:
    timestamp_us: int
    q_la: np.ndarray
    q_ua: np.ndarray
    q_hi: np.ndarray
    joints: geom.JointPositions


@dataclass
class Trajectory:
    """Ground truth on a fixed time grid, stored column-wise."""

    timestamp_us: np.ndarray
    q_la: np.ndarray
    q_ua: np.ndarray
    q_hi: np.ndarray
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray
    rate: float
    body: BodyMeasurements = field(default_factory=BodyMeasurements)

    def __len__(self) -> int:
        return len(self.timestamp_us)

    def __getitem__(self, k: int) -> GroundTruthFrame:
        return GroundTruthFrame(int(self.timestamp_us[k]), self.q_la[k], self.q_ua[k], self.q_hi[k],
                                geom.JointPositions(self.shoulder[k], self.elbow[k], self.wrist[k]))

    def __iter__(self) -> Iterator[GroundTruthFrame]:
        return (self[k] for k in range(len(self)))

    @property
    def times(self) -> np.ndarray:
        return self.timestamp_us * 1e-6

    @classmethod
    def from_orientations(cls, timestamp_us, q_la, q_ua, q_hi, rate, body=None) -> "Trajectory":
        body = body or BodyMeasurements()
        s, e, w = geom.fk_arrays(q_ua, q_la, q_hi, body)
        return cls(np.asarray(timestamp_us, dtype=np.int64), q_la, q_ua, q_hi, s, e, w, rate, body)


def smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


SMOOTHSTEP_PEAK_SLOPE = 1.5


def body_upper_arm(azimuth, elevation, twist) -> np.ndarray:
    """Azimuth about up, forward raise, then twist about the bone."""
    return geom.quat_mul(geom.quat_mul(geom.yaw_quat(azimuth), geom.from_axis_angle([0, 1, 0], -elevation)),
                         geom.yaw_quat(twist))


def elbow_rotation(flexion) -> np.ndarray:
    """Hinge about the upper arm's Y axis; positive flexion swings the forearm forward."""
    return geom.from_axis_angle([0, 1, 0], -np.asarray(flexion, dtype=float))


def _sample_keypose(rng, ws: Workspace):
    az = rng.uniform(*ws.azimuth)
    el = rng.uniform(*ws.elevation)
    tw = rng.uniform(*ws.twist)
    fl = rng.uniform(*ws.elbow)
    return body_upper_arm(az, el, tw), fl


def _hip_yaw(spec: TrajectorySpec, t: np.ndarray, rng) -> np.ndarray:
    if spec.hip_profile == "fixed":
        return np.full_like(t, spec.hip_yaw_start)
    if spec.hip_profile == "ramp":
        t0 = spec.duration / 2 if spec.hip_ramp_start is None else spec.hip_ramp_start
        rate = (spec.hip_yaw_end - spec.hip_yaw_start) / spec.hip_ramp_duration
        if abs(rate) > spec.max_angular_velocity:
            raise SpecError(f"hip ramp needs {abs(rate):.3f} rad/s, above the cap {spec.max_angular_velocity}")
        u = np.clip((t - t0) / spec.hip_ramp_duration, 0.0, 1.0)
        return spec.hip_yaw_start + (spec.hip_yaw_end - spec.hip_yaw_start) * u
    # random walk: yaw keyframes every interval, smoothstep between them, still during the rest hold
    knots_t = np.arange(spec.rest_s, spec.duration + spec.hip_walk_interval, spec.hip_walk_interval)
    steps = rng.normal(0.0, spec.hip_walk_std, size=len(knots_t))
    steps[0] = 0.0
    peak = SMOOTHSTEP_PEAK_SLOPE * np.abs(steps) / spec.hip_walk_interval
    steps = np.where(peak > spec.max_angular_velocity, np.sign(steps) * spec.max_angular_velocity
                     * spec.hip_walk_interval / SMOOTHSTEP_PEAK_SLOPE, steps)
    knots = spec.hip_yaw_start + np.cumsum(steps)
    yaw = np.full_like(t, spec.hip_yaw_start)
    for k in range(1, len(knots_t)):
        u = np.clip((t - knots_t[k - 1]) / (knots_t[k] - knots_t[k - 1]), 0.0, 1.0)
        sel = t >= knots_t[k - 1]
        yaw[sel] = knots[k - 1] + (knots[k] - knots[k - 1]) * smoothstep(u[sel])
    return yaw


def gen_trajectory(spec: TrajectorySpec, max_tries: int = 200) -> Trajectory:
    """Random keyposes joined by slerp with a smoothstep time warp.

    Keyposes whose transition would exceed the angular-velocity cap (shoulder
    rotation or elbow flexion rate) are redrawn; after ``max_tries`` failures
    ``SpecError`` reports the settings as infeasible.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.rate))
    t = np.arange(n) / spec.rate
    cap = spec.max_angular_velocity

    key_q = [geom.IDENTITY.copy()]
    key_e = [0.0]
    seg = (spec.duration - spec.rest_s) / (spec.keyposes - 1) if spec.keyposes > 1 else spec.duration
    for k in range(1, spec.keyposes):
        for _ in range(max_tries):
            q, e = _sample_keypose(rng, spec.workspace)
            shoulder_rate = SMOOTHSTEP_PEAK_SLOPE * geom.quat_geodesic_angle(key_q[-1], q) / seg
            elbow_rate = SMOOTHSTEP_PEAK_SLOPE * abs(e - key_e[-1]) / seg
            if shoulder_rate <= cap and elbow_rate <= cap:
                key_q.append(geom.hemisphere_align(q, key_q[-1]))
                key_e.append(e)
                break
        else:
            raise SpecError(f"segment {k - 1}->{k}: no keypose reachable within {cap} rad/s in {seg:.3f} s")

    q_ua_body = np.tile(geom.IDENTITY, (n, 1))
    flex = np.zeros(n)
    if spec.keyposes > 1:
        u_all = (t - spec.rest_s) / seg
        idx = np.clip(np.floor(u_all).astype(int), 0, spec.keyposes - 2)
        u = smoothstep(np.clip(u_all - idx, 0.0, 1.0))
        moving = t >= spec.rest_s
        kq = np.asarray(key_q)
        ke = np.asarray(key_e)
        q_ua_body[moving] = geom.slerp(kq[idx[moving]], kq[idx[moving] + 1], u[moving])
        flex[moving] = ke[idx[moving]] + (ke[idx[moving] + 1] - ke[idx[moving]]) * u[moving]
    q_la_body = geom.quat_mul(q_ua_body, elbow_rotation(flex))

    yaw = _hip_yaw(spec, t, rng)
    q_hi = geom.yaw_quat(yaw)
    q_ua = geom.quat_mul(q_hi, q_ua_body)
    q_la = geom.quat_mul(q_hi, q_la_body)
    ts = np.round(np.arange(n) * 1e6 / spec.rate).astype(np.int64)
    return Trajectory.from_orientations(ts, q_la, q_ua, q_hi, spec.rate, spec.body)


def body_relative(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Shoulder orientation in the hip frame and elbow flexion angle per frame."""
    q_body = geom.quat_mul(geom.quat_conj(traj.q_hi), traj.q_ua)
    flex = geom.quat_geodesic_angle(traj.q_ua, traj.q_la)
    return q_body, np.atleast_1d(flex)
