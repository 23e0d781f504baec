"""The three estimation modes: two LSTM pipelines and the pocket ensemble filter."""

from __future__ import annotations

import dataclasses
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import enkf, geom, lstm
from ..geom import BodyMeasurements
from ..sim.sensors import height_from_pressure
from ..wire import DeviceKind, Mode, PoseMessage, SensorFrame
from .calibration import CalibrationError, CalibrationOffsets
from .features import OUTPUT_CHANNELS, channel_count, phone_features, watch_features

DEFAULT_WINDOW = 25
MAX_FLEXION = math.radians(150)


class ConfigError(ValueError):
    pass


class Status(enum.Enum):
    OK = "ok"
    WARMING_UP = "warming-up"
    DIVERGED = "diverged"
    STARVED = "starved"


@dataclass
class ArmPose:
    status: Status
    pose: Optional[PoseMessage] = None
    confidence: float = 0.0
    latency_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.pose is not None


@dataclass(frozen=True)
class PocketConfig:
    ensemble_size: int = 128
    seed: int = 0
    # per-frame process noise (rad) for q_la, q_ua, q_hi
    process_std: tuple[float, float, float] = (0.01, 0.0, 0.005)
    # upper-arm noise grows with forearm angular speed: std = hypot(base, gain * |gyro|), gain in s
    ua_motion_gain: float = 0.05
    # angular std (rad) of the rest-pose scatter the ensemble starts from
    init_std: tuple[float, float, float] = (0.03, 0.03, 0.03)
    obs_quat_std: float = 0.02
    obs_height_std: float = 0.02
    inflation: float = 1.0
    use_gyro: bool = True
    hinge_prior: bool = True
    # hip-relative upper-arm azimuth range (deg); None disables the joint-limit prior
    azimuth_limits_deg: Optional[tuple[float, float]] = (-50.0, 110.0)
    divergence_deg: float = 90.0
    divergence_frames: int = 60

    def validate(self) -> None:
        if self.ensemble_size < 2:
            raise ConfigError("ensemble needs at least 2 members")
        if min(self.process_std) < 0 or min(self.init_std) < 0 or self.ua_motion_gain < 0 or self.obs_quat_std <= 0 or self.obs_height_std <= 0:
            raise ConfigError("noise stds must be positive")
        if self.inflation < 1.0:
            raise ConfigError("inflation factor below 1")


@dataclass
class ModeConfig:
    mode: Mode
    window: int = DEFAULT_WINDOW
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    weights_path: Optional[str] = None
    pocket: PocketConfig = field(default_factory=PocketConfig)
    pairing_tolerance_ms: float = 50.0
    body: BodyMeasurements = field(default_factory=BodyMeasurements)

    def validate(self) -> None:
        self.mode = Mode(self.mode)
        if self.window < 1:
            raise ConfigError(f"window length {self.window} < 1")
        if self.feature_std is not None and np.any(np.asarray(self.feature_std) <= 0):
            raise ConfigError("feature std must be positive")
        if self.pairing_tolerance_ms <= 0:
            raise ConfigError("pairing tolerance must be positive")
        if self.mode == Mode.POCKET:
            self.pocket.validate()

    @property
    def needs_phone(self) -> bool:
        return self.mode != Mode.WATCH_ONLY

    @property
    def phone_kind(self) -> Optional[DeviceKind]:
        return {Mode.WATCH_ONLY: None, Mode.UPPER_ARM: DeviceKind.PHONE_UPPER_ARM,
                Mode.POCKET: DeviceKind.PHONE_POCKET}[Mode(self.mode)]


def _vec(a) -> tuple:
    return tuple(float(v) for v in a)


def assemble_pose(timestamp_us: int, mode: Mode, q_la, q_ua, q_hi, body: BodyMeasurements) -> PoseMessage:
    j = geom.forward_kinematics(q_ua, q_la, q_hi, body)
    return PoseMessage(int(timestamp_us), Mode(mode), _vec(q_la), _vec(q_ua),
                       None if Mode(mode) != Mode.POCKET else _vec(q_hi), _vec(j.shoulder), _vec(j.elbow), _vec(j.wrist))


def split_output(y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Renormalised ``q_la, q_ua`` from a raw 8-wide head output plus a norm-based confidence."""
    y = np.asarray(y, dtype=float)
    la, ua = y[..., 0:4], y[..., 4:8]
    n = np.stack([geom.quat_norm(la), geom.quat_norm(ua)], axis=-1)
    conf = np.min(np.minimum(n, 1.0 / np.maximum(n, 1e-12)), axis=-1)
    return geom.quat_normalize(la), geom.quat_normalize(ua), conf


class LstmEstimator:
    """Sliding-window LSTM over per-frame features (Watch Only or Upper Arm)."""

    def __init__(self, config: ModeConfig, calib: CalibrationOffsets, params: Optional[lstm.LstmParams] = None):
        config.validate()
        if config.mode not in (Mode.WATCH_ONLY, Mode.UPPER_ARM):
            raise ConfigError(f"{config.mode.label} is not a learned mode")
        if params is None:
            if not config.weights_path:
                raise ConfigError(f"{config.mode.label} mode needs a weights file")
            params = lstm.load_weights(config.weights_path)
        width = channel_count(config.mode)
        if params.input_size != width or params.output_size != OUTPUT_CHANNELS:
            raise ConfigError(f"{config.mode.label} model maps {params.input_size}->{params.output_size}, "
                              f"expected {width}->{OUTPUT_CHANNELS}")
        if config.mode == Mode.UPPER_ARM and DeviceKind.PHONE_UPPER_ARM not in calib.mounts:
            raise CalibrationError("calibration lacks the upper-arm phone")
        self.config = config
        self.calib = calib
        self.params = params.astype(np.float32)
        mean = params.input_mean if config.feature_mean is None else np.asarray(config.feature_mean)
        std = params.input_std if config.feature_std is None else np.asarray(config.feature_std)
        if mean.shape != (width,) or std.shape != (width,):
            raise ConfigError(f"normalisation constants must have {width} channels")
        if np.any(std <= 0):
            raise ConfigError("feature std must be positive")
        self.mean = mean.astype(np.float32)
        self.std = std.astype(np.float32)
        self._window: deque = deque(maxlen=config.window)

    @property
    def mode(self) -> Mode:
        return self.config.mode

    def reset(self) -> None:
        self._window.clear()

    def push_features(self, timestamp_us: int, feats: np.ndarray) -> ArmPose:
        self._window.append((np.asarray(feats, dtype=np.float32) - self.mean) / self.std)
        if len(self._window) < self.config.window:
            return ArmPose(Status.WARMING_UP)
        y = lstm.lstm_forward(self.params, np.stack(self._window))
        q_la, q_ua, conf = split_output(y)
        pose = assemble_pose(timestamp_us, self.mode, q_la, q_ua, None, self.config.body)
        return ArmPose(Status.OK, pose, float(conf))

    def step(self, watch: SensorFrame, phone: Optional[SensorFrame] = None) -> ArmPose:
        feats = watch_features(self.calib, watch.orientation, watch.gyro, watch.accel, watch.pressure_hpa)
        if self.mode == Mode.UPPER_ARM:
            if phone is None:
                raise ValueError("upper-arm mode needs the paired phone frame")
            feats = np.concatenate([feats, phone_features(self.calib, phone.orientation, phone.gyro, phone.accel)])
        return self.push_features(watch.timestamp_us, feats)

    def run_batch(self, timestamps: np.ndarray, features: np.ndarray, chunk: int = 512):
        """All poses for a whole feature sequence at once (same windows as repeated :meth:`step`).

        Returns ``(timestamps, q_la, q_ua, confidence)`` for the frames past warm-up.
        """
        T = self.config.window
        x = ((np.asarray(features, dtype=np.float32) - self.mean) / self.std).astype(np.float32)
        n = len(x)
        if n < T:
            return timestamps[:0], np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0)
        idx = np.arange(T - 1, n)
        outs = []
        for s in range(0, len(idx), chunk):
            ends = idx[s:s + chunk]
            windows = np.stack([x[e - T + 1:e + 1] for e in ends])
            outs.append(lstm.lstm_forward(self.params, windows))
        q_la, q_ua, conf = split_output(np.concatenate(outs))
        return np.asarray(timestamps)[idx], q_la, q_ua, conf


def watch_only_step(frame: SensorFrame, state: LstmEstimator) -> ArmPose:
    if state.mode != Mode.WATCH_ONLY:
        raise ConfigError("estimator is not in watch-only mode")
    return state.step(frame)


def upper_arm_step(watch_frame: SensorFrame, phone_frame: SensorFrame, state: LstmEstimator) -> ArmPose:
    if state.mode != Mode.UPPER_ARM:
        raise ConfigError("estimator is not in upper-arm mode")
    return state.step(watch_frame, phone_frame)


# pocket mode


def flexion_of(q_ua: np.ndarray, q_la: np.ndarray) -> np.ndarray:
    """Elbow angle read off the Y-twist of ``q_ua^-1 q_la`` (positive is forward flexion)."""
    r = geom.quat_mul(geom.quat_conj(q_ua), q_la)
    r = np.where(r[..., :1] < 0, -r, r)
    return -2.0 * np.arctan2(r[..., 2], r[..., 0])


def hinge_project(q_la: np.ndarray, q_ua: np.ndarray) -> np.ndarray:
    """Closest hinge-consistent upper-arm orientation: ``q_la * R_y(e)`` with ``e`` clamped to the joint range."""
    e = np.clip(flexion_of(q_ua, q_la), 0.0, MAX_FLEXION)
    return geom.quat_mul(q_la, geom.from_axis_angle([0.0, 1.0, 0.0], e))


def yaw_project(q: np.ndarray) -> np.ndarray:
    """Nearest pure-yaw rotation (twist about up)."""
    t = np.zeros_like(q)
    t[..., 0] = q[..., 0]
    t[..., 3] = q[..., 3]
    n = np.linalg.norm(t, axis=-1, keepdims=True)
    return np.where(n > 1e-12, t / np.where(n > 1e-12, n, 1.0), geom.IDENTITY)


_FLEXION_GRID = np.radians(np.arange(0.0, 151.0, 5.0))


def upper_arm_azimuth(q_ua: np.ndarray, q_hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hip-relative azimuth of the upper arm and the horizontal length of its unit direction."""
    d = geom.quat_rotate_vec(geom.quat_mul(geom.quat_conj(q_hi), q_ua), geom.BONE_DIRECTION)
    return np.arctan2(d[..., 1], d[..., 0]), np.hypot(d[..., 0], d[..., 1])


def azimuth_project(x: np.ndarray, limits: tuple[float, float], min_horizontal: float = 0.35) -> np.ndarray:
    """Move members whose upper arm leaves the azimuth range onto an in-range elbow angle.

    The replacement flexion is the in-range grid value whose upper-arm
    height is closest to the member's, so the barometric evidence the member
    already carries is kept. ``x`` rows are ``[q_la, q_ua, q_hi]``.
    """
    az, horiz = upper_arm_azimuth(x[:, 4:8], x[:, 8:12])
    bad = (horiz > min_horizontal) & ((az < limits[0]) | (az > limits[1]))
    if not np.any(bad):
        return x
    q_la, q_hi = x[bad, 0:4], x[bad, 8:12]
    height = geom.quat_rotate_vec(x[bad, 4:8], geom.BONE_DIRECTION)[:, 2]
    cand = geom.quat_mul(q_la[:, None, :], geom.from_axis_angle([0.0, 1.0, 0.0], _FLEXION_GRID)[None])
    c_az, c_h = upper_arm_azimuth(cand, q_hi[:, None, :])
    ok = (c_h <= min_horizontal) | ((c_az >= limits[0]) & (c_az <= limits[1]))
    cost = np.abs(geom.quat_rotate_vec(cand, geom.BONE_DIRECTION)[..., 2] - height[:, None])
    cost = np.where(ok, cost, np.inf)
    pick = np.argmin(cost, axis=1)
    fixable = np.isfinite(cost[np.arange(len(pick)), pick])
    rows = np.flatnonzero(bad)[fixable]
    x[rows, 4:8] = cand[fixable, pick[fixable]]
    return x


REST_STATE = np.concatenate([geom.IDENTITY, geom.IDENTITY, geom.IDENTITY])


class PocketEstimator:
    """Ensemble Kalman filter over ``[q_la, q_ua, q_hi]``.

    The process model rotates the forearm and hip blocks by the watch and
    pocket-phone gyro readings, pulls the upper arm onto the elbow hinge and
    keeps the hip a pure yaw; the observation is the calibrated watch and
    pocket-phone orientations plus the barometric wrist height.
    """

    def __init__(self, config: ModeConfig, calib: CalibrationOffsets):
        config.validate()
        if config.mode != Mode.POCKET:
            raise ConfigError("pocket estimator needs pocket mode")
        if DeviceKind.PHONE_POCKET not in calib.mounts:
            raise CalibrationError("calibration lacks the pocket phone")
        self.config = config
        self.pc = config.pocket
        self.calib = calib
        self.body = config.body
        self._obs_std = np.r_[np.full(8, self.pc.obs_quat_std), self.pc.obs_height_std]
        m_w = calib.mounts[DeviceKind.WATCH]
        m_p = calib.mounts[DeviceKind.PHONE_POCKET]
        self._mounts = (m_w, m_p)
        self.reset()

    def reset(self, state: Optional[np.ndarray] = None) -> None:
        self.rng = np.random.default_rng(self.pc.seed) if state is None else self.rng
        ens = enkf.initial_ensemble(REST_STATE if state is None else state, self.pc.ensemble_size,
                                    np.asarray(self.pc.init_std), self.rng)
        # arm noise is drawn inside the process model; the ensemble only scatters the hip
        self.ensemble = dataclasses.replace(ens, quat_std=np.array([0.0, 0.0, self.pc.process_std[2]]))
        self._last_t: Optional[int] = None
        self._bad_frames = 0
        self.reinits = 0 if state is None else self.reinits

    @property
    def mode(self) -> Mode:
        return Mode.POCKET

    def observe(self, q_watch, pressure, q_phone) -> np.ndarray:
        la = self.calib.segment(DeviceKind.WATCH, np.asarray(q_watch, dtype=float))
        hi = self.calib.segment(DeviceKind.PHONE_POCKET, np.asarray(q_phone, dtype=float))
        h = height_from_pressure(pressure, self.calib.ref_pressure_hpa)
        return np.r_[la, hi, h]

    def observation_model(self, x: np.ndarray) -> np.ndarray:
        _, _, wrist = geom.fk_arrays(x[:, 4:8], x[:, 0:4], x[:, 8:12], self.body)
        return np.concatenate([x[:, 0:4], x[:, 8:12], wrist[:, 2:3] - self.calib.ref_wrist_height_m], axis=1)

    def _process_model(self, dq_la: Optional[np.ndarray], dq_hi: Optional[np.ndarray], ua_std: float):
        la_std = self.pc.process_std[0]

        def f(x):
            if dq_la is not None:
                x[:, 0:4] = geom.quat_mul(x[:, 0:4], dq_la)
                x[:, 8:12] = geom.quat_mul(x[:, 8:12], dq_hi)
            if self.pc.hinge_prior:
                x[:, 4:8] = hinge_project(x[:, 0:4], x[:, 4:8])
            if self.pc.azimuth_limits_deg is not None:
                x = azimuth_project(x, tuple(np.radians(self.pc.azimuth_limits_deg)))
            # the forearm's noise turns the whole arm, so it leaves the elbow angle alone
            n = len(x)
            if la_std > 0:
                r = enkf.random_rotations(self.rng, la_std, n)
                x[:, 0:4] = geom.quat_mul(r, x[:, 0:4])
                x[:, 4:8] = geom.quat_mul(r, x[:, 4:8])
            if ua_std > 0:
                if self.pc.hinge_prior:
                    bend = geom.from_axis_angle([0.0, 1.0, 0.0], self.rng.normal(0.0, ua_std, n))
                    x[:, 4:8] = geom.quat_mul(x[:, 4:8], bend)
                else:
                    x[:, 4:8] = geom.quat_mul(enkf.random_rotations(self.rng, ua_std, n), x[:, 4:8])
            x[:, 8:12] = yaw_project(x[:, 8:12])
            return x
        return f

    def _segment_increment(self, mount, gyro, dt) -> np.ndarray:
        # sensor-frame rotation over dt, expressed in the segment frame
        d = geom.from_rotvec(np.asarray(gyro, dtype=float) * dt)
        return geom.quat_mul(geom.quat_mul(mount, d), geom.quat_conj(mount))

    def transition(self, timestamp_us: int, gyro_watch, gyro_phone):
        """Process model for the interval ending at ``timestamp_us`` (advances the filter clock)."""
        dt = 0.0 if self._last_t is None else max(0.0, (timestamp_us - self._last_t) * 1e-6)
        self._last_t = timestamp_us
        dq_la = dq_hi = None
        if self.pc.use_gyro and dt > 0:
            dq_la = self._segment_increment(self._mounts[0], gyro_watch, dt)
            dq_hi = self._segment_increment(self._mounts[1], gyro_phone, dt)
        ua_std = math.hypot(self.pc.process_std[1], self.pc.ua_motion_gain * float(np.linalg.norm(gyro_watch)))
        return self._process_model(dq_la, dq_hi, ua_std)

    def step_raw(self, timestamp_us: int, q_watch, gyro_watch, pressure, q_phone, gyro_phone) -> ArmPose:
        obs = self.observe(q_watch, pressure, q_phone)
        ens = enkf.predict(self.ensemble, self.transition(timestamp_us, gyro_watch, gyro_phone), self.rng)
        prior = enkf.mean_state(ens)
        innovation = 0.5 * (geom.quat_geodesic_angle(prior[0:4], obs[0:4])
                            + geom.quat_geodesic_angle(prior[8:12], obs[4:8]))
        ens = enkf.update(ens, obs, self.observation_model, self._obs_std, self.rng)
        if self.pc.inflation > 1.0:
            ens = enkf.inflate(ens, self.pc.inflation)
        self.ensemble = ens
        status = Status.OK
        if math.degrees(innovation) > self.pc.divergence_deg:
            self._bad_frames += 1
            if self._bad_frames >= self.pc.divergence_frames:
                self._reinit_from(obs)
                status = Status.DIVERGED
        else:
            self._bad_frames = 0
        mean = enkf.mean_state(self.ensemble)
        q_la, q_ua, q_hi = mean[0:4], mean[4:8], yaw_project(mean[8:12])
        spread = enkf.angular_spread(self.ensemble)
        conf = float(math.exp(-float(np.max(spread)) / 0.1))
        pose = assemble_pose(timestamp_us, Mode.POCKET, q_la, q_ua, q_hi, self.body)
        return ArmPose(status, pose, conf)

    def _reinit_from(self, obs: np.ndarray) -> None:
        la, hi = obs[0:4], yaw_project(obs[4:8])
        self.reset(np.concatenate([la, la, hi]))
        self.reinits += 1

    def step(self, watch: SensorFrame, phone: SensorFrame) -> ArmPose:
        return self.step_raw(watch.timestamp_us, watch.orientation, watch.gyro, watch.pressure_hpa,
                             phone.orientation, phone.gyro)


def pocket_step(watch_frame: SensorFrame, phone_frame: SensorFrame, state: PocketEstimator) -> ArmPose:
    return state.step(watch_frame, phone_frame)


def make_estimator(config: ModeConfig, calib: CalibrationOffsets, params: Optional[lstm.LstmParams] = None):
    if Mode(config.mode) == Mode.POCKET:
        return PocketEstimator(config, calib)
    return LstmEstimator(config, calib, params)
