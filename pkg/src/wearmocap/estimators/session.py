"""Whole-recording helpers: calibrate from the opening rest hold, build training windows, run a mode."""

from __future__ import annotations

import time
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import geom, lstm
from ..sim.sensors import DeviceStream
from ..sim.trajectory import Trajectory
from ..wire import DeviceKind, Mode
from .calibration import CalibrationOffsets, calibrate
from .features import align_targets, feature_statistics, phone_features, watch_features
from .pairing import FramePairer
from .pipelines import DEFAULT_WINDOW, LstmEstimator, ModeConfig, PocketEstimator, make_estimator

MODE_PHONE = {Mode.WATCH_ONLY: None, Mode.UPPER_ARM: DeviceKind.PHONE_UPPER_ARM, Mode.POCKET: DeviceKind.PHONE_POCKET}


def head(stream: DeviceStream, seconds: float) -> DeviceStream:
    t0 = stream.timestamp_us[0]
    n = int(np.searchsorted(stream.timestamp_us, t0 + seconds * 1e6 - 1, side="left"))
    return DeviceStream(stream.kind, stream.device_id, stream.timestamp_us[:n], stream.accel[:n], stream.gyro[:n],
                        stream.orientation[:n], None if stream.pressure is None else stream.pressure[:n])


def calibrate_recording(sensors: Mapping[DeviceKind, DeviceStream], seconds: float = 1.0,
                        body: Optional[geom.BodyMeasurements] = None,
                        devices: Optional[Sequence[DeviceKind]] = None) -> CalibrationOffsets:
    devices = list(sensors) if devices is None else devices
    return calibrate({k: head(sensors[k], seconds) for k in devices}, body=body)


def pair_indices(watch_ts: np.ndarray, phone_ts: np.ndarray, tolerance_ms: float = 50.0
                 ) -> tuple[np.ndarray, np.ndarray, int]:
    """Index pairs into two timestamp arrays, by the streaming pairing rule."""
    if len(watch_ts) == len(phone_ts) and np.array_equal(watch_ts, phone_ts):
        idx = np.arange(len(watch_ts))
        return idx, idx, 0
    pairer = FramePairer(int(round(tolerance_ms * 1000)))
    events = [(int(t), 0, i) for i, t in enumerate(watch_ts)] + [(int(t), 1, i) for i, t in enumerate(phone_ts)]
    events.sort()
    out = []
    for t, is_phone, i in events:
        f = SimpleNamespace(timestamp_us=t, index=i)
        out += pairer.push_phone(f) if is_phone else pairer.push_watch(f)
    out += pairer.flush()
    wi = np.array([w.index for w, _ in out], dtype=int)
    pi = np.array([p.index for _, p in out], dtype=int)
    return wi, pi, pairer.dropped


@dataclass
class SessionFeatures:
    timestamps: np.ndarray
    features: np.ndarray
    watch_index: np.ndarray  # row of the watch stream each feature row came from
    dropped: int = 0


def session_features(sensors: Mapping[DeviceKind, DeviceStream], calib: CalibrationOffsets, mode: Mode,
                     tolerance_ms: float = 50.0) -> SessionFeatures:
    w = sensors[DeviceKind.WATCH]
    feats = watch_features(calib, w.orientation, w.gyro, w.accel, w.pressure)
    idx = np.arange(len(w))
    dropped = 0
    if Mode(mode) == Mode.UPPER_ARM:
        p = sensors[DeviceKind.PHONE_UPPER_ARM]
        idx, pi, dropped = pair_indices(w.timestamp_us, p.timestamp_us, tolerance_ms)
        feats = np.concatenate([feats[idx], phone_features(calib, p.orientation[pi], p.gyro[pi], p.accel[pi])],
                               axis=1)
    return SessionFeatures(w.timestamp_us[idx], feats, idx, dropped)


def training_windows(recordings: Sequence[tuple[Trajectory, Mapping[DeviceKind, DeviceStream]]], mode: Mode,
                     window: int = DEFAULT_WINDOW, stride: int = 1, calib_seconds: float = 1.0
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Raw feature windows ``(N, T, F)`` and aligned targets ``(N, 8)`` from simulator recordings.

    Each recording is calibrated on its own opening rest hold, as a live
    session would be.
    """
    xs, ys = [], []
    for truth, sensors in recordings:
        devices = [DeviceKind.WATCH] + ([DeviceKind.PHONE_UPPER_ARM] if Mode(mode) == Mode.UPPER_ARM else [])
        calib = calibrate_recording(sensors, calib_seconds, truth.body, devices)
        sf = session_features(sensors, calib, mode)
        targets = align_targets(truth.q_la[sf.watch_index], truth.q_ua[sf.watch_index], sf.features, mode)
        ends = np.arange(window - 1, len(sf.features), stride)
        if len(ends) == 0:
            continue
        offsets = np.arange(-window + 1, 1)
        xs.append(sf.features[ends[:, None] + offsets])
        ys.append(targets[ends])
    if not xs:
        return np.zeros((0, window, 0)), np.zeros((0, 8))
    return np.concatenate(xs), np.concatenate(ys)


def fit_model(recordings: Sequence[tuple[Trajectory, Mapping[DeviceKind, DeviceStream]]], mode: Mode,
              config: lstm.TrainConfig = lstm.TrainConfig(), window: int = DEFAULT_WINDOW, stride: int = 1,
              hidden_size: int = 128, num_layers: int = 3, progress=None) -> lstm.TrainResult:
    """Train a mode's network on recordings; the returned params carry the feature normalisation."""
    X, Y = training_windows(recordings, mode, window, stride)
    mean, std = feature_statistics(X)
    res = lstm.train((X - mean) / std, Y, config, hidden_size=hidden_size, num_layers=num_layers, progress=progress)
    res.params.input_mean[:] = mean
    res.params.input_std[:] = std
    return res


@dataclass
class PoseTrack:
    """Estimated poses of one session, column-wise."""

    mode: Mode
    timestamp_us: np.ndarray
    q_la: np.ndarray
    q_ua: np.ndarray
    q_hi: Optional[np.ndarray]
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray
    confidence: np.ndarray
    dropped: int = 0
    seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.timestamp_us)


def run_session(config: ModeConfig, sensors: Mapping[DeviceKind, DeviceStream], calib: CalibrationOffsets,
                params=None, estimator=None) -> PoseTrack:
    """Run one mode over a whole recording. LSTM modes are evaluated in batches of windows."""

    start = time.perf_counter()
    est = estimator or make_estimator(config, calib, params)
    mode = Mode(config.mode)
    if isinstance(est, LstmEstimator):
        sf = session_features(sensors, calib, mode, config.pairing_tolerance_ms)
        ts, q_la, q_ua, conf = est.run_batch(sf.timestamps, sf.features)
        q_hi = None
        dropped = sf.dropped
    else:
        assert isinstance(est, PocketEstimator)
        w, p = sensors[DeviceKind.WATCH], sensors[DeviceKind.PHONE_POCKET]
        wi, pi, dropped = pair_indices(w.timestamp_us, p.timestamp_us, config.pairing_tolerance_ms)
        rows = [est.step_raw(int(w.timestamp_us[a]), w.orientation[a], w.gyro[a], w.pressure[a], p.orientation[b],
                             p.gyro[b]) for a, b in zip(wi, pi)]
        poses = [r.pose for r in rows]
        ts = np.array([m.timestamp_us for m in poses], dtype=np.int64)
        q_la = np.array([m.q_la for m in poses])
        q_ua = np.array([m.q_ua for m in poses])
        q_hi = np.array([m.q_hi for m in poses])
        conf = np.array([r.confidence for r in rows])
    s, e, wr = geom.fk_arrays(q_ua, q_la, q_hi, config.body) if len(ts) else (np.zeros((0, 3)),) * 3
    return PoseTrack(mode, ts, q_la, q_ua, q_hi, s, e, wr, conf, dropped, time.perf_counter() - start)
