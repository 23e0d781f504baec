"""Wrist-position error metrics and the mode-comparison report."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..estimators import ModeConfig, calibrate_recording, run_session
from ..lstm import load_weights
from ..sim.trajectory import Trajectory
from ..wire import Mode

ALIGN_TOLERANCE_US = 20_000
REPORT_COLUMNS = ("mode", "mean_cm", "std_cm", "p95_cm", "n", "ms_per_frame", "trials")


class EmptyOverlapError(ValueError):
    pass


class ModelMissingError(FileNotFoundError):
    def __init__(self, mode: Mode, path):
        super().__init__(f"{Mode(mode).label}: model file {path} not found")
        self.mode = Mode(mode)
        self.path = path


def _times_and_wrists(stream) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(stream, "wrist") and hasattr(stream, "timestamp_us") and not callable(stream.wrist):
        ts = np.asarray(stream.timestamp_us, dtype=np.int64)
        wrist = np.asarray(stream.wrist, dtype=float)
        if ts.ndim == 1:
            return ts, wrist.reshape(len(ts), 3)
    items = list(stream)
    if not items:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3))
    ts = np.array([it.timestamp_us for it in items], dtype=np.int64)
    wrist = np.array([it.joints.wrist if hasattr(it, "joints") else it.wrist for it in items], dtype=float)
    return ts, wrist


def position_error(estimate, truth, tolerance_us: int = ALIGN_TOLERANCE_US) -> np.ndarray:
    """Wrist distance in cm for every estimate that has a truth frame within ``tolerance_us``.

    ``estimate`` is a :class:`PoseTrack` or a sequence of pose messages;
    ``truth`` a :class:`Trajectory` or a sequence of ground-truth frames.
    """
    est_t, est_w = _times_and_wrists(estimate)
    tru_t, tru_w = _times_and_wrists(truth)
    if len(est_t) == 0 or len(tru_t) == 0:
        raise EmptyOverlapError("no frames to align")
    order = np.argsort(tru_t, kind="stable")
    tru_t, tru_w = tru_t[order], tru_w[order]
    j = np.clip(np.searchsorted(tru_t, est_t), 1, len(tru_t) - 1) if len(tru_t) > 1 else np.zeros(len(est_t), int)
    if len(tru_t) > 1:
        left_closer = np.abs(est_t - tru_t[j - 1]) <= np.abs(tru_t[j] - est_t)
        j = np.where(left_closer, j - 1, j)
    ok = np.abs(tru_t[j] - est_t) <= tolerance_us
    if not np.any(ok):
        raise EmptyOverlapError(f"no estimate within {tolerance_us / 1000:g} ms of a truth frame")
    return np.linalg.norm(est_w[ok] - tru_w[j[ok]], axis=1) * 100.0


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    p95: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.1f} ± {self.std:.1f}"


def summarize(series) -> Summary:
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot summarise an empty series")
    return Summary(float(np.mean(x)), float(np.std(x)), float(np.percentile(x, 95)), int(x.size))


@dataclass
class ModeRow:
    mode: Mode
    summary: Summary
    ms_per_frame: float
    trials: int = 1

    def csv_fields(self, timing: bool = True) -> list[str]:
        s = self.summary
        ms = f"{self.ms_per_frame:.4f}" if timing else ""
        return [Mode(self.mode).label, f"{s.mean:.6f}", f"{s.std:.6f}", f"{s.p95:.6f}", str(s.n), ms, str(self.trials)]


@dataclass
class ModeReport:
    rows: list[ModeRow]

    def row(self, mode: Mode) -> ModeRow:
        for r in self.rows:
            if r.mode == Mode(mode):
                return r
        raise KeyError(Mode(mode).label)

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields(timing))
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'mode':<10} {'wrist error cm':>16} {'p95':>7} {'frames':>8} {'trials':>6} {'ms/frame':>9}"]
        for r in self.rows:
            lines.append(f"{Mode(r.mode).label:<10} {str(r.summary):>16} {r.summary.p95:>7.1f} {r.summary.n:>8d} "
                         f"{r.trials:>6d} {r.ms_per_frame:>9.3f}")
        return "\n".join(lines)


def _load_models(configs: Sequence[ModeConfig], models: Mapping[Mode, object]):
    params = {}
    for cfg in configs:
        mode = Mode(cfg.mode)
        if mode == Mode.POCKET:
            continue
        path = models.get(mode, cfg.weights_path) if models else cfg.weights_path
        if path is None or not Path(path).is_file():
            raise ModelMissingError(mode, path)
        params[mode] = load_weights(path)
    return params


def compare_modes(recordings: Iterable[tuple[Trajectory, Mapping]], configs: Sequence[ModeConfig],
                  models: Optional[Mapping[Mode, object]] = None, calib_seconds: float = 1.0) -> ModeReport:
    """Run every mode on every recording and summarise wrist error per mode.

    Each recording is calibrated on its own opening rest hold. ``models``
    maps learned modes to weight files (falling back to each config's
    ``weights_path``); a missing file raises :class:`ModelMissingError`.
    """
    params = _load_models(configs, models or {})
    recordings = list(recordings)
    errors = {Mode(c.mode): [] for c in configs}
    seconds = {Mode(c.mode): 0.0 for c in configs}
    frames = {Mode(c.mode): 0 for c in configs}
    for truth, sensors in recordings:
        calib = calibrate_recording(sensors, calib_seconds, truth.body)
        for cfg in configs:
            mode = Mode(cfg.mode)
            start = time.perf_counter()
            track = run_session(cfg, sensors, calib, params=params.get(mode))
            seconds[mode] += time.perf_counter() - start
            frames[mode] += max(len(track), 1)
            errors[mode].append(position_error(track, truth))
    rows = [ModeRow(Mode(c.mode), summarize(np.concatenate(errors[Mode(c.mode)])),
                    1000.0 * seconds[Mode(c.mode)] / frames[Mode(c.mode)], len(recordings)) for c in configs]
    return ModeReport(rows)

