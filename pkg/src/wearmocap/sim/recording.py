"""CSV recordings: one row per frame, sensors and ground truth side by side.

Column order (stable)::

    timestamp_us
    {dev}_id, {dev}_seq, {dev}_t_us, {dev}_ax, {dev}_ay, {dev}_az,
    {dev}_gx, {dev}_gy, {dev}_gz, {dev}_qw, {dev}_qx, {dev}_qy, {dev}_qz
        for dev in watch, ua (upper-arm phone), pk (pocket phone)
    watch_pressure
    true_{seg}_qw..qz       for seg in la, ua, hi     truth orientations
    true_{joint}_x..z       for joint in shoulder, elbow, wrist    truth positions (m)

Floats are printed with 9 significant digits, which is exact for the f32
sensor channels.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from ..geom import BodyMeasurements
from ..wire import DeviceKind
from .sensors import DeviceStream
from .trajectory import Trajectory

DEVICE_PREFIX = {DeviceKind.WATCH: "watch", DeviceKind.PHONE_UPPER_ARM: "ua", DeviceKind.PHONE_POCKET: "pk"}
_DEVICE_FIELDS = ["id", "seq", "t_us", "ax", "ay", "az", "gx", "gy", "gz", "qw", "qx", "qy", "qz"]
_INT_FIELDS = {"id", "seq", "t_us"}


def _columns() -> list[str]:
    cols = ["timestamp_us"]
    for prefix in DEVICE_PREFIX.values():
        cols += [f"{prefix}_{f}" for f in _DEVICE_FIELDS]
    cols.append("watch_pressure")
    for seg in ("la", "ua", "hi"):
        cols += [f"true_{seg}_q{c}" for c in "wxyz"]
    for joint in ("shoulder", "elbow", "wrist"):
        cols += [f"true_{joint}_{c}" for c in "xyz"]
    return cols


COLUMNS = _columns()


class RecordingParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def _formats() -> list[str]:
    fmts = []
    for col in COLUMNS:
        field = col.split("_", 1)[1] if "_" in col else col
        fmts.append("%d" if col == "timestamp_us" or field in _INT_FIELDS else "%.9g")
    return fmts


def recording_table(truth: Trajectory, sensors: dict[DeviceKind, DeviceStream]) -> np.ndarray:
    n = len(truth)
    parts = [truth.timestamp_us[:, None].astype(float)]
    for kind in DEVICE_PREFIX:
        s = sensors.get(kind)
        if s is None:
            raise ValueError(f"recording needs all devices; missing {kind.name}")
        if len(s) != n:
            raise ValueError(f"{kind.name} has {len(s)} frames, truth has {n}")
        parts += [np.full((n, 1), s.device_id, dtype=float), np.arange(1, n + 1, dtype=float)[:, None],
                  s.timestamp_us[:, None].astype(float), s.accel, s.gyro, s.orientation]
    parts.append(sensors[DeviceKind.WATCH].pressure[:, None])
    parts += [truth.q_la, truth.q_ua, truth.q_hi, truth.shoulder, truth.elbow, truth.wrist]
    return np.hstack(parts)


def write_recording(truth: Trajectory, sensors: dict[DeviceKind, DeviceStream], path) -> None:
    write_table(recording_table(truth, sensors), path)


def write_table(table: np.ndarray, path) -> None:
    """Write rows laid out as :data:`COLUMNS` (integer columns must hold whole numbers)."""
    if table.ndim != 2 or table.shape[1] != len(COLUMNS):
        raise ValueError(f"table needs {len(COLUMNS)} columns")
    buf = io.StringIO()
    np.savetxt(buf, table, fmt=_formats(), delimiter=",", header=",".join(COLUMNS), comments="")
    Path(path).write_text(buf.getvalue())


def _locate_error(path, ncols: int) -> RecordingParseError:
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                continue
            if len(row) != ncols:
                return RecordingParseError(f"expected {ncols} fields, found {len(row)}", lineno)
            for name, cell in zip(COLUMNS, row):
                try:
                    float(cell)
                except ValueError:
                    return RecordingParseError(f"column {name}: cannot parse {cell!r}", lineno)
    return RecordingParseError("malformed recording")


def read_recording(path: str | os.PathLike, body: BodyMeasurements | None = None
                   ) -> tuple[Trajectory, dict[DeviceKind, DeviceStream]]:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise RecordingParseError(f"missing column {missing[0]!r}", 1)
    if header != COLUMNS:
        raise RecordingParseError("columns out of order", 1)
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError:
        raise _locate_error(path, len(COLUMNS)) from None
    if len(table) < 2:
        raise RecordingParseError("recording needs at least two rows")
    col = {c: i for i, c in enumerate(COLUMNS)}

    def block(names, f32=False):
        out = table[:, [col[n] for n in names]]
        return out.astype(np.float32).astype(np.float64) if f32 else out

    ts = table[:, 0].astype(np.int64)
    rate = round((len(ts) - 1) * 1e6 / float(ts[-1] - ts[0]), 6)
    sensors = {}
    for kind, p in DEVICE_PREFIX.items():
        # live captures leave a device's cells empty on rows it did not report
        rows = np.isfinite(table[:, col[f"{p}_qw"]])
        if not rows.any():
            continue
        sensors[kind] = DeviceStream(
            kind, int(table[rows][0, col[f"{p}_id"]]), table[rows, col[f"{p}_t_us"]].astype(np.int64),
            block([f"{p}_a{c}" for c in "xyz"], True)[rows], block([f"{p}_g{c}" for c in "xyz"], True)[rows],
            block([f"{p}_q{c}" for c in "wxyz"], True)[rows],
            block(["watch_pressure"], True)[rows, 0] if kind == DeviceKind.WATCH else None,
        )
    if DeviceKind.WATCH not in sensors:
        raise RecordingParseError("recording has no watch samples")
    truth = Trajectory(ts, block([f"true_la_q{c}" for c in "wxyz"]), block([f"true_ua_q{c}" for c in "wxyz"]),
                       block([f"true_hi_q{c}" for c in "wxyz"]), block([f"true_shoulder_{c}" for c in "xyz"]),
                       block([f"true_elbow_{c}" for c in "xyz"]), block([f"true_wrist_{c}" for c in "xyz"]),
                       rate, body or BodyMeasurements())
    return truth, sensors
