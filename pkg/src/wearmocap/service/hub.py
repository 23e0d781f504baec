"""The live hub: UDP ingest, pairing, estimation and pose fan-out on a worker thread."""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from ..estimators import (
    ArmPose,
    CalibrationError,
    CalibrationOffsets,
    FramePairer,
    ModeConfig,
    Status,
    calibrate,
    make_estimator,
)
from ..wire import DeviceKind, FrameRouter, Mode, PosePublisher, PoseMessage, UdpIngestor
from ..wire.publish import Address

log = logging.getLogger(__name__)

STATS_INTERVAL_S = 10.0
STARVED_AFTER_S = 1.0


@dataclass(frozen=True)
class _Arrival:
    timestamp_us: int
    frame: object
    received_at: float


class Hub:
    """One estimation session fed by a UDP ingestor.

    Without a calibration the hub captures the first ``auto_calibrate_s``
    seconds of every needed device as the arm-down rest hold. Poses are
    published only with status OK; ``status`` reports warming-up, starved (a
    phone mode with no phone frames for ``STARVED_AFTER_S``) or diverged.
    """

    def __init__(self, config: ModeConfig, calib: Optional[CalibrationOffsets] = None, params=None,
                 bind: Address = ("127.0.0.1", 0), subscribers: Iterable[Address] = (),
                 auto_calibrate_s: float = 1.0, stats_interval_s: float = STATS_INTERVAL_S,
                 on_stats: Optional[Callable[[str], None]] = None, clock: Callable[[], float] = time.perf_counter):
        config.validate()
        self.config = config
        self.mode = Mode(config.mode)
        self.params = params
        self.clock = clock
        self.router = FrameRouter(clock=clock)
        self.publisher = PosePublisher(subscribers)
        self.calib: Optional[CalibrationOffsets] = None
        self.estimator = None
        self.auto_calibrate_s = auto_calibrate_s
        self._calib_frames: dict[DeviceKind, list] = {}
        if calib is not None:
            self._install(calib)
        else:
            # surface model problems now rather than after the rest hold
            make_estimator(config, CalibrationOffsets.identity(config.body), params)
        self.pairer = FramePairer(int(round(config.pairing_tolerance_ms * 1000))) if config.needs_phone else None
        self.status = Status.WARMING_UP
        self.frames = 0
        self.poses = 0
        self.rejected = 0
        self.latencies = deque(maxlen=2048)
        self.last_pose: Optional[PoseMessage] = None
        self.last_confidence = 0.0
        self._last_phone_at: Optional[float] = None
        self._stats_interval = stats_interval_s
        self._on_stats = on_stats or log.info
        self._next_stats = clock() + stats_interval_s
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.ingestor = UdpIngestor(bind, self.router)
        self.address = self.ingestor.address

    def _install(self, calib: CalibrationOffsets) -> None:
        # raises ConfigError / CalibrationError / weights errors for the caller to map
        self.estimator = make_estimator(self.config, calib, self.params)
        self.calib = calib

    def _needed_kinds(self) -> list[DeviceKind]:
        return [DeviceKind.WATCH] + ([self.config.phone_kind] if self.config.needs_phone else [])

    def _collect_calibration(self, kind: DeviceKind, frame) -> None:
        if kind not in self._needed_kinds():
            return
        self._calib_frames.setdefault(kind, []).append(frame)
        spans = {}
        for k in self._needed_kinds():
            fr = self._calib_frames.get(k, [])
            spans[k] = (fr[-1].timestamp_us - fr[0].timestamp_us) * 1e-6 if len(fr) > 1 else 0.0
        if min(spans.values()) < self.auto_calibrate_s:
            return
        try:
            calib = calibrate(self._calib_frames, body=self.config.body)
        except CalibrationError as e:
            log.warning("automatic calibration failed, retrying: %s", e)
            self._calib_frames.clear()
            return
        self._install(calib)
        self._calib_frames.clear()
        log.info("calibrated from the opening %.1f s rest hold", self.auto_calibrate_s)

    # estimation

    def process_pending(self) -> int:
        """Drain the device queues once and run the estimator on whatever can be paired."""
        events = []
        for d in self.router.drain_kind(DeviceKind.WATCH):
            events.append((d.frame.timestamp_us, 0, _Arrival(d.frame.timestamp_us, d.frame, d.received_at)))
        phone_kind = self.config.phone_kind
        if phone_kind is not None:
            for d in self.router.drain_kind(phone_kind):
                events.append((d.frame.timestamp_us, 1, _Arrival(d.frame.timestamp_us, d.frame, d.received_at)))
                self._last_phone_at = d.received_at
        events.sort(key=lambda e: (e[0], e[1]))
        for _, is_phone, arrival in events:
            kind = phone_kind if is_phone else DeviceKind.WATCH
            if not is_phone:
                self.frames += 1
            if self.estimator is None:
                self._collect_calibration(kind, arrival.frame)
                continue
            if self.pairer is None:
                self._estimate(arrival, None)
                continue
            pairs = self.pairer.push_phone(arrival) if is_phone else self.pairer.push_watch(arrival)
            for w, p in pairs:
                self._estimate(w, p)
        self._update_starved()
        self._maybe_stats()
        return len(events)

    def _update_starved(self) -> None:
        if not self.config.needs_phone or self.frames == 0:
            return
        now = self.clock()
        if self._last_phone_at is None or now - self._last_phone_at > STARVED_AFTER_S:
            self.status = Status.STARVED

    def _estimate(self, watch: _Arrival, phone: Optional[_Arrival]) -> None:
        try:
            out: ArmPose = self.estimator.step(watch.frame, None if phone is None else phone.frame)
        except (ValueError, ArithmeticError) as e:
            # a frame the estimator cannot use (zero quaternion, missing pressure, ...)
            self.rejected += 1
            log.debug("frame rejected: %s", e)
            return
        with self._lock:
            self.status = out.status
            if out.pose is None:
                return
            self.last_pose = out.pose
            self.last_confidence = out.confidence
        self.publisher.publish(out.pose)
        self.poses += 1
        arrived = watch.received_at if phone is None else max(watch.received_at, phone.received_at)
        self.latencies.append(self.clock() - arrived)

    # reporting

    def median_latency_ms(self) -> float:
        lat = list(self.latencies)
        return float(np.median(lat) * 1000.0) if lat else float("nan")

    def stats(self) -> dict:
        totals = self.router.totals()
        pair_drops = self.pairer.dropped if self.pairer is not None else 0
        return {
            "mode": self.mode.label,
            "status": self.status.value,
            "calibrated": self.calib is not None,
            "frames": self.frames,
            "poses": self.poses,
            "drops": totals["dropped"] + totals["decode_errors"] + pair_drops + self.rejected,
            "decode_errors": totals["decode_errors"],
            "stale_frames": totals["dropped"],
            "pairing_drops": pair_drops,
            "rejected": self.rejected,
            "median_latency_ms": self.median_latency_ms(),
            "subscribers": len(self.publisher.subscribers),
        }

    def stats_line(self) -> str:
        s = self.stats()
        return (f"{s['mode']} {s['status']}: frames={s['frames']} poses={s['poses']} drops={s['drops']} "
                f"median_latency_ms={s['median_latency_ms']:.2f}")

    def _maybe_stats(self) -> None:
        now = self.clock()
        if now >= self._next_stats:
            self._next_stats = now + self._stats_interval
            self._on_stats(self.stats_line())

    # lifecycle

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                n = self.process_pending()
            except Exception:  # keep the hub alive; the frame that broke it is gone
                log.exception("estimation step failed")
                n = 0
            if n == 0:
                self._stop.wait(0.0005)

    def start(self) -> "Hub":
        self.ingestor.start()
        self._thread = threading.Thread(target=self._run, name="wearmocap-estimate", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.ingestor.stop()
        self.publisher.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
