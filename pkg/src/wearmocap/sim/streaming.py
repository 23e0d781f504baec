"""Send synthesized frames to a hub over UDP."""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..wire import SensorFrame, encode_frame
from ..wire.publish import parse_address

log = logging.getLogger(__name__)


@dataclass
class SendReport:
    sent: int = 0
    dropped: int = 0  # deliberately withheld by loss injection
    failed: int = 0
    wall_time_s: float = 0.0


def interleave(*streams) -> list[SensorFrame]:
    """Merge per-device frame lists into one timestamp-ordered sequence."""
    frames = [f for s in streams for f in (s.frames() if hasattr(s, "frames") else s)]
    return sorted(frames, key=lambda f: (f.timestamp_us, int(f.device_kind)))


def stream(frames: Iterable[SensorFrame], target, realtime: bool = False, loss: float = 0.0,
           seed: int = 0, stop: threading.Event | None = None, sock: socket.socket | None = None) -> SendReport:
    """Encode and send every frame; ``loss`` withholds a random fraction of packets.

    In realtime mode sends are paced to the frame timestamps relative to the
    first frame.
    """
    addr = parse_address(target) if isinstance(target, str) else target
    rng = np.random.default_rng(seed)
    own = sock is None
    sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    report = SendReport()
    start = time.perf_counter()
    t0 = None
    try:
        for frame in frames:
            if stop is not None and stop.is_set():
                break
            if realtime:
                t0 = frame.timestamp_us if t0 is None else t0
                delay = (frame.timestamp_us - t0) * 1e-6 - (time.perf_counter() - start)
                if delay > 0:
                    time.sleep(delay)
            if loss > 0 and rng.random() < loss:
                report.dropped += 1
                continue
            try:
                sock.sendto(encode_frame(frame), addr)
                report.sent += 1
            except OSError as exc:
                report.failed += 1
                log.warning("send to %s:%d failed: %s", addr[0], addr[1], exc)
    finally:
        if own:
            sock.close()
    report.wall_time_s = time.perf_counter() - start
    return report
