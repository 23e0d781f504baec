"""Pair watch frames with phone frames by timestamp, without clock synchronisation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_TOLERANCE_MS = 50.0
_OFFSET_HISTORY = 15


@dataclass
class FramePairer:
    """Streaming nearest-timestamp pairing.

    Each watch frame is matched to the unused phone frame closest to
    ``t_watch + offset``, where ``offset`` is the running median of the
    phone-minus-watch gap of accepted pairs (so a constant clock offset below
    the tolerance keeps everything paired). A candidate that sits closer to
    the next expected watch frame is left for that frame and the current
    watch frame is dropped; this keeps a gap in the phone stream from shifting
    every later pairing by one frame. The check starts with the first
    accepted pair, when the offset becomes known. Phone frames are never
    used twice.

    A watch frame is decided once a phone frame at or after its target time
    has arrived, once the watch stream has run ``tolerance`` past it, or on
    :meth:`flush`.
    """

    tolerance_us: int = int(DEFAULT_TOLERANCE_MS * 1000)
    dropped: int = 0
    paired: int = 0
    _watch: deque = field(default_factory=deque)
    _phone: deque = field(default_factory=deque)
    _offsets: deque = field(default_factory=lambda: deque(maxlen=_OFFSET_HISTORY))
    _offset: float = 0.0
    _period: float | None = None
    _last_watch_t: int | None = None
    _last_phone_t: int | None = None

    def push_watch(self, frame) -> list[tuple]:
        t = frame.timestamp_us
        if self._last_watch_t is not None and t > self._last_watch_t:
            self._period = float(t - self._last_watch_t)
        self._last_watch_t = t
        self._watch.append(frame)
        return self._resolve(final=False)

    def push_phone(self, frame) -> list[tuple]:
        self._last_phone_t = frame.timestamp_us
        self._phone.append(frame)
        return self._resolve(final=False)

    def flush(self) -> list[tuple]:
        return self._resolve(final=True)

    @property
    def pending(self) -> int:
        return len(self._watch)

    def _ready(self, t_watch: int) -> bool:
        target = t_watch + self._offset
        if self._last_phone_t is not None and self._last_phone_t >= target:
            return True
        return self._last_watch_t - t_watch > self.tolerance_us + abs(self._offset)

    def _resolve(self, final: bool) -> list[tuple]:
        out = []
        while self._watch and (final or self._ready(self._watch[0].timestamp_us)):
            w = self._watch.popleft()
            t_w = w.timestamp_us
            target = t_w + self._offset
            # phones too old for this (and any later) watch frame
            while self._phone and self._phone[0].timestamp_us < t_w - self.tolerance_us:
                self._phone.popleft()
            best, best_d = None, None
            for k, p in enumerate(self._phone):
                if abs(p.timestamp_us - t_w) > self.tolerance_us:
                    if p.timestamp_us > t_w:
                        break
                    continue
                d = abs(p.timestamp_us - target)
                if best_d is None or d < best_d:
                    best, best_d = k, d
            if best is None:
                self.dropped += 1
                continue
            p = self._phone[best]
            if self._period is not None and self._offsets and p.timestamp_us > target:
                if abs(p.timestamp_us - (target + self._period)) < best_d:
                    self.dropped += 1
                    continue
            for _ in range(best + 1):
                self._phone.popleft()
            self._offsets.append(p.timestamp_us - t_w)
            self._offset = float(np.median(self._offsets))
            self.paired += 1
            out.append((w, p))
        return out


@dataclass
class PairingResult:
    pairs: list[tuple]
    dropped: int


def pair_frames(watch: Sequence, phone: Sequence, tolerance_ms: float = DEFAULT_TOLERANCE_MS) -> PairingResult:
    """Batch pairing of two timestamp-ordered queues (see :class:`FramePairer`)."""
    pairer = FramePairer(int(round(tolerance_ms * 1000)))
    events = [(f.timestamp_us, 0, f) for f in watch] + [(f.timestamp_us, 1, f) for f in phone]
    events.sort(key=lambda e: (e[0], e[1]))
    pairs = []
    for _, is_phone, f in events:
        pairs += pairer.push_phone(f) if is_phone else pairer.push_watch(f)
    pairs += pairer.flush()
    return PairingResult(pairs, pairer.dropped)
