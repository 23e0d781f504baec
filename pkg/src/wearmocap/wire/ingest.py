"""UDP ingestion of device streams into per-device ordered queues."""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .codec import DeviceKind, SensorFrame, WireError, decode_frame

log = logging.getLogger(__name__)


class BindError(OSError):
    """The ingestion socket could not be bound."""


@dataclass
class DeviceCounters:
    delivered: int = 0
    dropped: int = 0
    last_seq: Optional[int] = None


@dataclass(frozen=True)
class Delivery:
    frame: SensorFrame
    received_at: float


@dataclass
class FrameRouter:
    """Decodes datagrams and hands frames to one queue per device.

    A frame whose ``seq`` is not above the last one delivered for its device is
    stale or a duplicate and is dropped. The queues are single-producer
    single-consumer: ``route`` runs on the ingestion thread, ``drain`` on the
    estimation thread.
    """

    clock: Callable[[], float] = time.perf_counter
    decode_errors: int = 0
    counters: dict[int, DeviceCounters] = field(default_factory=dict)
    _queues: dict[int, deque] = field(default_factory=dict)
    _kinds: dict[int, DeviceKind] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def route(self, datagram: bytes) -> Optional[SensorFrame]:
        try:
            frame = decode_frame(datagram)
        except WireError as e:
            self.decode_errors += 1
            log.debug("dropping undecodable datagram: %s", e)
            return None
        return self.deliver(frame)

    def deliver(self, frame: SensorFrame, received_at: Optional[float] = None) -> Optional[SensorFrame]:
        dev = frame.device_id
        counters = self.counters.get(dev)
        if counters is None:
            with self._lock:
                counters = self.counters[dev] = DeviceCounters()
                self._queues[dev] = deque()
                self._kinds[dev] = frame.device_kind
        if counters.last_seq is not None and frame.seq <= counters.last_seq:
            counters.dropped += 1
            return None
        counters.last_seq = frame.seq
        counters.delivered += 1
        self._queues[dev].append(Delivery(frame, self.clock() if received_at is None else received_at))
        return frame

    def devices(self, kind: Optional[DeviceKind] = None) -> list[int]:
        with self._lock:
            return [d for d, k in self._kinds.items() if kind is None or k == kind]

    def drain(self, device_id: int) -> list[Delivery]:
        q = self._queues.get(device_id)
        out = []
        while q:
            out.append(q.popleft())
        return out

    def drain_kind(self, kind: DeviceKind) -> list[Delivery]:
        out = []
        for dev in self.devices(kind):
            out.extend(self.drain(dev))
        return out

    def totals(self) -> dict:
        delivered = sum(c.delivered for c in self.counters.values())
        dropped = sum(c.dropped for c in self.counters.values())
        return {"delivered": delivered, "dropped": dropped, "decode_errors": self.decode_errors}


def bind_udp(bind_addr: tuple[str, int], timeout: float = 0.2) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
    try:
        sock.bind(bind_addr)
    except OSError as e:
        sock.close()
        raise BindError(f"cannot bind {bind_addr[0]}:{bind_addr[1]}: {e}") from e
    sock.settimeout(timeout)
    return sock


def ingest_loop(bind_addr, router: FrameRouter, stop: threading.Event, sock: Optional[socket.socket] = None) -> None:
    """Receive datagrams until ``stop`` is set. Decode errors are counted, never raised."""
    own = sock is None
    sock = sock or bind_udp(bind_addr)
    try:
        while not stop.is_set():
            try:
                data, _ = sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError as e:
                if stop.is_set():
                    break
                log.warning("receive failed: %s", e)
                continue
            router.route(data)
    finally:
        if own:
            sock.close()


class UdpIngestor:
    """Runs :func:`ingest_loop` on a background thread."""

    def __init__(self, bind_addr: tuple[str, int], router: FrameRouter):
        self.router = router
        self.sock = bind_udp(bind_addr)
        self.address = self.sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=ingest_loop, args=(bind_addr, router, self._stop, self.sock),
                                        name="wearmocap-ingest", daemon=True)

    def start(self) -> "UdpIngestor":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)
        self.sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
