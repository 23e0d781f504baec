"""UDP fan-out of pose results."""

from __future__ import annotations

import logging
import socket
import threading
from typing import Iterable, Optional

from .codec import PoseMessage, encode_pose

log = logging.getLogger(__name__)

Address = tuple[str, int]


def parse_address(text: str, default_host: str = "127.0.0.1") -> Address:
    host, sep, port = text.strip().rpartition(":")
    if not sep:
        host, port = default_host, text
    return (host or default_host, int(port))


def publish_pose(msg: PoseMessage, subscribers: Iterable[Address], sock: Optional[socket.socket] = None) -> int:
    """Send one datagram per subscriber; returns the number sent.

    A failing subscriber is logged and skipped.
    """
    subscribers = list(subscribers)
    if not subscribers:
        return 0
    payload = encode_pose(msg)
    own = sock is None
    sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sent = 0
    try:
        for addr in subscribers:
            try:
                sock.sendto(payload, addr)
                sent += 1
            except OSError as e:
                log.warning("publish to %s:%s failed: %s", addr[0], addr[1], e)
    finally:
        if own:
            sock.close()
    return sent


class PosePublisher:
    """Keeps one socket and a mutable subscriber list for the hub."""

    def __init__(self, subscribers: Iterable[Address] = ()):
        self._lock = threading.Lock()
        self._subscribers: list[Address] = list(dict.fromkeys(subscribers))
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.published = 0
        self.failures = 0

    @property
    def subscribers(self) -> list[Address]:
        with self._lock:
            return list(self._subscribers)

    def add(self, addr: Address) -> None:
        with self._lock:
            if addr not in self._subscribers:
                self._subscribers.append(addr)

    def remove(self, addr: Address) -> bool:
        with self._lock:
            if addr in self._subscribers:
                self._subscribers.remove(addr)
                return True
            return False

    def publish(self, msg: PoseMessage) -> int:
        subs = self.subscribers
        sent = publish_pose(msg, subs, self.sock)
        self.published += 1
        self.failures += len(subs) - sent
        return sent

    def close(self) -> None:
        self.sock.close()
