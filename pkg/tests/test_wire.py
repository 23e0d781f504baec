import logging
import math
import socket
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wearmocap.wire import (
    DeviceKind,
    EncodeRejectedError,
    FrameRouter,
    InvalidFrameError,
    Mode,
    PosePublisher,
    PoseMessage,
    SensorFrame,
    ShortPacketError,
    UnknownPacketError,
    WireError,
    decode_frame,
    decode_pose,
    encode_frame,
    encode_pose,
    parse_address,
    publish_pose,
)


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def random_frame(rng, kind=None, seq=1):
    kind = DeviceKind(rng.integers(0, 3)) if kind is None else kind
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return SensorFrame(
        device_kind=kind,
        device_id=int(rng.integers(0, 2**32)),
        seq=seq,
        timestamp_us=int(rng.integers(0, 2**63)),
        accel=tuple(f32(v) for v in rng.normal(0, 10, 3)),
        gyro=tuple(f32(v) for v in rng.normal(0, 3, 3)),
        orientation=tuple(f32(v) for v in q),
        pressure_hpa=f32(rng.uniform(950, 1050)) if kind == DeviceKind.WATCH else None,
    )


def random_pose(rng, mode):
    def quat():
        q = rng.normal(size=4)
        return tuple(f32(v) for v in q / np.linalg.norm(q))

    def vec():
        return tuple(f32(v) for v in rng.normal(0, 0.5, 3))

    return PoseMessage(int(rng.integers(0, 2**40)), mode, quat(), quat(),
                       quat() if mode == Mode.POCKET else None, vec(), vec(), vec())


WATCH_REST = SensorFrame(DeviceKind.WATCH, 7, 1, 0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0), 1013.25)


def test_watch_frame_hand_encoded():
    expected = (
        b"WMC1"
        + b"\x00"  # device kind: watch
        + b"\x01"  # flags: pressure present
        + b"\x07\x00\x00\x00"  # device id 7
        + b"\x01\x00\x00\x00"  # seq 1
        + b"\x00" * 8  # timestamp 0
        + b"\x00" * 24  # accel + gyro zeros
        + b"\x00\x00\x80\x3f"  # w = 1.0
        + b"\x00" * 12  # x, y, z
        + b"\x00\x50\x7d\x44"  # 1013.25 = 0x447D5000
    )
    assert len(expected) == 66
    assert encode_frame(WATCH_REST) == expected
    assert decode_frame(expected) == WATCH_REST


def test_phone_frame_has_no_pressure_field():
    phone = SensorFrame(DeviceKind.PHONE_POCKET, 3, 1, 0, (0.0,) * 3, (0.0,) * 3, (1.0, 0.0, 0.0, 0.0))
    assert len(encode_frame(phone)) == 62


def test_round_trip_random_frames():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        f = random_frame(rng)
        assert decode_frame(encode_frame(f)) == f


@pytest.mark.parametrize(
    "change",
    [
        {"accel": (math.nan, 0.0, 0.0)},
        {"gyro": (0.0, math.inf, 0.0)},
        {"pressure_hpa": None},
        {"pressure_hpa": 1500.0},
        {"orientation": (0.9, 0.0, 0.0, 0.0)},
        {"seq": -1},
    ],
)
def test_encode_rejects_invalid(change):
    bad = SensorFrame(**{**WATCH_REST.__dict__, **change})
    with pytest.raises(EncodeRejectedError):
        encode_frame(bad)


def test_short_and_unknown_packets():
    data = encode_frame(WATCH_REST)
    with pytest.raises(ShortPacketError):
        decode_frame(data[:65])
    with pytest.raises(ShortPacketError):
        decode_frame(data[:61])
    with pytest.raises(UnknownPacketError):
        decode_frame(b"XXXX" + data[4:])
    with pytest.raises(InvalidFrameError):
        decode_frame(data + b"\x00")


def test_decode_checks_invariants():
    data = bytearray(encode_frame(WATCH_REST))
    struct.pack_into("<f", data, 62, 100.0)
    with pytest.raises(InvalidFrameError):
        decode_frame(bytes(data))
    data = bytearray(encode_frame(WATCH_REST))
    data[4] = 9
    with pytest.raises(InvalidFrameError):
        decode_frame(bytes(data))


@given(st.binary(max_size=120))
def test_decode_is_total(buf):
    for fn in (decode_frame, decode_pose):
        try:
            fn(buf)
        except WireError:
            pass


@given(st.binary(min_size=58, max_size=62))
def test_decode_is_total_with_valid_magic(tail):
    for magic, fn in ((b"WMC1", decode_frame), (b"WMP1", decode_pose)):
        try:
            fn(magic + tail)
        except WireError:
            pass


@pytest.mark.parametrize("mode", list(Mode))
def test_pose_round_trip(mode):
    rng = np.random.default_rng(int(mode))
    for _ in range(200):
        msg = random_pose(rng, mode)
        data = encode_pose(msg)
        assert len(data) == (98 if mode == Mode.POCKET else 82)
        assert decode_pose(data) == msg


def test_pose_requires_hip_iff_pocket():
    rng = np.random.default_rng(1)
    msg = random_pose(rng, Mode.WATCH_ONLY)
    with pytest.raises(EncodeRejectedError):
        encode_pose(PoseMessage(**{**msg.__dict__, "mode": Mode.POCKET}))


def seq_frames(seqs, device_id=1):
    return [SensorFrame(DeviceKind.WATCH, device_id, s, s * 1000, (0.0,) * 3, (0.0,) * 3, (1.0, 0, 0, 0), 1000.0)
            for s in seqs]


@pytest.mark.parametrize("seqs, delivered, dropped", [([1, 2, 3], [1, 2, 3], 0), ([1, 3, 2], [1, 3], 1),
                                                      ([5, 5, 6], [5, 6], 1)])
def test_router_stale_policy(seqs, delivered, dropped):
    router = FrameRouter()
    for f in seq_frames(seqs):
        router.route(encode_frame(f))
    assert [d.frame.seq for d in router.drain(1)] == delivered
    assert router.counters[1].dropped == dropped


def test_router_counts_decode_errors():
    router = FrameRouter()
    router.route(b"garbage")
    router.route(b"WMC1" + b"\x00" * 10)
    assert router.decode_errors == 2
    assert router.totals()["delivered"] == 0


def test_router_keeps_devices_apart():
    router = FrameRouter()
    for f in seq_frames([1, 2], device_id=1) + seq_frames([1], device_id=2):
        router.route(encode_frame(f))
    assert sorted(router.devices()) == [1, 2]
    assert len(router.drain(2)) == 1


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_address("9001") == ("127.0.0.1", 9001)


def test_publish_no_subscribers():
    assert publish_pose(random_pose(np.random.default_rng(0), Mode.UPPER_ARM), []) == 0


def _listener():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    s.settimeout(2.0)
    return s


def test_publish_loopback_round_trip():
    msg = random_pose(np.random.default_rng(2), Mode.POCKET)
    with _listener() as s:
        assert publish_pose(msg, [s.getsockname()]) == 1
        data, _ = s.recvfrom(2048)
    assert decode_pose(data) == msg


def test_publish_one_unreachable(caplog):
    msg = random_pose(np.random.default_rng(3), Mode.WATCH_ONLY)
    a, b = _listener(), _listener()
    try:
        pub = PosePublisher([a.getsockname(), ("127.0.0.1", 0), b.getsockname()])
        with caplog.at_level(logging.WARNING, logger="wearmocap.wire.publish"):
            assert pub.publish(msg) == 2
        assert pub.failures == 1
        assert len([r for r in caplog.records if "failed" in r.message]) == 1
        for s in (a, b):
            assert decode_pose(s.recvfrom(2048)[0]) == msg
        pub.close()
    finally:
        a.close()
        b.close()
