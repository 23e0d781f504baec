from .codec import (
    FRAME_MAGIC,
    POSE_MAGIC,
    DeviceKind,
    EncodeRejectedError,
    InvalidFrameError,
    Mode,
    PoseMessage,
    SensorFrame,
    ShortPacketError,
    UnknownPacketError,
    WireError,
    decode_frame,
    decode_pose,
    encode_frame,
    encode_pose,
)
from .ingest import BindError, Delivery, FrameRouter, UdpIngestor, ingest_loop
from .publish import PosePublisher, parse_address, publish_pose

__all__ = [
    "FRAME_MAGIC", "POSE_MAGIC", "DeviceKind", "EncodeRejectedError", "InvalidFrameError", "Mode",
    "PoseMessage", "SensorFrame", "ShortPacketError", "UnknownPacketError", "WireError", "decode_frame",
    "decode_pose", "encode_frame", "encode_pose", "BindError", "Delivery", "FrameRouter", "UdpIngestor",
    "ingest_loop", "PosePublisher", "parse_address", "publish_pose",
]
