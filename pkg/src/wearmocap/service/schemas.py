"""Pydantic models of the hub's HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    mode: str
    calibrated: bool


class Stats(BaseModel):
    mode: str
    status: str
    calibrated: bool
    frames: int
    poses: int
    drops: int
    decode_errors: int
    stale_frames: int
    pairing_drops: int
    rejected: int
    median_latency_ms: Optional[float] = Field(None, description="None until the first pose")
    subscribers: int


class Pose(BaseModel):
    timestamp_us: int
    mode: str
    status: str
    confidence: float
    q_la: list[float] = Field(min_length=4, max_length=4)
    q_ua: list[float] = Field(min_length=4, max_length=4)
    q_hi: Optional[list[float]] = None
    shoulder: list[float] = Field(min_length=3, max_length=3)
    elbow: list[float] = Field(min_length=3, max_length=3)
    wrist: list[float] = Field(min_length=3, max_length=3)


class Subscriber(BaseModel):
    host: str = "127.0.0.1"
    port: int = Field(ge=1, le=65535)


class Calibration(BaseModel):
    heading: list[float]
    mounts: dict[str, list[float]]
    ref_pressure_hpa: float
    ref_wrist_height_m: float
    spread_deg: dict[str, float]
