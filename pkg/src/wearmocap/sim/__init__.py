"""Simulated arm trajectories and the devices riding them."""

from __future__ import annotations

from .recording import COLUMNS, RecordingParseError, read_recording, write_recording
from .sensors import (
    DEVICE_IDS,
    GRAVITY,
    DeviceStream,
    NoiseConfig,
    SensorSynthesisError,
    height_from_pressure,
    pressure_at,
    synth_sensors,
)
from .streaming import SendReport, interleave, stream
from .trajectory import (
    GroundTruthFrame,
    SpecError,
    Trajectory,
    TrajectorySpec,
    Workspace,
    body_relative,
    gen_trajectory,
)


def simulate(spec: TrajectorySpec, noise: NoiseConfig | None = None):
    """Trajectory plus all three device streams."""
    truth = gen_trajectory(spec)
    return truth, synth_sensors(truth, noise or NoiseConfig(seed=spec.seed))


__all__ = [
    "COLUMNS", "RecordingParseError", "read_recording", "write_recording", "DEVICE_IDS", "GRAVITY",
    "DeviceStream", "NoiseConfig", "SensorSynthesisError", "height_from_pressure", "pressure_at",
    "synth_sensors", "SendReport", "interleave", "stream", "GroundTruthFrame", "SpecError", "Trajectory",
    "TrajectorySpec", "Workspace", "body_relative", "gen_trajectory", "simulate",
]
