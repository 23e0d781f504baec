"""Mode pipelines: calibration, pairing, features and the three estimators."""

from .calibration import (
    CalibrationError,
    CalibrationOffsets,
    CalibrationUnstableError,
    Posture,
    calibrate,
    load_calibration,
    rest_wrist_height,
    save_calibration,
)
from .features import (
    OUTPUT_CHANNELS,
    UPPER_ARM_CHANNELS,
    WATCH_CHANNELS,
    align_targets,
    channel_count,
    extract_features,
    feature_statistics,
)
from .pairing import FramePairer, PairingResult, pair_frames
from .pipelines import (
    ArmPose,
    ConfigError,
    LstmEstimator,
    ModeConfig,
    PocketConfig,
    PocketEstimator,
    Status,
    assemble_pose,
    make_estimator,
    pocket_step,
    upper_arm_step,
    watch_only_step,
)
from .session import PoseTrack, calibrate_recording, fit_model, run_session, session_features, training_windows

__all__ = [
    "CalibrationError", "CalibrationOffsets", "CalibrationUnstableError", "Posture", "calibrate",
    "load_calibration", "rest_wrist_height", "save_calibration", "OUTPUT_CHANNELS", "UPPER_ARM_CHANNELS",
    "WATCH_CHANNELS", "align_targets", "channel_count", "extract_features", "feature_statistics", "FramePairer",
    "PairingResult", "pair_frames", "ArmPose", "ConfigError", "LstmEstimator", "ModeConfig", "PocketConfig",
    "PocketEstimator", "Status", "assemble_pose", "make_estimator", "pocket_step", "upper_arm_step",
    "watch_only_step", "PoseTrack", "calibrate_recording", "fit_model", "run_session", "session_features", "training_windows",
]
