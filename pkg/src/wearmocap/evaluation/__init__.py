"""Error metrics, mode reports, filter oracles and the committed-seed benchmark scenarios."""

from .metrics import (
    REPORT_COLUMNS,
    EmptyOverlapError,
    ModelMissingError,
    ModeReport,
    ModeRow,
    Summary,
    compare_modes,
    position_error,
    summarize,
)
from .oracles import (
    LinearGaussianSystem,
    OracleError,
    gaussian_log_likelihood,
    kalman_oracle,
    particle_oracle,
    systematic_resample,
)

__all__ = [
    "REPORT_COLUMNS", "EmptyOverlapError", "ModelMissingError", "ModeReport", "ModeRow", "Summary",
    "compare_modes", "position_error", "summarize", "LinearGaussianSystem", "OracleError",
    "gaussian_log_likelihood", "kalman_oracle", "particle_oracle", "systematic_resample",
]
