"""In-motion coarse alignment of a strapdown INS aided by GNSS velocity,
with compensation of the GNSS antenna lever arm."""

from .alignment import (
    AlignmentAccumulator,
    CompensationMode,
    LeverArm,
    ObservationPair,
    UnobservableError,
    run_epochs,
    solve_attitude,
)
from .attitude import Frame, FrameVector, RotationMatrix, UnitQuaternion, attitude_error_angles
from .config import ConfigError, ExperimentConfig, parse_config
from .earth import GeodeticPosition, earth_kinematics

__version__ = "0.1.0"

__all__ = [
    "AlignmentAccumulator",
    "CompensationMode",
    "ConfigError",
    "ExperimentConfig",
    "Frame",
    "FrameVector",
    "GeodeticPosition",
    "LeverArm",
    "ObservationPair",
    "RotationMatrix",
    "UnitQuaternion",
    "UnobservableError",
    "attitude_error_angles",
    "earth_kinematics",
    "parse_config",
    "run_epochs",
    "solve_attitude",
]
