"""Event-camera / wheel-odometry spatio-temporal calibration toolkit."""

from evcalib.core import (
    Event,
    EventStream,
    EvCalibError,
    Frame,
    Rotation3,
    TrajectoryPose,
    VelocitySample,
    VelocitySeries,
    interpolate_direction,
    rotation_error_deg,
)

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventStream",
    "EvCalibError",
    "Frame",
    "Rotation3",
    "TrajectoryPose",
    "VelocitySample",
    "VelocitySeries",
    "interpolate_direction",
    "rotation_error_deg",
    "__version__",
]
