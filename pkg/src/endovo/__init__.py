"""endovo: exposure enhancement vs. direct visual odometry, at desk scale.

Synthesizes endoscopy-like tube sequences with ground-truth poses and depth,
degrades their exposure, enhances them back, tracks the camera with direct
photometric alignment, and scores the trajectories (APE / RMSE).
"""

from .geometry import Pose, compose, inverse, trans, exp, log
from .trajectory import Trajectory, TrajectoryPoint, parse_tum, serialize_tum
from .camera import CameraModel

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "compose",
    "inverse",
    "trans",
    "exp",
    "log",
    "Trajectory",
    "TrajectoryPoint",
    "parse_tum",
    "serialize_tum",
    "CameraModel",
    "__version__",
]
