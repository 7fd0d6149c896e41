"""Timestamped pose sequences: text IO, association, anchoring, alignment.

The only interchange format is the plain-text one used by common trajectory
evaluation tools: one `timestamp tx ty tz qx qy qz qw` line per pose,
`#` comments, LF or CRLF accepted, LF emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose

# Half a frame interval at 25 fps; frames from one video share a clock.
DEFAULT_ASSOCIATION_TOLERANCE = 0.02

QUAT_NORM_TOL = 1e-3


class TrajectoryFormatError(ValueError):
    """Malformed or invalid trajectory text."""


class AssociationError(ValueError):
    """No timestamp overlap between two trajectories."""


class AlignmentError(ValueError):
    """Degenerate point configuration for similarity alignment."""


@dataclass
class TrajectoryPoint:
    timestamp: float
    pose: Pose

    def __post_init__(self):
        if not np.isfinite(self.timestamp) or self.timestamp < 0.0:
            raise ValueError(f"timestamp must be finite and non-negative, got {self.timestamp}")


@dataclass
class Trajectory:
    points: list[TrajectoryPoint] = field(default_factory=list)
    label: str = ""

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.points])

    def positions(self) -> np.ndarray:
        return np.array([p.pose.translation for p in self.points]).reshape(-1, 3)

    def path_length(self) -> float:
        """Total travelled distance (sum of consecutive translation deltas)."""
        pos = self.positions()
        if len(pos) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())


@dataclass
class MatchedPair:
    gt: TrajectoryPoint
    est: TrajectoryPoint


def pose_from_quaternion(qx, qy, qz, qw, translation) -> Pose:
    r = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
    return Pose(r, translation)


def pose_to_quaternion(pose: Pose) -> np.ndarray:
    """Quaternion as [qx, qy, qz, qw]."""
    return Rotation.from_matrix(pose.rotation).as_quat()


def parse_tum(text: str, label: str = "") -> Trajectory:
    """Parse trajectory text into a Trajectory.

    Each non-comment line must hold 8 whitespace-separated decimals:
    timestamp, translation, quaternion (x y z w). Quaternions are normalized
    on ingest when their norm is within 1e-3 of 1, rejected otherwise.
    """
    points: list[TrajectoryPoint] = []
    prev_t = -np.inf
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryFormatError(
                f"line {lineno}: expected 8 fields, got {len(fields)}"
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError as err:
            raise TrajectoryFormatError(f"line {lineno}: non-numeric field ({err})") from None
        t, tx, ty, tz, qx, qy, qz, qw = vals
        if not np.isfinite(t) or t < 0.0:
            raise TrajectoryFormatError(f"line {lineno}: invalid timestamp {t}")
        if t <= prev_t:
            raise TrajectoryFormatError(
                f"line {lineno}: non-increasing timestamp {t} (previous {prev_t})"
            )
        q = np.array([qx, qy, qz, qw])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise TrajectoryFormatError(
                f"line {lineno}: quaternion norm {norm:.6f} deviates from 1 by more than {QUAT_NORM_TOL}"
            )
        q = q / norm
        points.append(TrajectoryPoint(t, pose_from_quaternion(*q, (tx, ty, tz))))
        prev_t = t
    if not points:
        raise TrajectoryFormatError("no trajectory points found")
    return Trajectory(points, label)


def _fmt(x: float) -> str:
    return f"{x:.15g}"


def serialize_tum(traj: Trajectory) -> str:
    """Serialize to text; parse_tum() of the output reproduces the input."""
    lines = []
    for p in traj.points:
        t = p.pose.translation
        q = pose_to_quaternion(p.pose)
        fields = [f"{p.timestamp:.9f}"] + [_fmt(v) for v in (*t, *q)]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def associate(
    gt: Trajectory,
    est: Trajectory,
    tolerance: float = DEFAULT_ASSOCIATION_TOLERANCE,
) -> list[MatchedPair]:
    """Greedy nearest-timestamp matching; each point used at most once.

    Pairs are returned ordered by ground-truth timestamp. Raises
    AssociationError when nothing matches within the tolerance.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    gt_t = gt.timestamps()
    est_t = est.timestamps()
    candidates = []
    j0 = 0
    for i, t in enumerate(gt_t):
        while j0 < len(est_t) and est_t[j0] < t - tolerance:
            j0 += 1
        j = j0
        while j < len(est_t) and est_t[j] <= t + tolerance:
            candidates.append((abs(est_t[j] - t), i, j))
            j += 1
    candidates.sort()
    used_gt: set[int] = set()
    used_est: set[int] = set()
    matches = []
    for _, i, j in candidates:
        if i in used_gt or j in used_est:
            continue
        used_gt.add(i)
        used_est.add(j)
        matches.append((i, j))
    if not matches:
        raise AssociationError(
            f"no overlap between '{gt.label}' and '{est.label}' within {tolerance}s"
        )
    matches.sort()
    return [MatchedPair(gt.points[i], est.points[j]) for i, j in matches]


def anchor_to_first(traj: Trajectory) -> Trajectory:
    """Express all poses relative to the first one (which becomes identity)."""
    if not traj.points:
        raise ValueError("cannot anchor an empty trajectory")
    inv0 = traj.points[0].pose.inverse()
    points = [TrajectoryPoint(p.timestamp, inv0 @ p.pose) for p in traj.points]
    return Trajectory(points, traj.label)


def align_umeyama(pairs: list[MatchedPair], with_scale: bool = False) -> tuple[Pose, float]:
    """Least-squares similarity transform mapping estimated onto ground truth.

    Returns (pose, scale) minimizing sum ||gt_i - (scale * R @ est_i + t)||^2.
    With with_scale=False the scale is fixed to 1. Requires at least 3
    non-collinear pairs.
    """
    if len(pairs) < 3:
        raise AlignmentError(f"need at least 3 pairs, got {len(pairs)}")
    gt = np.array([p.gt.pose.translation for p in pairs])
    est = np.array([p.est.pose.translation for p in pairs])
    mu_gt = gt.mean(axis=0)
    mu_est = est.mean(axis=0)
    gt_c = gt - mu_gt
    est_c = est - mu_est
    cov = gt_c.T @ est_c / len(pairs)
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= 1e-12 * max(d[0], 1e-300):
        raise AlignmentError("degenerate (collinear or coincident) point set")
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    r = (u * s) @ vt
    if with_scale:
        var_est = (est_c**2).sum() / len(pairs)
        scale = float((d * s).sum() / var_est)
    else:
        scale = 1.0
    t = mu_gt - scale * (r @ mu_est)
    return Pose(r, t), scale


def apply_alignment(traj: Trajectory, transform: Pose, scale: float = 1.0) -> Trajectory:
    """Apply a similarity transform to every pose of a trajectory."""
    points = []
    for p in traj.points:
        pos = scale * (transform.rotation @ p.pose.translation) + transform.translation
        rot = transform.rotation @ p.pose.rotation
        points.append(TrajectoryPoint(p.timestamp, Pose(rot, pos)))
    return Trajectory(points, traj.label)
