"""SE(3) rigid-transform algebra: composition, inversion, exp/log maps.

Rotations are stored as 3x3 matrices throughout the package; quaternions
appear only at the trajectory-file boundary (trajectory.py). Twists are
6-vectors ordered [vx, vy, vz, wx, wy, wz]: translational part first,
rotational part in radians.
"""

from __future__ import annotations

import numpy as np

# Below this rotation angle, exp/log use second-order Taylor expansions.
SMALL_ANGLE = 1e-8
# Determinant/orthogonality drift that triggers re-orthonormalization.
ORTHO_TOL = 1e-9
# log() refuses rotations closer to pi than this (axis ambiguity).
MAX_LOG_ANGLE = np.pi - 1e-6


def _skew(w):
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) via polar decomposition."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        r = (u * np.array([1.0, 1.0, -1.0])) @ vt
    return r


class Pose:
    """Rigid transform y = R @ x + t.

    Composition applies the right operand first: (a @ b)(x) == a(b(x)).
    Instances are immutable value objects; the stored arrays are marked
    read-only so poses can be shared freely.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        r = np.eye(3) if rotation is None else np.array(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        det = np.linalg.det(r)
        if det <= 0.0:
            raise ValueError(f"rotation must have positive determinant, got {det}")
        drift = max(abs(det - 1.0), np.abs(r.T @ r - np.eye(3)).max())
        if drift > ORTHO_TOL:
            r = orthonormalize(r)
        r.flags.writeable = False
        t.flags.writeable = False
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4) or np.abs(m[3] - [0, 0, 0, 1]).max() > 1e-9:
            raise ValueError("expected a 4x4 homogeneous transform")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )

    def __repr__(self):
        t = np.array2string(self.translation, precision=6, suppress_small=True)
        return f"Pose(t={t}, angle={rotation_angle(self.rotation):.6f} rad)"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def trans(p: Pose) -> np.ndarray:
    """Translational component of a pose (a copy)."""
    return p.translation.copy()


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle in [0, pi] of a rotation matrix."""
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(c))


def _so3_exp(w):
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * k2
    s, c = np.sin(theta), np.cos(theta)
    return np.eye(3) + (s / theta) * k + ((1.0 - c) / theta**2) * k2


def _so3_log(r):
    theta = rotation_angle(r)
    if theta >= MAX_LOG_ANGLE:
        raise ValueError(f"rotation angle {theta} too close to pi; log is ambiguous")
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < SMALL_ANGLE:
        return v  # sin(theta)/theta ~ 1 to second order
    return (theta / np.sin(theta)) * v


def _left_jacobian(w):
    """V such that exp([v, w]) has translation V @ v."""
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + k2 / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * k + b * k2


def _left_jacobian_inv(w):
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + k2 / 12.0
    c = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * k + c * k2


def exp(twist: np.ndarray) -> Pose:
    """Exponential map from a [vx, vy, vz, wx, wy, wz] twist to a pose."""
    xi = np.asarray(twist, dtype=float)
    if xi.shape != (6,):
        raise ValueError(f"twist must be a 6-vector, got {xi.shape}")
    v, w = xi[:3], xi[3:]
    return Pose(_so3_exp(w), _left_jacobian(w) @ v)


def log(p: Pose) -> np.ndarray:
    """Logarithm map; inverse of exp for rotation angles below pi."""
    w = _so3_log(p.rotation)
    v = _left_jacobian_inv(w) @ p.translation
    return np.concatenate([v, w])
