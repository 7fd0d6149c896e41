"""Procedural tube scenes with ground-truth poses, depth, and degradations.

The scene is a hollow tube: straight (a cylinder) or bent along a circular
arc (a torus section) when the axis curvature is nonzero. The wall carries
a seeded multi-octave value-noise texture. Lighting is a point source
co-located with the camera: shading = albedo * cos(incidence) / distance^2,
which makes image brightness depend on the camera's pose — the effect the
exposure degradations then exaggerate.

Rendering is deterministic: straight tubes intersect rays in closed form,
curved tubes are sphere-traced and refined by bisection, both bit-stable
for identical inputs. Depth maps store distance along the ray; 0 marks
pixels where no wall was hit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .camera import CameraModel
from .geometry import Pose
from .trajectory import Trajectory, TrajectoryPoint

# Tone-mapped mean luminance of the straight-tube reference frame; leaves
# headroom for over-exposure degradations.
REFERENCE_MEAN = 0.45

_MARCH_ITERS = 80
_BISECT_ITERS = 48
_TMAX_FACTOR = 100.0

# Base-octave texture lattice: cells around the circumference / per unit
# of axial arclength (roughly isotropic on the unit-radius wall).
_PHI_CELLS = 12
_S_CELLS = 2.0


class GeometryError(RuntimeError):
    """Camera placed outside the tube or touching the wall."""


@dataclass(frozen=True)
class SceneConfig:
    radius: float = 1.0
    curvature: float = 0.0
    texture_seed: int = 0
    octaves: int = 4
    albedo_range: tuple[float, float] = (0.35, 0.95)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not (1 <= self.octaves <= 8):
            raise ValueError("octaves must be in [1, 8]")
        lo, hi = self.albedo_range
        if not (0.05 <= lo <= hi <= 1.0):
            raise ValueError("albedo range must be within [0.05, 1.0]")
        if self.curvature < 0:
            raise ValueError("curvature must be non-negative")
        if self.curvature * self.radius >= 0.5:
            raise ValueError("tube too tight: curvature * radius must stay below 0.5")

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "curvature": self.curvature,
            "texture_seed": self.texture_seed,
            "octaves": self.octaves,
            "albedo_range": list(self.albedo_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "albedo_range" in d:
            d["albedo_range"] = tuple(d["albedo_range"])
        return cls(**d)


@dataclass(frozen=True)
class DegradeConfig:
    gamma_amplitude: float = 0.0
    gamma_period: float = 40.0
    vignette_strength: float = 0.0
    bias_seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if min(self.gamma_amplitude, self.vignette_strength, self.noise_sigma) < 0:
            raise ValueError("degradation parameters must be non-negative")
        if self.vignette_strength > 1:
            raise ValueError("vignette strength must be at most 1")
        if self.gamma_amplitude > 0 and self.gamma_period <= 0:
            raise ValueError("gamma drift needs a positive period")

    def is_identity(self) -> bool:
        return self.gamma_amplitude == 0 and self.vignette_strength == 0 and self.noise_sigma == 0

    def to_dict(self) -> dict:
        return {
            "gamma_amplitude": self.gamma_amplitude,
            "gamma_period": self.gamma_period,
            "vignette_strength": self.vignette_strength,
            "bias_seed": self.bias_seed,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeConfig":
        return cls(**d)


@dataclass
class RenderedFrame:
    image: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray  # (H, W) ray length, 0 = no hit
    pose: Pose  # camera-to-world
    timestamp: float


# --- deterministic texture ------------------------------------------------


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Lattice hash to [0, 1); fixed 64-bit mixing, platform independent."""
    h = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h = h ^ (iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F))
    h = h ^ np.uint64((salt * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _value_noise_octave(x, y, seed: int, octave: int, period_x: int) -> np.ndarray:
    """One smoothstep-interpolated value-noise octave in [0, 1], periodic in x."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    tx = x - x0
    ty = y - y0
    sx = tx * tx * (3.0 - 2.0 * tx)
    sy = ty * ty * (3.0 - 2.0 * ty)
    ix0 = np.mod(x0, period_x).astype(np.int64)
    ix1 = np.mod(x0 + 1, period_x).astype(np.int64)
    iy0 = y0.astype(np.int64)
    iy1 = iy0 + 1
    salt = seed * 1000003 + octave
    v00 = _hash01(ix0, iy0, salt)
    v10 = _hash01(ix1, iy0, salt)
    v01 = _hash01(ix0, iy1, salt)
    v11 = _hash01(ix1, iy1, salt)
    v0 = v00 + sx * (v10 - v00)
    v1 = v01 + sx * (v11 - v01)
    return v0 + sy * (v1 - v0)


def surface_albedo(
    scene: SceneConfig,
    phi: np.ndarray,
    s: np.ndarray,
    footprint: np.ndarray | None = None,
) -> np.ndarray:
    """Wall albedo at surface coordinates (angle around tube, arclength).

    `footprint` is the on-surface size of one pixel (scene units); octaves
    whose cells are smaller than the footprint fade toward their mean so the
    point-sampled render stays band-limited (mip-style anti-aliasing).
    """
    x = (phi / (2.0 * np.pi) + 0.5) * _PHI_CELLS
    y = s * _S_CELLS
    total = np.zeros_like(x)
    norm = 0.0
    amp = 1.0
    for o in range(scene.octaves):
        f = 1 << o
        cell = min(2.0 * np.pi * scene.radius / (_PHI_CELLS * f), 1.0 / (_S_CELLS * f))
        v = _value_noise_octave(x * f, y * f, scene.texture_seed, o, _PHI_CELLS * f)
        if footprint is not None:
            fade = np.clip((1.0 - footprint / cell) / 0.75, 0.0, 1.0)
            v = 0.5 + fade * (v - 0.5)
        total = total + amp * v
        norm += amp
        amp *= 0.5
    lo, hi = scene.albedo_range
    return lo + (hi - lo) * (total / norm)


# --- tube geometry --------------------------------------------------------
# Straight tube: axis is the z line. Curved tube: the axis is a circular
# arc of radius 1/curvature in the x-z plane through the origin, tangent to
# +z there (the closed surface is a torus centered at (-1/curvature, 0, 0)).


def _axis_distance(scene: SceneConfig, p: np.ndarray) -> np.ndarray:
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if scene.curvature == 0.0:
        return np.hypot(x, y)
    rho = 1.0 / scene.curvature
    qx = x + rho
    h = np.hypot(qx, z)
    return np.hypot(h - rho, y)


def _surface_coords(scene: SceneConfig, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(phi, s): angle around the tube cross-section and axial arclength."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if scene.curvature == 0.0:
        return np.arctan2(y, x), z
    rho = 1.0 / scene.curvature
    qx = x + rho
    alpha = np.arctan2(z, qx)
    h = np.hypot(qx, z)
    w_u = h - rho  # radial offset from the axis circle, in its plane
    return np.arctan2(y, w_u), rho * alpha


def _inward_normal(scene: SceneConfig, p: np.ndarray) -> np.ndarray:
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if scene.curvature == 0.0:
        d = np.maximum(np.hypot(x, y), 1e-30)
        n = np.stack([-x / d, -y / d, np.zeros_like(z)], axis=-1)
        return n
    rho = 1.0 / scene.curvature
    qx = x + rho
    h = np.maximum(np.hypot(qx, z), 1e-30)
    ring = np.stack([qx / h * rho - rho, np.zeros_like(y), z / h * rho], axis=-1)
    w = p - ring
    return -w / np.maximum(np.linalg.norm(w, axis=-1, keepdims=True), 1e-30)


def _cast_straight(radius, origin, dirs):
    """Exact first hit of rays with the cylinder wall, from inside."""
    ox, oy = origin[0], origin[1]
    dx, dy = dirs[..., 0], dirs[..., 1]
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - radius * radius
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b + np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
    hit = a > 1e-30
    return np.where(hit, t, np.inf), hit


def _cast_curved(scene, origin, dirs):
    """Sphere-trace the wall from inside, then refine with bisection."""
    radius = scene.radius
    flat = dirs.reshape(-1, 3)
    t = np.zeros(flat.shape[0])

    def wall_clearance(tv):
        return radius - _axis_distance(scene, origin[None, :] + tv[:, None] * flat)

    for _ in range(_MARCH_ITERS):
        t = t + np.maximum(wall_clearance(t), 0.0)
    lo = t
    step = np.maximum(wall_clearance(t), 1e-6 * radius)
    hi = lo + step
    for _ in range(40):
        open_ = wall_clearance(hi) > 0.0
        if not open_.any():
            break
        lo = np.where(open_, hi, lo)
        step = step * 2.0
        hi = np.where(open_, hi + step, hi)
    else:
        pass
    hit = wall_clearance(hi) <= 0.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        inside = wall_clearance(mid) > 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    t = 0.5 * (lo + hi)
    return np.where(hit, t, np.inf).reshape(dirs.shape[:-1]), hit.reshape(dirs.shape[:-1])


def _cast(scene: SceneConfig, cam: CameraModel, pose: Pose):
    origin = pose.translation
    clearance = scene.radius - _axis_distance(scene, origin)
    if clearance <= 0.01 * scene.radius:
        raise GeometryError(
            f"camera at {origin} is outside the tube or within 1% of the wall"
        )
    dirs = cam.ray_directions() @ pose.rotation.T
    if scene.curvature == 0.0:
        t, hit = _cast_straight(scene.radius, origin, dirs)
    else:
        t, hit = _cast_curved(scene, origin, dirs)
    tmax = _TMAX_FACTOR * scene.radius
    hit = hit & (t < tmax) & np.isfinite(t)
    return t, hit, dirs


def _shade(scene: SceneConfig, cam: CameraModel, pose: Pose):
    """Cast rays and shade; returns (irradiance, ray length, hit mask)."""
    t, hit, dirs = _cast(scene, cam, pose)
    ts = np.where(hit, t, 1.0)
    points = pose.translation + ts[..., None] * dirs
    normal = _inward_normal(scene, points)
    cos_inc = np.maximum(-(dirs * normal).sum(axis=-1), 0.0)
    phi, s = _surface_coords(scene, points)
    # On-surface size of one pixel, for texture band-limiting.
    pixel_scale = 2.0 / (cam.fx + cam.fy)
    footprint = ts * pixel_scale / np.maximum(cos_inc, 0.25)
    albedo = surface_albedo(scene, phi, s, footprint)
    e = np.where(hit, albedo * cos_inc / np.square(ts), 0.0)
    return e, t, hit


def irradiance(scene: SceneConfig, cam: CameraModel, pose: Pose) -> np.ndarray:
    """Pre-tone-map shading: albedo * cos(incidence) / ray_length^2."""
    return _shade(scene, cam, pose)[0]


@lru_cache(maxsize=32)
def reference_exposure(scene: SceneConfig, cam: CameraModel) -> float:
    """Exposure constant mapping the straight-tube reference view to the
    target mean luminance."""
    straight = dataclasses.replace(scene, curvature=0.0)
    e = irradiance(straight, cam, Pose())
    mean = float(e.mean())
    if mean <= 0:
        raise GeometryError("reference view is black; cannot set exposure")
    return REFERENCE_MEAN / mean


def render(
    scene: SceneConfig,
    cam: CameraModel,
    pose: Pose,
    exposure: float | None = None,
    timestamp: float = 0.0,
) -> RenderedFrame:
    """Ray-cast one frame; returns tone-mapped image plus ray-length depth."""
    if exposure is None:
        exposure = reference_exposure(scene, cam)
    e, t, hit = _shade(scene, cam, pose)
    image = np.clip(exposure * e, 0.0, 1.0)
    depth = np.where(hit, t, 0.0)
    return RenderedFrame(image, depth, pose, timestamp)


# --- ground-truth trajectories ---------------------------------------------

TRAJECTORY_KINDS = ("straight", "curved", "spiral")


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    f = target - position
    f = f / np.linalg.norm(f)
    r = np.cross([0.0, 1.0, 0.0], f)
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)
    return np.column_stack([r, d, f])


def generate_trajectory(
    kind: str,
    n_frames: int,
    step: float,
    curvature: float = 0.05,
    orbit_radius: float = 0.3,
    turns: float = 2.0,
    fps: float = 25.0,
    label: str = "",
) -> Trajectory:
    """Ground-truth camera path advancing along the tube axis.

    Consecutive poses are `step` apart (within 10%); 'curved' follows the
    bent axis with matching curvature, 'spiral' orbits the straight axis at
    `orbit_radius` while advancing.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    if step <= 0:
        raise ValueError("step must be positive")
    points = []
    if kind == "straight":
        for i in range(n_frames):
            points.append(
                TrajectoryPoint(i / fps, Pose(translation=(0.0, 0.0, i * step)))
            )
    elif kind == "curved":
        if curvature <= 0:
            raise ValueError("curved trajectory needs positive curvature")
        rho = 1.0 / curvature
        for i in range(n_frames):
            theta = i * step * curvature
            pos = (rho * (np.cos(theta) - 1.0), 0.0, rho * np.sin(theta))
            points.append(TrajectoryPoint(i / fps, Pose(_rot_y(-theta), pos)))
    else:  # spiral
        dpsi = 2.0 * np.pi * turns / max(n_frames - 1, 1)
        chord = 2.0 * orbit_radius * np.sin(dpsi / 2.0)
        if chord >= step:
            raise ValueError(
                "spiral orbit moves faster than the step; reduce turns or orbit_radius"
            )
        dz = np.sqrt(step * step - chord * chord)
        for i in range(n_frames):
            psi = i * dpsi
            pos = np.array([orbit_radius * np.cos(psi), orbit_radius * np.sin(psi), i * dz])
            rot = _look_at(pos, np.array([0.0, 0.0, i * dz + 3.0]))
            points.append(TrajectoryPoint(i / fps, Pose(rot, pos)))
    return Trajectory(points, label or kind)


# --- exposure degradation ---------------------------------------------------


def gamma_drift(cfg: DegradeConfig, frame_index: int) -> float:
    """Deterministic sinusoidal component of the per-frame gamma."""
    if cfg.gamma_amplitude == 0:
        return 1.0
    return 1.0 + cfg.gamma_amplitude * float(
        np.sin(2.0 * np.pi * frame_index / cfg.gamma_period)
    )


def _vignette_field(shape, strength: float) -> np.ndarray:
    h, w = shape
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    r2 = ((u - cx) ** 2 + (v - cy) ** 2) / (cx * cx + cy * cy)
    return 1.0 - strength * r2


def degrade(frames, cfg: DegradeConfig) -> list[np.ndarray]:
    """Apply per-frame gamma drift + bias, static vignette, and noise.

    With an all-zero config this is the exact identity. The random gamma
    bias (within 20% of the drift amplitude) and the noise are drawn from
    one seeded stream, frame by frame, so output is reproducible.
    """
    rng = np.random.default_rng(cfg.bias_seed)
    out = []
    vignette = None
    for i, frame in enumerate(frames):
        im = frame.image if isinstance(frame, RenderedFrame) else np.asarray(frame, dtype=float)
        if cfg.is_identity():
            out.append(im.copy())
            continue
        gamma = gamma_drift(cfg, i)
        if cfg.gamma_amplitude > 0:
            gamma += rng.uniform(-0.2 * cfg.gamma_amplitude, 0.2 * cfg.gamma_amplitude)
        im = np.clip(im, 0.0, 1.0) ** gamma
        if cfg.vignette_strength > 0:
            if vignette is None or vignette.shape != im.shape:
                vignette = _vignette_field(im.shape, cfg.vignette_strength)
            im = im * vignette
        if cfg.noise_sigma > 0:
            im = im + rng.normal(0.0, cfg.noise_sigma, im.shape)
        out.append(np.clip(im, 0.0, 1.0))
    return out
