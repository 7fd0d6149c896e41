"""Direct photometric camera tracking against depth-bearing keyframes.

The tracker estimates the 6-DoF relative pose between a keyframe and an
incoming frame by minimizing Huber-robustified intensity residuals at
selected high-gradient pixels, Gauss-Newton, coarse-to-fine over a 4-level
pyramid.

Photometric model. The scene is lit by a source at the camera, so even a
perfectly exposed pair differs by the predictable shading factor
cos(incidence) / range^2 (a form of photometric calibration, computed from
the keyframe's depth map and depth-derived surface normals). The residual
therefore compares the observed intensity against the keyframe intensity
scaled by the pose-dependent shading transfer:

    r(p) = I_frame(warp(p)) * rho(pose, p) - I_kf(p)

Beyond that calibrated factor the tracker assumes brightness constancy:
any *exposure* change between frames (gamma drift, vignetting, gain) lands
directly in the residual and corrupts the estimate, which is what the
enhancement experiment measures. An optional per-frame affine brightness
model (gain + bias) exists behind a flag for ablations.

Relative poses map keyframe-camera coordinates into current-frame-camera
coordinates; world poses are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel
from .enhance import luminance
from .geometry import Pose, exp
from .pyramid import LEVELS, gaussian_pyramid
from .trajectory import Trajectory, TrajectoryPoint

# Selected pixels must face the camera at least this much; below it the
# shading transfer is ill-conditioned (grazing incidence).
_COS_SELECT = 0.30
# Warped points are discarded when predicted incidence drops below this.
_COS_TRACK = 0.10
# Clipped (saturated) or near-black pixels violate any photometric model;
# both sides of the residual avoid them.
_INTENSITY_MIN = 0.02
_INTENSITY_MAX = 0.97
_SAMPLE_MAX = 0.995


@dataclass
class OdometryConfig:
    huber: float = 0.03  # ~7.6/255 intensity units
    max_iterations: int = 20
    step_tol: float = 1e-6
    max_pixels: int = 4000
    gradient_percentile: float = 75.0
    selection_grid: int = 8
    min_coarse_pixels: int = 50
    kf_translation: float = 0.2
    kf_min_inliers: float = 0.6
    affine_brightness: bool = False

    def to_dict(self) -> dict:
        return {
            "huber": self.huber,
            "max_iterations": self.max_iterations,
            "step_tol": self.step_tol,
            "max_pixels": self.max_pixels,
            "gradient_percentile": self.gradient_percentile,
            "selection_grid": self.selection_grid,
            "min_coarse_pixels": self.min_coarse_pixels,
            "kf_translation": self.kf_translation,
            "kf_min_inliers": self.kf_min_inliers,
            "affine_brightness": self.affine_brightness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OdometryConfig":
        return cls(**d)


class TrackingLostError(RuntimeError):
    """Too few usable pixels to track; carries whatever was estimated."""

    def __init__(self, message, frame_index=None, partial=None, diagnostics=None):
        super().__init__(message)
        self.frame_index = frame_index
        self.partial = partial
        self.diagnostics = diagnostics


class DivergenceError(RuntimeError):
    """Non-finite cost encountered during optimization."""


@dataclass
class TrackResult:
    relative_pose: Pose  # keyframe camera -> frame camera
    cost: float  # mean Huber energy per usable pixel at full resolution
    inlier_fraction: float
    converged: bool
    iterations: list[int]  # per level, coarse to fine
    affine: tuple[float, float] = (1.0, 0.0)


@dataclass
class _SelectedPixels:
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray  # z-depth
    intensity: np.ndarray
    normal: np.ndarray  # (N, 3) unit normals, facing the camera
    shading: np.ndarray  # cos(incidence) / range^2 at the keyframe


def _empty_selection() -> _SelectedPixels:
    return _SelectedPixels(
        *(np.empty(0) for _ in range(4)), np.empty((0, 3)), np.empty(0)
    )


@dataclass
class Keyframe:
    image: np.ndarray
    depth: np.ndarray  # z-depth, full resolution
    pose: Pose  # camera-to-world
    image_pyramid: list[np.ndarray]
    depth_pyramid: list[np.ndarray]
    pixels: list[_SelectedPixels] = field(default_factory=list)


def to_gray(img: np.ndarray) -> np.ndarray:
    return luminance(img)


def _surface_geometry(z_depth: np.ndarray, cam: CameraModel):
    """Per-pixel camera-frame points, unit normals, and cos(incidence).

    Normals come from central differences of the unprojected depth map and
    are oriented toward the camera.
    """
    u, v = cam.pixel_grid()
    points = cam.unproject(u, v, z_depth)
    du = np.gradient(points, axis=1)
    dv = np.gradient(points, axis=0)
    n = np.cross(du.reshape(-1, 3), dv.reshape(-1, 3)).reshape(points.shape)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.maximum(norm, 1e-30)
    d = np.linalg.norm(points, axis=-1)
    ray = points / np.maximum(d[..., None], 1e-30)
    cos_inc = -(n * ray).sum(axis=-1)
    flip = cos_inc < 0
    n[flip] = -n[flip]
    cos_inc = np.abs(cos_inc)
    return points, n, cos_inc, d


def _select_pixels(img, depth, cam_lvl: CameraModel, cap, cfg: OdometryConfig) -> _SelectedPixels:
    """High-gradient pixels with valid depth and solid incidence angles,
    stratified over a coarse grid."""
    h, w = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    mag = np.hypot(gx, gy)
    _, normals, cos_inc, dist = _surface_geometry(depth, cam_lvl)
    valid = np.zeros((h, w), dtype=bool)
    valid[2:-2, 2:-2] = True
    valid &= (depth > 0) & (cos_inc >= _COS_SELECT) & np.isfinite(dist)
    valid &= (img >= _INTENSITY_MIN) & (img <= _INTENSITY_MAX)
    vv, uu = np.nonzero(valid)
    if vv.size == 0:
        return _empty_selection()
    m = mag[vv, uu]
    threshold = np.percentile(m, cfg.gradient_percentile)
    # Coarse levels have few candidates; keep enough for the solver even if
    # the percentile cut would leave fewer.
    floor = min(m.size, 2 * cfg.min_coarse_pixels)
    if int((m >= threshold).sum()) < floor and floor > 0:
        threshold = np.partition(m, -floor)[-floor]
    keep = m >= threshold
    vv, uu, m = vv[keep], uu[keep], m[keep]
    grid = cfg.selection_grid
    cell = (vv * grid // h) * grid + (uu * grid // w)
    per_cell = max(1, int(np.ceil(cap / grid**2)))
    order = np.lexsort((-m, cell))
    sorted_cell = cell[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_cell)) + 1]
    counts = np.diff(np.r_[starts, len(order)])
    rank = np.arange(len(order)) - np.repeat(starts, counts)
    chosen = order[rank < per_cell]
    if chosen.size > cap:
        chosen = chosen[np.argsort(-m[chosen], kind="stable")[:cap]]
    elif chosen.size < min(cap, len(order)):
        # Stratification under-filled the budget; top up by gradient strength.
        rest = order[rank >= per_cell]
        rest = rest[np.argsort(-m[rest], kind="stable")]
        chosen = np.concatenate([chosen, rest[: cap - chosen.size]])
    vv, uu = vv[chosen], uu[chosen]
    c = cos_inc[vv, uu]
    d = dist[vv, uu]
    return _SelectedPixels(
        u=uu.astype(float),
        v=vv.astype(float),
        z=depth[vv, uu],
        intensity=img[vv, uu],
        normal=normals[vv, uu],
        shading=c / np.square(d),
    )


def make_keyframe(
    image: np.ndarray,
    ray_depth: np.ndarray,
    cam: CameraModel,
    pose: Pose | None = None,
    cfg: OdometryConfig | None = None,
) -> Keyframe:
    """Build a tracking reference: pyramids plus per-level pixel selections.

    `ray_depth` is distance along each pixel's ray (the on-disk convention);
    it is converted to z-depth here.
    """
    cfg = cfg or OdometryConfig()
    gray = to_gray(image)
    z_depth = cam.z_from_ray(ray_depth)
    img_pyr = gaussian_pyramid(gray)
    depth_pyr = gaussian_pyramid(z_depth)
    # Halving per level keeps work bounded; the floor keeps coarse levels
    # comfortably above the usable-pixel minimum.
    caps = [
        max(cfg.max_pixels // 4**lvl, 4 * cfg.min_coarse_pixels) for lvl in range(LEVELS)
    ]
    pixels = [
        _select_pixels(img_pyr[lvl], depth_pyr[lvl], cam.scaled(lvl), caps[lvl], cfg)
        for lvl in range(LEVELS)
    ]
    return Keyframe(gray, z_depth, pose or Pose(), img_pyr, depth_pyr, pixels)


def warp(pixel, depth, rel_pose: Pose, cam: CameraModel):
    """Map a pixel with known z-depth into the target view.

    Returns (u', v', z') or None when the point lands behind the camera or
    outside the target image.
    """
    u, v = pixel
    if depth <= 0:
        raise ValueError("depth must be positive")
    q = rel_pose.apply(cam.unproject(u, v, depth))
    if q[2] <= 1e-9:
        return None
    u2, v2 = cam.project(q)
    if not (0.0 <= u2 < cam.width - 1 and 0.0 <= v2 < cam.height - 1):
        return None
    return float(u2), float(v2), float(q[2])


def _bilinear_with_grad(img, u, v):
    """Sample and exact within-cell slopes of the bilinear interpolant."""
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = u - x0
    fy = v - y0
    i00 = img[y0, x0]
    i10 = img[y0, x0 + 1]
    i01 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    top = i00 + fx * (i10 - i00)
    bottom = i01 + fx * (i11 - i01)
    value = top + fy * (bottom - top)
    gu = (i10 - i00) + fy * (i11 - i01 - i10 + i00)
    gv = (i01 - i00) + fx * (i11 - i10 - i01 + i00)
    return value, gu, gv


def _huber_energy(r, delta):
    a = np.abs(r)
    quad = a <= delta
    return np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))


def _huber_weight(r, delta):
    a = np.maximum(np.abs(r), 1e-12)
    return np.minimum(1.0, delta / a)


def _evaluate(sel: _SelectedPixels, target, cam_lvl: CameraModel, rel: Pose, affine):
    """Residuals r = I_target(warp(p)) * rho - (a * I_kf(p) + b).

    rho is the predicted shading transfer keyframe -> frame: the light rides
    with the camera, so intensity scales by (cos_f / range_f^2) relative to
    the keyframe's stored (cos_kf / range_kf^2).
    """
    p = cam_lvl.unproject(sel.u, sel.v, sel.z)
    q = p @ rel.rotation.T + rel.translation
    z = q[:, 2]
    h, w = target.shape
    safe_z = np.where(z > 1e-9, z, 1.0)
    u2 = cam_lvl.fx * q[:, 0] / safe_z + cam_lvl.cx
    v2 = cam_lvl.fy * q[:, 1] / safe_z + cam_lvl.cy
    d = np.linalg.norm(q, axis=1)
    m = sel.normal @ rel.rotation.T
    cos_f = -(m * q).sum(axis=1) / np.maximum(d, 1e-30)
    valid = (
        (z > 1e-9)
        & (u2 >= 0)
        & (u2 < w - 1)
        & (v2 >= 0)
        & (v2 < h - 1)
        & (cos_f > _COS_TRACK)
    )
    uv_, vv_ = u2[valid], v2[valid]
    value, gu, gv = _bilinear_with_grad(target, uv_, vv_)
    ok = value < _SAMPLE_MAX
    if not ok.all():
        keep = np.zeros_like(valid)
        keep[valid] = ok
        valid = keep
        value, gu, gv = value[ok], gu[ok], gv[ok]
    rho = sel.shading[valid] * np.square(d[valid]) / cos_f[valid]
    a, b = affine
    r = value * rho - (a * sel.intensity[valid] + b)
    geom = {
        "q": q[valid],
        "d": d[valid],
        "cos_f": cos_f[valid],
        "m": m[valid],
        "rho": rho,
        "value": value,
        "gu": gu,
        "gv": gv,
        "shading": sel.shading[valid],
        "intensity": sel.intensity[valid],
    }
    return r, geom, valid


def _jacobian(geom, cam_lvl: CameraModel, affine_mode):
    """d r / d [v, w] for a left-multiplied twist on the relative pose.

    The shading transfer rho is invariant to the rotational part (normals
    and points rotate together), so its derivative only feeds the
    translation columns.
    """
    q = geom["q"]
    z = q[:, 2]
    rho = geom["rho"]
    a_ = rho * geom["gu"] * cam_lvl.fx / z
    b_ = rho * geom["gv"] * cam_lvl.fy / z
    c_ = -(a_ * q[:, 0] + b_ * q[:, 1]) / z
    cols = [
        a_,
        b_,
        c_,
        -b_ * q[:, 2] + c_ * q[:, 1],
        a_ * q[:, 2] - c_ * q[:, 0],
        -a_ * q[:, 1] + b_ * q[:, 0],
    ]
    jac = np.stack(cols, axis=1)
    d = geom["d"]
    cos_f = geom["cos_f"]
    qhat = q / d[:, None]
    drho_dv = geom["shading"][:, None] * (
        2.0 * q / cos_f[:, None]
        + (d / np.square(cos_f))[:, None] * (geom["m"] + cos_f[:, None] * qhat)
    )
    jac[:, :3] += geom["value"][:, None] * drho_dv
    if affine_mode:
        jac = np.concatenate(
            [jac, -geom["intensity"][:, None], -np.ones((len(d), 1))], axis=1
        )
    return jac


def _mean_cost(r, n_valid, delta):
    if n_valid == 0:
        return np.inf
    return float(_huber_energy(r, delta).sum() / n_valid)


def track(
    kf: Keyframe,
    frame: np.ndarray,
    cam: CameraModel,
    init: Pose | None = None,
    cfg: OdometryConfig | None = None,
) -> TrackResult:
    """Estimate the keyframe-to-frame relative pose, coarse to fine."""
    cfg = cfg or OdometryConfig()
    gray = to_gray(frame)
    if gray.shape != kf.image.shape:
        raise ValueError(f"frame shape {gray.shape} does not match keyframe {kf.image.shape}")
    frame_pyr = gaussian_pyramid(gray)
    rel = init or Pose()
    affine = (1.0, 0.0)
    iterations = []
    converged = False
    n_params = 8 if cfg.affine_brightness else 6

    for lvl in range(LEVELS - 1, -1, -1):
        sel = kf.pixels[lvl]
        cam_lvl = cam.scaled(lvl)
        target = frame_pyr[lvl]
        if lvl == LEVELS - 1:
            _, _, valid0 = _evaluate(sel, target, cam_lvl, rel, affine)
            if int(valid0.sum()) < cfg.min_coarse_pixels:
                raise TrackingLostError(
                    f"only {int(valid0.sum())} usable pixels at the coarsest level "
                    f"(need {cfg.min_coarse_pixels})"
                )
        iters = 0
        converged = False
        for _ in range(cfg.max_iterations):
            r, geom, valid = _evaluate(sel, target, cam_lvl, rel, affine)
            n_valid = int(valid.sum())
            if n_valid < n_params:
                break
            cost = _mean_cost(r, n_valid, cfg.huber)
            if not np.isfinite(cost):
                raise DivergenceError(f"non-finite cost at level {lvl}")
            w_ = _huber_weight(r, cfg.huber)
            jac = _jacobian(geom, cam_lvl, cfg.affine_brightness)
            jw = jac * w_[:, None]
            hess = jw.T @ jac
            grad = jw.T @ r
            try:
                delta = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                break
            # Step halving: never accept a cost increase (at most 10 halvings).
            alpha = 1.0
            accepted = False
            for _ in range(11):
                cand_rel = exp(alpha * delta[:6]) @ rel
                cand_affine = affine
                if cfg.affine_brightness:
                    cand_affine = (affine[0] + alpha * delta[6], affine[1] + alpha * delta[7])
                r_c, _, valid_c = _evaluate(sel, target, cam_lvl, cand_rel, cand_affine)
                cost_c = _mean_cost(r_c, int(valid_c.sum()), cfg.huber)
                if cost_c <= cost:
                    accepted = True
                    break
                alpha *= 0.5
            iters += 1
            if not accepted:
                break
            rel = cand_rel
            affine = cand_affine
            if np.linalg.norm(alpha * delta) < cfg.step_tol:
                converged = True
                break
        iterations.append(iters)

    # Final diagnostics at full resolution.
    sel = kf.pixels[0]
    r, _, valid = _evaluate(sel, frame_pyr[0], cam.scaled(0), rel, affine)
    n_valid = int(valid.sum())
    cost = _mean_cost(r, n_valid, cfg.huber)
    if not np.isfinite(cost):
        raise DivergenceError("non-finite final cost")
    inliers = int((np.abs(r) <= cfg.huber).sum())
    total = max(len(sel.u), 1)
    return TrackResult(
        relative_pose=rel,
        cost=cost,
        inlier_fraction=inliers / total,
        converged=converged,
        iterations=iterations,
        affine=affine,
    )


def needs_keyframe(result: TrackResult, cfg: OdometryConfig | None = None) -> bool:
    """Promote a new keyframe on large motion, low inliers, or no convergence."""
    cfg = cfg or OdometryConfig()
    if not result.converged:
        return True
    if np.linalg.norm(result.relative_pose.translation) > cfg.kf_translation:
        return True
    return result.inlier_fraction < cfg.kf_min_inliers


def run_sequence(frames, cam: CameraModel, cfg: OdometryConfig | None = None):
    """Track a whole sequence; returns (trajectory, per-frame diagnostics).

    `frames` yields (image, ray_depth, timestamp) triples; the first frame
    becomes the first keyframe at the identity pose. Subsequent frames are
    tracked against the current keyframe with constant-velocity
    initialization; keyframes are promoted per needs_keyframe() using the
    frame's own depth. On tracking loss the partial trajectory travels with
    the raised TrackingLostError.
    """
    cfg = cfg or OdometryConfig()
    points: list[TrajectoryPoint] = []
    diagnostics: list[dict] = []
    kf = None
    rel_prev = Pose()  # current frame <- keyframe
    velocity = Pose()  # frame i <- frame i-1, for initialization
    for index, (image, ray_depth, timestamp) in enumerate(frames):
        if index == 0:
            kf = make_keyframe(image, ray_depth, cam, Pose(), cfg)
            points.append(TrajectoryPoint(timestamp, Pose()))
            diagnostics.append({"index": 0, "timestamp": timestamp, "keyframe": True})
            continue
        init = velocity @ rel_prev
        try:
            result = track(kf, image, cam, init, cfg)
        except (TrackingLostError, DivergenceError) as err:
            raise TrackingLostError(
                f"tracking lost at frame {index}: {err}",
                frame_index=index,
                partial=Trajectory(points, ""),
                diagnostics=diagnostics,
            ) from err
        rel = result.relative_pose
        world = kf.pose @ rel.inverse()
        velocity = rel @ rel_prev.inverse()
        promoted = needs_keyframe(result, cfg)
        diagnostics.append(
            {
                "index": index,
                "timestamp": timestamp,
                "cost": result.cost,
                "inlier_fraction": result.inlier_fraction,
                "converged": bool(result.converged),
                "iterations": result.iterations,
                "keyframe": bool(promoted),
            }
        )
        if promoted:
            kf = make_keyframe(image, ray_depth, cam, world, cfg)
            rel_prev = Pose()
        else:
            rel_prev = rel
        points.append(TrajectoryPoint(timestamp, world))
    if len(points) < 2:
        raise ValueError("need at least 2 frames to track a sequence")
    return Trajectory(points, ""), diagnostics
