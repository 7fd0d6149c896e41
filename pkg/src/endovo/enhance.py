"""Exposure correction: global adaptive gamma, local pyramid gains, external hook.

The global path estimates one gamma per frame from its mean luminance. The
local path works in the band-pass pyramid domain: a spatially varying gain
pulls the low-pass level toward a target mean, and the detail levels get the
square root of that gain so texture is neither flattened nor blown out.
An external enhancer (e.g. a learned model) can be plugged in as a
directory-to-directory subprocess.
"""

from __future__ import annotations

import shlex
import subprocess
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import uniform_filter

from .pyramid import _expand, laplacian_pyramid, reconstruct

METHODS = ("none", "global_gamma", "local_pyramid", "external")

# Rec.601 luma weights; gains are applied equally to all channels to avoid
# hue shifts, only the gain *estimate* uses luminance.
_LUMA = np.array([0.299, 0.587, 0.114])


class ExternalEnhancerError(RuntimeError):
    """External enhancer failed or violated the output contract."""


@dataclass
class EnhanceParams:
    method: str = "none"
    gamma_range: tuple[float, float] = (0.4, 2.5)
    gain_range: tuple[float, float] = (0.5, 4.0)
    target_mean: float = 0.5
    detail_exponent: float = 0.5
    external_command: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        g0, g1 = self.gamma_range
        if not (0 < g0 <= g1):
            raise ValueError(f"invalid gamma range {self.gamma_range}")
        k0, k1 = self.gain_range
        if not (0 < k0 <= 1 <= k1):
            raise ValueError(f"invalid gain range {self.gain_range}")
        if not (0 < self.target_mean < 1):
            raise ValueError(f"target mean must be in (0, 1), got {self.target_mean}")
        if self.method == "external" and not self.external_command:
            raise ValueError("method 'external' requires external_command")


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    return img.reshape(img.shape[:2])


def estimate_gamma(
    img: np.ndarray,
    target_mean: float = 0.5,
    gamma_range: tuple[float, float] = (0.4, 2.5),
) -> float:
    """Gamma that maps the image's mean luminance onto the target mean.

    Uses log(target) / log(mean), clamped to the given range. A fully black
    or fully saturated image has no usable mean; it is clamped into the open
    interval with a warning.
    """
    m = float(np.mean(luminance(img)))
    if m <= 0.0 or m >= 1.0:
        warnings.warn(f"mean luminance {m} outside (0, 1); clamping", stacklevel=2)
        m = min(max(m, 1e-6), 1.0 - 1e-6)
    gamma = np.log(target_mean) / np.log(m)
    return float(np.clip(gamma, *gamma_range))


def apply_gamma(img: np.ndarray, gamma: float) -> np.ndarray:
    """Per-sample power transform; gamma 1 is the exact identity."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    img = np.asarray(img, dtype=float)
    if gamma == 1.0:
        return img.copy()
    return np.clip(img, 0.0, 1.0) ** gamma


def _local_gain(low: np.ndarray, params: EnhanceParams) -> np.ndarray:
    """Spatially varying gain on the low-pass level, from box-filtered means."""
    lum = luminance(low)
    window = max(3, min(lum.shape) // 4)
    if window % 2 == 0:
        window += 1
    local_mean = uniform_filter(lum, size=window, mode="mirror")
    gain = params.target_mean / np.maximum(local_mean, 1e-6)
    return np.clip(gain, *params.gain_range)


def enhance_local(img: np.ndarray, params: EnhanceParams | None = None) -> np.ndarray:
    """Pyramid-domain local exposure correction.

    The low-pass level is multiplied by a clamped gain field that moves its
    local mean toward the target; band-pass levels get the upsampled gain
    raised to the detail-preservation exponent. Output is clipped to [0, 1].
    """
    params = params or EnhanceParams(method="local_pyramid")
    img = np.asarray(img, dtype=float)
    lp = laplacian_pyramid(img)
    gain = _local_gain(lp.levels[-1], params)

    def per_channel(g, level):
        return g[..., None] if level.ndim == 3 else g

    levels = list(lp.levels)
    levels[-1] = levels[-1] * per_channel(gain, levels[-1])
    g = gain
    for k in range(len(levels) - 2, -1, -1):
        g = _expand(g, levels[k].shape[:2])
        levels[k] = levels[k] * per_channel(g**params.detail_exponent, levels[k])
    lp.levels = levels
    return np.clip(reconstruct(lp), 0.0, 1.0)


def enhance_image(img: np.ndarray, params: EnhanceParams) -> np.ndarray:
    """Apply the configured per-frame method ('external' is directory-level)."""
    if params.method == "none":
        return np.asarray(img, dtype=float).copy()
    if params.method == "global_gamma":
        gamma = estimate_gamma(img, params.target_mean, params.gamma_range)
        return apply_gamma(img, gamma)
    if params.method == "local_pyramid":
        return enhance_local(img, params)
    raise ValueError(f"enhance_image cannot apply method {params.method!r}")


def _png_frames(directory: Path) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def enhance_external(frames_dir, out_dir, command: str) -> int:
    """Run `<command> <frames_dir> <out_dir>` and verify its output.

    The command must write one PNG per input frame, same names, same
    dimensions, and exit 0. Returns the frame count on success.
    """
    frames_dir = Path(frames_dir)
    out_dir = Path(out_dir)
    inputs = _png_frames(frames_dir)
    if not inputs:
        raise ExternalEnhancerError(f"no input frames in {frames_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = shlex.split(command) + [str(frames_dir), str(out_dir)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExternalEnhancerError(
            f"external enhancer exited with code {proc.returncode}: {proc.stderr.strip()}"
        )
    outputs = {p.name: p for p in _png_frames(out_dir)}
    problems = []
    for src in inputs:
        dst = outputs.pop(src.name, None)
        if dst is None:
            problems.append(f"missing {src.name}")
            continue
        with Image.open(src) as a, Image.open(dst) as b:
            if a.size != b.size:
                problems.append(f"size mismatch {src.name}: {a.size} vs {b.size}")
    problems.extend(f"unexpected {name}" for name in sorted(outputs))
    if problems:
        raise ExternalEnhancerError("output integrity check failed: " + "; ".join(problems))
    return len(inputs)
