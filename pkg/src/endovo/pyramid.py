"""Four-level Gaussian and Laplacian image pyramids.

Images are float arrays of shape (H, W) or (H, W, 3) with intensities
nominally in [0, 1]. The reduce/expand pair uses the classical 5-tap
binomial kernel with reflect-101 borders, so constant images stay constant
at every level and reconstruction is exact to floating-point rounding.
Downsampling keeps the even-index samples (no half-pixel shift), so pixel
(u, v) at level k+1 corresponds to (2u, 2v) at level k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

LEVELS = 4
MIN_SIZE = 8

_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValueError(f"expected (H, W) or (H, W, C) image with C in {{1, 3}}, got {img.shape}")
    if img.shape[0] < MIN_SIZE or img.shape[1] < MIN_SIZE:
        raise ValueError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    return img


def _blur(img: np.ndarray, kernel=_KERNEL) -> np.ndarray:
    out = convolve1d(img, kernel, axis=0, mode="mirror")
    return convolve1d(out, kernel, axis=1, mode="mirror")


def _reduce(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def _expand(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-insertion upsample to an explicit target shape, then blur.

    The kernel is doubled per axis to compensate for the inserted zeros.
    """
    h, w = shape
    if img.shape[0] != (h + 1) // 2 or img.shape[1] != (w + 1) // 2:
        raise ValueError(f"cannot expand {img.shape[:2]} to {shape}")
    out = np.zeros((h, w) + img.shape[2:], dtype=float)
    out[::2, ::2] = img
    out = convolve1d(out, 2.0 * _KERNEL, axis=0, mode="mirror")
    return convolve1d(out, 2.0 * _KERNEL, axis=1, mode="mirror")


def gaussian_pyramid(img: np.ndarray, levels: int = LEVELS) -> list[np.ndarray]:
    """Progressively blurred and 2x-downsampled copies; level 0 is the input.

    Odd dimensions halve with ceiling division.
    """
    img = _check_image(img)
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(_reduce(pyr[-1]))
    return pyr


@dataclass
class LaplacianPyramid:
    """Band-pass levels (finest first) plus the low-pass residual last."""

    levels: list[np.ndarray]

    def __post_init__(self):
        for k in range(len(self.levels) - 1):
            fine = self.levels[k].shape
            coarse = self.levels[k + 1].shape
            if coarse[0] != (fine[0] + 1) // 2 or coarse[1] != (fine[1] + 1) // 2:
                raise ValueError(
                    f"level {k + 1} shape {coarse[:2]} is not the ceiling half of {fine[:2]}"
                )

    @property
    def shape(self):
        return self.levels[0].shape


def laplacian_pyramid(img: np.ndarray, levels: int = LEVELS) -> LaplacianPyramid:
    """Band-pass decomposition; the last level holds the low-pass residual."""
    gp = gaussian_pyramid(img, levels)
    bands = [gp[k] - _expand(gp[k + 1], gp[k].shape[:2]) for k in range(levels - 1)]
    bands.append(gp[-1])
    return LaplacianPyramid(bands)


def reconstruct(lp: LaplacianPyramid) -> np.ndarray:
    """Invert laplacian_pyramid: upsample-and-add from coarse to fine."""
    out = lp.levels[-1]
    for band in reversed(lp.levels[:-1]):
        out = band + _expand(out, band.shape[:2])
    return out
