"""Pinhole camera model shared by the simulator and the tracker.

Pixel coordinates address pixel centers: (0, 0) is the center of the
top-left pixel. The camera looks along +z, x right, y down. Depth maps in
this package store the distance along each pixel's ray; `z_from_ray`
converts them to z-depth where projection math needs it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    def scaled(self, level: int) -> "CameraModel":
        """Intrinsics for pyramid level k (0 = full resolution).

        Level k+1 keeps the even-index samples of level k, so coordinates
        simply halve: u_k = u_0 / 2^k.
        """
        s = 2.0**level
        w, h = self.width, self.height
        for _ in range(level):
            w = (w + 1) // 2
            h = (h + 1) // 2
        return CameraModel(self.fx / s, self.fy / s, self.cx / s, self.cy / s, w, h)

    def unproject(self, u, v, z):
        """Camera-frame 3D point(s) for pixel(s) at z-depth z."""
        x = (np.asarray(u) - self.cx) / self.fx
        y = (np.asarray(v) - self.cy) / self.fy
        z = np.asarray(z)
        return np.stack([x * z, y * z, z], axis=-1)

    def project(self, points):
        """Pixel coordinates (u, v) of camera-frame point(s); z must be > 0."""
        p = np.asarray(points, dtype=float)
        u = self.fx * p[..., 0] / p[..., 2] + self.cx
        v = self.fy * p[..., 1] / p[..., 2] + self.cy
        return u, v

    def pixel_grid(self):
        """(u, v) arrays of shape (height, width) addressing pixel centers."""
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        return u, v

    def ray_norms(self) -> np.ndarray:
        """Per-pixel |(x, y, 1)|: ray length divided by z-depth."""
        u, v = self.pixel_grid()
        x = (u - self.cx) / self.fx
        y = (v - self.cy) / self.fy
        return np.sqrt(x * x + y * y + 1.0)

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame, shape (H, W, 3)."""
        u, v = self.pixel_grid()
        x = (u - self.cx) / self.fx
        y = (v - self.cy) / self.fy
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def z_from_ray(self, ray_depth: np.ndarray) -> np.ndarray:
        """Convert ray-length depth to z-depth (0 stays 0 = invalid)."""
        return np.asarray(ray_depth, dtype=float) / self.ray_norms()

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))
