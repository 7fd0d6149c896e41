"""On-disk sequence layout and image/depth file IO.

A sequence directory holds:
    rgb/%06d.png        8-bit frames (post-degradation)
    rgb_clean/%06d.png  optional pristine frames (written by the simulator)
    depth/%06d.pfm      float32 little-endian ray-length depth, 0 = invalid
    groundtruth.txt     trajectory text (timestamp tx ty tz qx qy qz qw)
    meta.json           camera intrinsics plus scene/degradation configs
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .camera import CameraModel
from .trajectory import Trajectory, parse_tum, serialize_tum


class DatasetError(RuntimeError):
    """Missing or inconsistent sequence data on disk."""


def frame_name(index: int) -> str:
    return f"{index:06d}"


def write_png(path, img: np.ndarray) -> None:
    """Store a [0, 1] float image as 8-bit grayscale or RGB PNG."""
    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "RGB" if data.ndim == 3 else "L"
    PilImage.fromarray(data, mode=mode).save(str(path))


def read_png(path) -> np.ndarray:
    with PilImage.open(str(path)) as im:
        data = np.asarray(im, dtype=np.float64)
    return data / 255.0


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale PFM, float32 little-endian, rows stored bottom-up."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-D map, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise DatasetError(f"{path}: not a grayscale PFM file (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        count = w * h
        raw = f.read(count * 4)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=count).reshape(h, w)
    return np.flipud(data).astype(np.float64)


def write_sequence(
    seq_dir,
    images: list[np.ndarray],
    depths: list[np.ndarray],
    groundtruth: Trajectory,
    camera: CameraModel,
    meta: dict,
    clean_images: list[np.ndarray] | None = None,
) -> None:
    seq_dir = Path(seq_dir)
    if not (len(images) == len(depths) == len(groundtruth)):
        raise ValueError("frame, depth, and pose counts must match")
    (seq_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (seq_dir / "depth").mkdir(parents=True, exist_ok=True)
    for i, (img, depth) in enumerate(zip(images, depths)):
        write_png(seq_dir / "rgb" / f"{frame_name(i)}.png", img)
        write_pfm(seq_dir / "depth" / f"{frame_name(i)}.pfm", depth)
    if clean_images is not None:
        (seq_dir / "rgb_clean").mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(clean_images):
            write_png(seq_dir / "rgb_clean" / f"{frame_name(i)}.png", img)
    (seq_dir / "groundtruth.txt").write_text(serialize_tum(groundtruth))
    full_meta = {"camera": camera.to_dict(), **meta}
    (seq_dir / "meta.json").write_text(json.dumps(full_meta, indent=2, sort_keys=True) + "\n")


def load_meta(seq_dir) -> dict:
    path = Path(seq_dir) / "meta.json"
    if not path.exists():
        raise DatasetError(f"missing {path}")
    return json.loads(path.read_text())


def load_camera(seq_dir) -> CameraModel:
    return CameraModel.from_dict(load_meta(seq_dir)["camera"])


def load_groundtruth(seq_dir) -> Trajectory:
    path = Path(seq_dir) / "groundtruth.txt"
    if not path.exists():
        raise DatasetError(f"missing {path}")
    return parse_tum(path.read_text(), label=Path(seq_dir).name)


def list_frame_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"missing frame directory {directory}")
    files = sorted(directory.glob("*.png"))
    if not files:
        raise DatasetError(f"no frames in {directory}")
    return files


def load_sequence(seq_dir, frames_dir=None):
    """Yield (image, ray_depth, timestamp) triples plus the camera model.

    frames_dir overrides the default rgb/ subdirectory (e.g. to track
    enhanced frames against the original depth and timestamps).
    """
    seq_dir = Path(seq_dir)
    cam = load_camera(seq_dir)
    gt = load_groundtruth(seq_dir)
    rgb_files = list_frame_files(frames_dir if frames_dir is not None else seq_dir / "rgb")
    depth_files = sorted((seq_dir / "depth").glob("*.pfm"))
    if len(rgb_files) != len(depth_files) or len(rgb_files) != len(gt):
        raise DatasetError(
            f"{seq_dir}: inconsistent counts (rgb {len(rgb_files)}, "
            f"depth {len(depth_files)}, poses {len(gt)})"
        )
    timestamps = gt.timestamps()

    def frames():
        for rgb_path, depth_path, t in zip(rgb_files, depth_files, timestamps):
            yield read_png(rgb_path), read_pfm(depth_path), float(t)

    return frames(), cam, gt
