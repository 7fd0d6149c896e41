"""Command-line pipeline: simulate, enhance, track, eval, run-all.

Experiment parameters live in one JSON config (fully captured in output
manifests); all filesystem locations are flags. Exit codes: 0 success,
2 config error, 3 data error, 4 tracking lost, 5 external enhancer failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import enhance as enh
from . import metrics, odometry, simulator, trajectory
from .camera import CameraModel

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRACKING = 4
EXIT_EXTERNAL = 5

ALIGNMENTS = ("anchor", "umeyama", "umeyama_scale", "none")


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "seed": 7,
    "fps": 25.0,
    "camera": {
        "fx": 250.0,
        "fy": 250.0,
        "cx": 159.5,
        "cy": 119.5,
        "width": 320,
        "height": 240,
    },
    "scene": {"radius": 1.0, "octaves": 4, "albedo_range": [0.35, 0.95]},
    "sequences": [
        {"label": "straight", "kind": "straight", "n_frames": 200, "step": 0.04},
        {
            "label": "curved",
            "kind": "curved",
            "n_frames": 200,
            "step": 0.04,
            "curvature": 0.05,
        },
        {
            "label": "spiral",
            "kind": "spiral",
            "n_frames": 200,
            "step": 0.04,
            "orbit_radius": 0.3,
            "turns": 2.0,
        },
    ],
    "degrade": {
        "gamma_amplitude": 0.5,
        "gamma_period": 40.0,
        "vignette_strength": 0.4,
        "noise_sigma": 0.005,
    },
    "enhance": {
        "gamma_range": [0.4, 2.5],
        "gain_range": [0.5, 4.0],
        "target_mean": 0.5,
        "detail_exponent": 0.5,
        "external_command": None,
    },
    "odometry": {},
    "eval": {"alignment": "anchor", "tolerance": 0.02},
    "methods": ["none", "global_gamma", "local_pyramid"],
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, seed=None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        config = _merge(config, user)
    if seed is not None:
        config["seed"] = int(seed)
    validate_config(config)
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")
    ).hexdigest()


def validate_config(config: dict) -> None:
    try:
        _camera(config)
        for seq in config["sequences"]:
            if seq["n_frames"] < 2:
                raise ValueError(f"sequence {seq.get('label')}: n_frames must be >= 2")
            _scene(config, seq)
        _degrade(config, 0)
        _enhance_params(config, "none")
        odometry.OdometryConfig.from_dict(config["odometry"])
        if config["eval"]["alignment"] not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if config["eval"]["tolerance"] <= 0:
            raise ValueError("association tolerance must be positive")
        for m in config["methods"]:
            if m not in enh.METHODS:
                raise ValueError(f"unknown method {m!r}")
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def _camera(config) -> CameraModel:
    return CameraModel.from_dict(config["camera"])


def _scene(config, seq) -> simulator.SceneConfig:
    base = dict(config["scene"])
    base["albedo_range"] = tuple(base["albedo_range"])
    base["curvature"] = float(seq.get("curvature", 0.0))
    base["texture_seed"] = int(config["seed"]) * 31 + _seq_index(config, seq)
    return simulator.SceneConfig(**base)


def _seq_index(config, seq) -> int:
    for i, s in enumerate(config["sequences"]):
        if s is seq or s.get("label") == seq.get("label"):
            return i
    return 0


def _degrade(config, seq_index: int) -> simulator.DegradeConfig:
    d = dict(config["degrade"])
    d["bias_seed"] = int(config["seed"]) * 1009 + seq_index
    return simulator.DegradeConfig(**d)


def _enhance_params(config, method: str) -> enh.EnhanceParams:
    e = dict(config["enhance"])
    return enh.EnhanceParams(
        method=method,
        gamma_range=tuple(e["gamma_range"]),
        gain_range=tuple(e["gain_range"]),
        target_mean=e["target_mean"],
        detail_exponent=e["detail_exponent"],
        external_command=e.get("external_command"),
    )


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- subcommands ------------------------------------------------------------


def cmd_simulate(config: dict, out_dir) -> list[Path]:
    """Render, degrade, and write every configured sequence."""
    out_dir = Path(out_dir)
    cam = _camera(config)
    fps = float(config["fps"])
    seq_dirs = []
    for i, seq in enumerate(config["sequences"]):
        scene = _scene(config, seq)
        traj = simulator.generate_trajectory(
            seq["kind"],
            int(seq["n_frames"]),
            float(seq["step"]),
            curvature=float(seq.get("curvature", 0.05) or 0.05),
            orbit_radius=float(seq.get("orbit_radius", 0.3)),
            turns=float(seq.get("turns", 2.0)),
            fps=fps,
            label=seq["label"],
        )
        exposure = simulator.reference_exposure(scene, cam)
        frames = [
            simulator.render(scene, cam, p.pose, exposure, p.timestamp) for p in traj
        ]
        degrade_cfg = _degrade(config, i)
        degraded = simulator.degrade(frames, degrade_cfg)
        seq_dir = out_dir / seq["label"]
        ds.write_sequence(
            seq_dir,
            degraded,
            [f.depth for f in frames],
            traj,
            cam,
            meta={
                "label": seq["label"],
                "fps": fps,
                "scene": scene.to_dict(),
                "degrade": degrade_cfg.to_dict(),
                "config_hash": config_hash(config),
            },
            clean_images=[f.image for f in frames],
        )
        seq_dirs.append(seq_dir)
    _write_json(
        out_dir / "manifest.json",
        {
            "config": config,
            "config_hash": config_hash(config),
            "sequences": [s["label"] for s in config["sequences"]],
        },
    )
    return seq_dirs


def cmd_enhance(config: dict, dataset_dir, out_dir, method: str) -> int:
    """Write enhanced frames mirroring the dataset's rgb layout."""
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    params = _enhance_params(config, method)
    total = 0
    for seq in config["sequences"]:
        in_dir = dataset_dir / seq["label"] / "rgb"
        dst = out_dir / seq["label"] / "rgb"
        files = ds.list_frame_files(in_dir)
        dst.mkdir(parents=True, exist_ok=True)
        if method == "none":
            for f in files:
                shutil.copyfile(f, dst / f.name)
        elif method == "external":
            enh.enhance_external(in_dir, dst, params.external_command)
        else:
            for f in files:
                ds.write_png(dst / f.name, enh.enhance_image(ds.read_png(f), params))
        total += len(files)
    _write_json(
        out_dir / "manifest.json",
        {
            "method": method,
            "params": {
                "gamma_range": list(params.gamma_range),
                "gain_range": list(params.gain_range),
                "target_mean": params.target_mean,
                "detail_exponent": params.detail_exponent,
                "external_command": params.external_command,
            },
            "config_hash": config_hash(config),
        },
    )
    return total


def cmd_track(config: dict, dataset_dir, out_dir, frames_root=None) -> list[dict]:
    """Track every sequence; returns per-sequence status dictionaries."""
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    cfg = odometry.OdometryConfig.from_dict(config["odometry"])
    results = []
    for seq in config["sequences"]:
        label = seq["label"]
        seq_dir = dataset_dir / label
        frames_dir = None
        if frames_root is not None:
            frames_dir = Path(frames_root) / label / "rgb"
        frames, cam, _ = ds.load_sequence(seq_dir, frames_dir)
        lost_at = None
        try:
            traj, diagnostics = odometry.run_sequence(frames, cam, cfg)
        except odometry.TrackingLostError as err:
            traj = err.partial
            diagnostics = err.diagnostics or []
            lost_at = err.frame_index
        traj.label = label
        seq_out = out_dir / label
        seq_out.mkdir(parents=True, exist_ok=True)
        if traj is not None and len(traj) > 0:
            (seq_out / "trajectory.txt").write_text(trajectory.serialize_tum(traj))
        _write_json(
            seq_out / "diagnostics.json",
            {
                "frames": diagnostics,
                "keyframes": sum(1 for d in diagnostics if d.get("keyframe")),
                "lost_at": lost_at,
                "odometry": cfg.to_dict(),
            },
        )
        results.append({"label": label, "lost_at": lost_at, "dir": str(seq_out)})
    return results


def _seq_label(path: Path) -> str:
    if path.name in ("groundtruth.txt", "trajectory.txt"):
        return path.parent.name
    return path.stem


def evaluate_files(gt_files, est_files, method, alignment, tolerance):
    """Associate, align, and score each gt/est file pair; returns the report
    plus per-sequence plot data."""
    if len(gt_files) != len(est_files):
        raise ValueError(
            f"got {len(gt_files)} ground-truth files but {len(est_files)} estimates"
        )
    series = []
    plots = []
    for gt_path, est_path in zip(gt_files, est_files):
        label = _seq_label(Path(est_path))
        gt = trajectory.parse_tum(Path(gt_path).read_text(), label=label)
        est = trajectory.parse_tum(Path(est_path).read_text(), label=label)
        if alignment == "anchor":
            gt = trajectory.anchor_to_first(gt)
            est = trajectory.anchor_to_first(est)
        pairs = trajectory.associate(gt, est, tolerance)
        if alignment in ("umeyama", "umeyama_scale"):
            transform, scale = trajectory.align_umeyama(
                pairs, with_scale=(alignment == "umeyama_scale")
            )
            est = trajectory.apply_alignment(est, transform, scale)
            pairs = trajectory.associate(gt, est, tolerance)
        series.append(metrics.ape_series(pairs, label))
        plots.append((label, pairs))
    return metrics.aggregate(series, method=method), plots


def cmd_eval(gt_files, est_files, out_dir, method="", alignment="anchor", tolerance=0.02):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, plots = evaluate_files(gt_files, est_files, method, alignment, tolerance)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(metrics.render_table([report]))
    for label, pairs in plots:
        with open(out_dir / f"ape_{label}.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["frame", "timestamp", "ape"])
            for i, p in enumerate(pairs):
                writer.writerow(
                    [i, repr(p.gt.timestamp), repr(metrics.ape(p.gt.pose, p.est.pose))]
                )
        with open(out_dir / f"overlay_{label}.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(
                ["timestamp", "gt_x", "gt_y", "gt_z", "est_x", "est_y", "est_z"]
            )
            for p in pairs:
                g = p.gt.pose.translation
                e = p.est.pose.translation
                writer.writerow([repr(p.gt.timestamp)] + [repr(v) for v in (*g, *e)])
    return report


def cmd_compare(report_files, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = [
        metrics.EvalReport.from_dict(json.loads(Path(p).read_text()))
        for p in report_files
    ]
    (out_dir / "comparison.txt").write_text(metrics.render_table(reports))
    (out_dir / "comparison.csv").write_text(metrics.render_csv(reports))
    return reports


def cmd_run_all(config: dict, out_dir) -> dict:
    """Full experiment: dataset, every enhancement method, tracking, reports."""
    out_dir = Path(out_dir)
    dataset_dir = out_dir / "dataset"
    cmd_simulate(config, dataset_dir)
    gt_files = [dataset_dir / s["label"] / "groundtruth.txt" for s in config["sequences"]]
    any_lost = False
    report_files = []
    for method in config["methods"]:
        frames_root = None
        if method != "none":
            frames_root = out_dir / "enhanced" / method
            cmd_enhance(config, dataset_dir, frames_root, method)
        track_dir = out_dir / "tracks" / method
        statuses = cmd_track(config, dataset_dir, track_dir, frames_root)
        any_lost = any_lost or any(s["lost_at"] is not None for s in statuses)
        est_files = [track_dir / s["label"] / "trajectory.txt" for s in config["sequences"]]
        eval_dir = out_dir / "eval" / method
        cmd_eval(
            gt_files,
            est_files,
            eval_dir,
            method=method,
            alignment=config["eval"]["alignment"],
            tolerance=config["eval"]["tolerance"],
        )
        report_files.append(eval_dir / "report.json")
    cmd_compare(report_files, out_dir / "eval")
    _write_json(
        out_dir / "manifest.json",
        {"config": config, "config_hash": config_hash(config)},
    )
    return {"any_lost": any_lost, "out_dir": str(out_dir)}


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="endovo",
        description="Synthetic tube sequences, exposure enhancement, direct "
        "odometry, and trajectory scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON config file (merged over defaults)")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("simulate", help="render and degrade the dataset")
    add_config(p)
    p.add_argument("--out", required=True, help="dataset output directory")

    p = sub.add_parser("enhance", help="write enhanced frames")
    add_config(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default=None, choices=enh.METHODS)

    p = sub.add_parser("track", help="run the tracker over each sequence")
    add_config(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--frames", default=None, help="root of enhanced frames to track instead of rgb/")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score trajectories or merge reports")
    add_config(p)
    p.add_argument("--gt", nargs="+", default=None)
    p.add_argument("--est", nargs="+", default=None)
    p.add_argument("--reports", nargs="+", default=None, help="merge existing report JSONs")
    p.add_argument("--method", default="", help="method label for the report")
    p.add_argument("--alignment", default=None, choices=ALIGNMENTS)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run-all", help="simulate, enhance, track, and evaluate")
    add_config(p)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.seed)
        if args.command == "simulate":
            cmd_simulate(config, args.out)
        elif args.command == "enhance":
            method = args.method or config["methods"][0]
            cmd_enhance(config, args.dataset, args.out, method)
        elif args.command == "track":
            statuses = cmd_track(config, args.dataset, args.out, args.frames)
            if any(s["lost_at"] is not None for s in statuses):
                for s in statuses:
                    if s["lost_at"] is not None:
                        print(f"tracking lost: {s['label']} at frame {s['lost_at']}", file=sys.stderr)
                return EXIT_TRACKING
        elif args.command == "eval":
            if args.reports:
                cmd_compare(args.reports, args.out)
            elif args.gt and args.est:
                cmd_eval(
                    args.gt,
                    args.est,
                    args.out,
                    method=args.method,
                    alignment=args.alignment or config["eval"]["alignment"],
                    tolerance=args.tolerance or config["eval"]["tolerance"],
                )
            else:
                raise ConfigError("eval needs either --gt/--est or --reports")
        elif args.command == "run-all":
            outcome = cmd_run_all(config, args.out)
            if outcome["any_lost"]:
                return EXIT_TRACKING
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except enh.ExternalEnhancerError as err:
        print(f"external enhancer error: {err}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (
        ds.DatasetError,
        trajectory.TrajectoryFormatError,
        trajectory.AssociationError,
        trajectory.AlignmentError,
        FileNotFoundError,
        ValueError,
    ) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
