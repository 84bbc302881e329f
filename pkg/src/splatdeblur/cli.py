"""Command-line pipeline: each subcommand wraps one module operation.

Every command is deterministic given --seed; file formats are the ones the
io module reads and writes (PFM images, binary/CSV event files, PLY clouds
and scenes, TUM trajectories).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dataio
from .alignment import AlignmentConfig, Edge, ViewGraph, \
    average_focal, estimate_focal_weiszfeld, global_align
from .errors import NonPositiveThreshold, SplatDeblurError
from .events import bin_events, edi_decouple, simulate_events
from .pipeline import evaluate_run, run_training, train_config_from_spec
from .sampling import ConfidencePointCloud, SamplingPlan, \
    confidence_balanced_sample
from .synthetic import SyntheticDatasetSpec, generate_synthetic_dataset, \
    load_synthetic_dataset
from .training import read_train_config


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for all randomness in this command")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")


def _load_images(directory, suffixes=(".pfm", ".png")):
    paths = sorted(
        p for p in Path(directory).iterdir() if p.suffix in suffixes
    )
    if not paths:
        raise SplatDeblurError(f"no image files found in {directory}")
    return [dataio.load_image(p) for p in paths]


def cmd_simulate_events(args) -> int:
    frames = _load_images(args.frames)
    times = np.linspace(0.0, args.exposure_us, len(frames))
    stream = simulate_events(frames, times, args.theta)
    out = Path(args.out)
    if out.suffix == ".csv":
        dataio.write_events_csv(out, stream)
    else:
        dataio.write_events_binary(out, stream)
    print(f"{len(stream)} events -> {out}")
    return 0


def cmd_decouple(args) -> int:
    if args.theta < 0:
        raise NonPositiveThreshold(f"theta must be >= 0, got {args.theta}")
    blur = dataio.load_image(args.blur)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.theta == 0.0:
        # no event contrast: the decoupling degenerates to the blur itself
        latents = [blur] * args.u
        start = blur
    else:
        stream = dataio.read_events_binary(args.events)
        bins = bin_events(stream, args.u)
        start, latents = edi_decouple(blur, bins, args.theta)
    dataio.write_pfm(out / "i0.pfm", start)
    for k, latent in enumerate(latents, start=1):
        dataio.write_pfm(out / f"latent_{k:02d}.pfm", latent)
    print(f"wrote i0 and {len(latents)} latents -> {out}")
    return 0


def cmd_sample(args) -> int:
    cloud = dataio.read_point_cloud_ply(args.points)
    plan = SamplingPlan(target=args.target, intervals=args.intervals,
                        seed=args.seed)
    idx = confidence_balanced_sample(cloud, plan)
    subset = ConfidencePointCloud(
        positions=cloud.positions[idx],
        confidence=cloud.confidence[idx],
        colors=None if cloud.colors is None else cloud.colors[idx],
    )
    dataio.write_point_cloud_ply(args.out, subset)
    print(f"sampled {len(idx)} of {len(cloud)} points -> {args.out}")
    return 0


def _load_edges(directory):
    """Edges are pointmap pairs {stem}_0.* and {stem}_1.* sharing a pair id."""
    stems = sorted(
        p.name[: -len("_0.points.pfm")]
        for p in Path(directory).iterdir()
        if p.name.endswith("_0.points.pfm")
    )
    if not stems:
        raise SplatDeblurError(f"no pointmap pairs found in {directory}")
    edges = []
    for stem in stems:
        map_a, pair = dataio.read_pointmap(Path(directory) / f"{stem}_0")
        map_b, pair_b = dataio.read_pointmap(Path(directory) / f"{stem}_1")
        if pair != pair_b:
            raise SplatDeblurError(f"pair mismatch for edge {stem}")
        edges.append(Edge(first=pair[0], second=pair[1],
                          pointmap_first=map_a, pointmap_second=map_b))
    return edges


def cmd_align(args) -> int:
    edges = _load_edges(args.maps)
    n_views = 1 + max(max(e.first, e.second) for e in edges)
    graph = ViewGraph(n_views=n_views, edges=edges)
    focal = average_focal(
        estimate_focal_weiszfeld(e.pointmap_first) for e in edges
    )
    cfg = AlignmentConfig(max_iters=args.iters, seed=args.seed)
    solution = global_align(graph, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [(e.first, e.second) for e in edges]
    dataio.write_scales(out / "scales.txt", pairs, solution.edge_scales)
    dataio.write_tum(
        out / "transforms.txt",
        dataio.Trajectory(np.arange(len(edges), dtype=float),
                          solution.edge_transforms),
    )
    (out / "focal.txt").write_text(f"{focal:.9g}\n")
    with open(out / "history.csv", "w") as fh:
        fh.write("iter,objective\n")
        for i, val in enumerate(solution.history):
            fh.write(f"{i},{val:.9g}\n")
    print(f"aligned {n_views} views over {len(edges)} edges; "
          f"objective {solution.objective:.6g}, focal {focal:.2f}")
    return 0


def _dataset_spec_from_args(args) -> SyntheticDatasetSpec:
    return SyntheticDatasetSpec(
        n_gaussians=args.gaussians, width=args.width, height=args.height,
        n_views=args.views, u=args.u, theta=args.theta, seed=args.seed,
    )


def _train_on_dataset(data, args):
    if args.config:
        cfg = read_train_config(args.config)
        cfg.seed = args.seed
    else:
        cfg = train_config_from_spec(
            data, total_iters=args.iters, warmup_iters=args.warmup,
            lambda_e=args.lambda_e, seed=args.seed,
        )
    plan = SamplingPlan(target=len(data.cloud),
                        intervals=min(40, len(data.cloud)), seed=args.seed)
    return run_training(data, cfg, sample_plan=plan), cfg


def _write_run(out, data, result) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_scene_ply(out / "trained_scene.ply", result.scene)
    (out / "training_log.csv").write_text(result.log_csv())
    stamps, poses = [], []
    for v, view in enumerate(result.views):
        for k, pose in enumerate(view.params.latent_poses(data.spec.u),
                                 start=1):
            stamps.append(v + k / data.spec.u)
            poses.append(pose)
    dataio.write_tum(out / "trajectory.txt",
                     dataio.Trajectory(np.asarray(stamps), poses))


def cmd_train(args) -> int:
    data = load_synthetic_dataset(args.data)
    (result, before), cfg = _train_on_dataset(data, args)
    _write_run(args.out, data, result)
    after = evaluate_run(data, result.scene, result.views)
    print(f"trained {cfg.total_iters} iters; "
          f"blur loss {result.history[0].l_b:.5f} -> "
          f"{result.history[-1].l_b:.5f}")
    print(f"PSNR {before.psnr:.2f} -> {after.psnr:.2f} dB, "
          f"ATE {before.ate_rmse:.5f} -> {after.ate_rmse:.5f}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import MetricReport, ate, psnr, ssim

    if args.traj and args.ref:
        est = dataio.read_tum(args.traj)
        ref = dataio.read_tum(args.ref)
        value = ate(est, ref)
        print(f"ATE RMSE {value:.9g}")
        if args.out:
            Path(args.out).write_text(f"ate_rmse\n{value:.9g}\n")
        return 0
    if not (args.image and args.ref_image):
        raise SplatDeblurError(
            "evaluate needs --traj/--ref or --image/--ref-image"
        )
    a = dataio.load_image(args.image)
    b = dataio.load_image(args.ref_image)
    report = MetricReport(psnr=psnr(a, b), ssim=ssim(a, b))
    print(report.table(), end="")
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return 0


def cmd_e2e(args) -> int:
    spec = _dataset_spec_from_args(args)
    out = Path(args.out)
    data = generate_synthetic_dataset(spec, out / "dataset")
    (result, before), cfg = _train_on_dataset(data, args)
    _write_run(out / "run", data, result)
    report = evaluate_run(data, result.scene, result.views)
    print(f"pre-training: PSNR {before.psnr:.2f} dB, "
          f"ATE {before.ate_rmse:.5f}")
    print(report.table(), end="")
    (out / "metrics.csv").write_text(report.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatdeblur",
        description="Event-assisted deblurring splat pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-events",
                       help="simulate an event stream from sharp frames")
    p.add_argument("--frames", required=True, help="directory of sharp images")
    p.add_argument("--theta", type=float, default=0.27)
    p.add_argument("--exposure-us", type=float, default=40_000.0)
    p.add_argument("--out", required=True, help=".bin or .csv event file")
    _add_common(p)
    p.set_defaults(func=cmd_simulate_events)

    p = sub.add_parser("decouple",
                       help="recover latent sharp frames from blur + events")
    p.add_argument("--blur", required=True)
    p.add_argument("--events", help="binary event file (unused when theta=0)")
    p.add_argument("--theta", type=float, default=0.27)
    p.add_argument("--u", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_decouple)

    p = sub.add_parser("sample",
                       help="confidence-balanced subset of a point cloud")
    p.add_argument("--points", required=True, help="input PLY with confidence")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--intervals", type=int, default=40)
    p.add_argument("--out", required=True, help="output PLY")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("align",
                       help="global alignment of pairwise pointmaps")
    p.add_argument("--maps", required=True,
                   help="directory of {stem}_0/{stem}_1 pointmap pairs")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_align)

    def add_train_flags(q):
        q.add_argument("--config", help="training config file")
        q.add_argument("--iters", type=int, default=2000)
        q.add_argument("--warmup", type=int, default=300)
        q.add_argument("--lambda-e", type=float, default=5e-3)

    p = sub.add_parser("train", help="optimize a scene on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of images or ATE of "
                                        "trajectories")
    p.add_argument("--traj", help="estimated TUM trajectory")
    p.add_argument("--ref", help="reference TUM trajectory")
    p.add_argument("--image", help="estimated image")
    p.add_argument("--ref-image", help="reference image")
    p.add_argument("--out", help="optional CSV output path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("e2e", help="generate, decouple, sample, train, "
                                   "evaluate")
    p.add_argument("--out", required=True, help="workspace directory")
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--u", type=int, default=10)
    p.add_argument("--theta", type=float, default=0.27)
    add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_e2e)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except SplatDeblurError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IoFailure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
