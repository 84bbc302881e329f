"""Glue between dataset artifacts and the optimization / evaluation stages."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .events import bin_events, edi_decouple
from .geometry import CameraIntrinsics
from .metrics import MetricReport, ate, psnr, ssim
from .sampling import ConfidencePointCloud, SamplingPlan, \
    confidence_balanced_sample
from .splat import Scene, rasterize
from .synthetic import SyntheticDataset
from .training import TrainConfig, TrainView, ViewTrajectoryParams, train

DEFAULT_OPACITY_LOGIT = 1.0


def decouple_view_events(data: SyntheticDataset):
    """EDI latents for every view, from its blur image and event stream."""
    out = []
    theta, u = data.spec.theta, data.spec.u
    for view in data.views:
        bins = bin_events(view.events, u)
        _, latents = edi_decouple(np.asarray(view.blur, float), bins, theta)
        out.append(np.stack(latents))
    return out


def initial_scene(cloud: ConfidencePointCloud, background,
                  indices=None, max_scale: float = 0.08) -> Scene:
    """Seed splats at (a subset of) the cloud with isotropic local scales.

    Scales follow half the nearest-neighbor distance but are capped at
    max_scale so seed footprints stay a few pixels wide; oversized seeds
    dominate rendering cost and wash out early gradients.
    """
    if indices is not None:
        cloud = ConfidencePointCloud(
            positions=cloud.positions[indices],
            confidence=cloud.confidence[indices],
            colors=None if cloud.colors is None else cloud.colors[indices],
        )
    k = len(cloud)
    pos = cloud.positions
    if k > 1:
        nn, _ = cKDTree(pos).query(pos, k=2)
        radii = np.clip(nn[:, 1], 1e-6, 2.0 * max_scale)
    else:
        radii = np.full(1, 2.0 * max_scale)
    colors = cloud.colors if cloud.colors is not None else np.full((k, 3), 0.5)
    quats = np.zeros((k, 4))
    quats[:, 0] = 1.0
    return Scene(
        means=pos.copy(),
        log_scales=np.tile(np.log(0.5 * radii)[:, None], (1, 3)),
        quats=quats,
        opacity_logits=np.full(k, DEFAULT_OPACITY_LOGIT),
        colors=np.clip(colors, 0.0, 1.0),
        background=np.asarray(background, float).copy(),
    )


def make_train_views(data: SyntheticDataset, edi_latents=None):
    """Training views anchored at the dataset's (noisy) initial poses."""
    if edi_latents is None:
        edi_latents = decouple_view_events(data)
    views = []
    for view, edi in zip(data.views, edi_latents):
        anchor = view.initial_anchor
        if anchor is None:
            anchor = view.params.anchor
        views.append(TrainView(
            blur=np.asarray(view.blur, float),
            edi_latents=np.asarray(edi, float),
            params=ViewTrajectoryParams(anchor),
        ))
    return views


def trajectory_positions(views, u: int) -> np.ndarray:
    """Latent camera positions at times k/u for every view, in view order."""
    pts = []
    for view in views:
        for pose in view.params.latent_poses(u):
            pts.append(pose.inverse().translation)
    return np.asarray(pts)


def gt_trajectory_positions(data: SyntheticDataset) -> np.ndarray:
    return np.asarray([p.inverse().translation for p in data.trajectory.poses])


def evaluate_run(data: SyntheticDataset, scene: Scene, views) -> MetricReport:
    """Score rendered latents against held-out sharp frames, plus ATE."""
    intr = data.intrinsics
    u = data.spec.u
    psnrs, ssims = [], []
    for view, gt_view in zip(views, data.views):
        for k, pose in enumerate(view.params.latent_poses(u)):
            rendered = rasterize(scene, pose, intr).color
            sharp = np.asarray(gt_view.latents[k], float)
            psnrs.append(psnr(rendered, sharp))
            ssims.append(ssim(rendered, sharp))
    ate_rmse = ate(trajectory_positions(views, u),
                   gt_trajectory_positions(data))
    return MetricReport(psnr=float(np.mean(psnrs)), ssim=float(np.mean(ssims)),
                        ate_rmse=ate_rmse)


def run_training(data: SyntheticDataset, cfg: TrainConfig,
                 sample_plan: SamplingPlan | None = None):
    """Decouple, seed splats from the confidence cloud, and optimize.

    Returns (TrainResult, pre-training MetricReport).
    """
    if sample_plan is not None:
        indices = confidence_balanced_sample(data.cloud, sample_plan)
    else:
        indices = None
    scene = initial_scene(data.cloud, data.scene.background, indices)
    views = make_train_views(data)
    before = evaluate_run(data, scene, views)
    result = train(scene, views, data.intrinsics, cfg)
    return result, before


def train_config_from_spec(data: SyntheticDataset, **overrides) -> TrainConfig:
    base = dict(u=data.spec.u, theta=data.spec.theta)
    base.update(overrides)
    return TrainConfig(**base)
