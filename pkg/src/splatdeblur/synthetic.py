"""Deterministic synthetic desk-scale scenes for end-to-end experiments.

A dataset is a random splat scene observed by a handful of cameras that move
during the exposure: each view stores the sharp latent frames along the
trajectory, their average as the blurred observation, and an event stream
simulated from the latent sequence. Ground truth (scene, trajectories, a
confidence point cloud) is written alongside so every pipeline stage can be
scored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as dataio
from .errors import IoFailure
from .events import EventStream, simulate_events, synthesize_blur
from .geometry import CameraIntrinsics, RigidTransform, Twist, se3_exp
from .sampling import ConfidencePointCloud
from .splat import Scene, rasterize
from .training import TrainView, ViewTrajectoryParams

DEFAULT_EXPOSURE_US = 40_000.0


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_gaussians: int = 200
    width: int = 64
    height: int = 64
    n_views: int = 8
    u: int = 10
    translation_amplitude: float = 0.12
    rotation_amplitude: float = 0.015
    theta: float = 0.27
    seed: int = 0
    focal: float = 70.0
    exposure_us: float = DEFAULT_EXPOSURE_US
    # pose noise applied to the anchors handed to downstream consumers, so
    # trajectory estimation starts away from the ground truth
    anchor_noise_translation: float = 0.03
    anchor_noise_rotation: float = 0.01

    def __post_init__(self):
        for name in ("n_gaussians", "n_views", "u"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.width < 16 or self.height < 16:
            raise ValueError("image dims must be >= 16")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(focal=self.focal, width=self.width,
                                height=self.height)


SPEC_KEYS = {
    "gaussians": ("n_gaussians", int),
    "width": ("width", int),
    "height": ("height", int),
    "views": ("n_views", int),
    "u": ("u", int),
    "trans_amp": ("translation_amplitude", float),
    "rot_amp": ("rotation_amplitude", float),
    "theta": ("theta", float),
    "seed": ("seed", int),
    "focal": ("focal", float),
    "exposure_us": ("exposure_us", float),
    "anchor_noise_trans": ("anchor_noise_translation", float),
    "anchor_noise_rot": ("anchor_noise_rotation", float),
}


def write_dataset_spec(path, spec: SyntheticDatasetSpec) -> None:
    with open(path, "w") as fh:
        for key, (attr, _) in SPEC_KEYS.items():
            fh.write(f"{key} = {getattr(spec, attr):.9g}\n")


def read_dataset_spec(path) -> SyntheticDatasetSpec:
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise IoFailure(f"malformed spec line: {raw.rstrip()}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in SPEC_KEYS:
                raise IoFailure(f"unknown spec key: {key}")
            attr, conv = SPEC_KEYS[key]
            values[attr] = conv(float(val)) if conv is int else conv(val)
    return SyntheticDatasetSpec(**values)


@dataclass
class SyntheticView:
    """Everything emitted for one blurred observation."""

    params: ViewTrajectoryParams  # ground-truth trajectory
    start: np.ndarray  # sharp frame at the start of the exposure
    latents: list  # u sharp frames at times k/u, float32 values
    blur: np.ndarray  # mean of the latent frames
    events: EventStream
    initial_anchor: RigidTransform | None = None  # noisy pose for estimation


@dataclass
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    scene: Scene
    views: list
    cloud: ConfidencePointCloud
    trajectory: dataio.Trajectory

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.intrinsics


def build_synthetic_scene(spec: SyntheticDatasetSpec,
                          rng: np.random.Generator) -> Scene:
    """Random splats filling the frustum of a camera at the origin."""
    k = spec.n_gaussians
    # a wide depth range gives the views enough parallax to separate
    # camera translation from rotation during trajectory optimization
    z = rng.uniform(1.8, 6.0, k)
    half_w = 0.5 * spec.width / spec.focal
    half_h = 0.5 * spec.height / spec.focal
    means = np.column_stack([
        rng.uniform(-0.9, 0.9, k) * half_w * z,
        rng.uniform(-0.9, 0.9, k) * half_h * z,
        z,
    ])
    # projected footprints stay at a few pixels so tiles hold few splats
    log_scales = rng.uniform(np.log(0.06), np.log(0.14), (k, 3))
    quats = rng.normal(size=(k, 4))
    opacity_logits = rng.uniform(0.0, 2.5, k)
    colors = rng.uniform(0.05, 0.95, (k, 3))
    return Scene(means=means, log_scales=log_scales, quats=quats,
                 opacity_logits=opacity_logits, colors=colors,
                 background=np.array([0.08, 0.08, 0.08]))


def build_view_trajectories(spec: SyntheticDatasetSpec,
                            rng: np.random.Generator):
    """Anchor poses on a jittered ring plus per-exposure motion twists.

    The ring diameter is a few times the per-exposure motion so the views
    carry a real baseline: without it the scene cannot be triangulated and
    pose errors hide in the translation/rotation ambiguity.
    """
    ta, ra = spec.translation_amplitude, spec.rotation_amplitude
    out = []
    for v in range(spec.n_views):
        angle = 2.0 * np.pi * v / spec.n_views
        offset = 2.0 * ta * np.array([np.cos(angle), np.sin(angle), 0.0])
        anchor = se3_exp(Twist(offset + rng.normal(size=3) * 0.05 * ta,
                               rng.normal(size=3) * 0.5 * ra))
        direction = rng.normal(size=6)
        direction[:3] *= ta / max(np.linalg.norm(direction[:3]), 1e-12)
        direction[3:] *= ra / max(np.linalg.norm(direction[3:]), 1e-12)
        # exposure sweeps from -half to +half of the motion around the anchor
        params = ViewTrajectoryParams(anchor)
        params.d1_twist = -0.5 * direction
        params.du_twist = 0.5 * direction
        out.append(params)
    return out


def render_support_confidences(scene: Scene, poses, intr: CameraIntrinsics):
    """Per-splat confidence that grows with accumulated rendering weight.

    The raw support of splat i is the sum over views of its opacity-weighted
    screen coverage; confidences are a monotone squashing of that support.
    """
    support = np.zeros(len(scene))
    cov_scale = np.exp(scene.log_scales).max(axis=1)
    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits))
    for pose in poses:
        cam = scene.means @ pose.rotation.T + pose.translation
        z = cam[:, 2]
        visible = z > 0.01
        xs = intr.focal * cam[:, 0] / np.where(visible, z, 1.0) + intr.width / 2
        ys = intr.focal * cam[:, 1] / np.where(visible, z, 1.0) + intr.height / 2
        on_screen = (
            visible & (xs >= 0) & (xs < intr.width)
            & (ys >= 0) & (ys < intr.height)
        )
        radius = intr.focal * cov_scale / np.where(visible, z, 1.0)
        support += np.where(on_screen, opac * radius**2, 0.0)
    return 1.0 + np.log1p(support)


def _quantize_timestamps(stream: EventStream) -> EventStream:
    """Round event times to whole microseconds, the binary file resolution."""
    return EventStream(
        x=stream.x, y=stream.y, t=np.round(stream.t), p=stream.p,
        t_start=stream.t_start, t_end=stream.t_end,
        width=stream.width, height=stream.height,
    )


def build_synthetic_dataset(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Construct the full dataset in memory; deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    scene = build_synthetic_scene(spec, rng)
    trajectories = build_view_trajectories(spec, rng)
    intr = spec.intrinsics
    u = spec.u

    views = []
    stamps, poses = [], []
    for v, params in enumerate(trajectories):
        frame_poses = [params.latent_pose(k / u) for k in range(0, u + 1)]
        frames = [rasterize(scene, p, intr).color for p in frame_poses]
        start = frames[0].astype(np.float32)
        latents = [f.astype(np.float32) for f in frames[1:]]
        blur = synthesize_blur(latents)
        times = np.linspace(0.0, spec.exposure_us, u + 1)
        events = _quantize_timestamps(
            simulate_events(frames, times, spec.theta)
        )
        noisy = se3_exp(Twist(
            rng.normal(size=3) * spec.anchor_noise_translation,
            rng.normal(size=3) * spec.anchor_noise_rotation,
        )) @ params.anchor
        views.append(SyntheticView(params=params, start=start,
                                   latents=latents, blur=blur, events=events,
                                   initial_anchor=noisy))
        for k in range(1, u + 1):
            stamps.append(v + k / u)
            poses.append(frame_poses[k])

    cloud = ConfidencePointCloud(
        positions=scene.means.copy(),
        confidence=render_support_confidences(
            scene, [p.base_pose for p in trajectories], intr
        ),
        colors=scene.colors.copy(),
    )
    trajectory = dataio.Trajectory(np.asarray(stamps), poses)
    return SyntheticDataset(spec=spec, scene=scene, views=views, cloud=cloud,
                            trajectory=trajectory)


def view_dir(root, v: int) -> Path:
    return Path(root) / "views" / f"view_{v:03d}"


def generate_synthetic_dataset(spec: SyntheticDatasetSpec,
                               out_dir) -> SyntheticDataset:
    """Build the dataset and write every artifact under out_dir."""
    data = build_synthetic_dataset(spec)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_dataset_spec(root / "dataset.cfg", spec)
    dataio.write_scene_ply(root / "scene.ply", data.scene)
    dataio.write_point_cloud_ply(root / "points.ply", data.cloud)
    dataio.write_tum(root / "gt_trajectory.txt", data.trajectory)
    for v, view in enumerate(data.views):
        vdir = view_dir(root, v)
        vdir.mkdir(parents=True, exist_ok=True)
        dataio.write_pfm(vdir / "start.pfm", view.start)
        for k, latent in enumerate(view.latents, start=1):
            dataio.write_pfm(vdir / f"sharp_{k:02d}.pfm", latent)
        dataio.write_pfm(vdir / "blur.pfm", view.blur)
        dataio.write_events_binary(vdir / "events.bin", view.events)
        anchors = dataio.Trajectory(np.array([0.0]),
                                    [view.initial_anchor])
        dataio.write_tum(vdir / "anchor.txt", anchors)
    return data


def load_synthetic_dataset(root) -> SyntheticDataset:
    """Read a dataset previously written by generate_synthetic_dataset."""
    root = Path(root)
    spec = read_dataset_spec(root / "dataset.cfg")
    scene = dataio.read_scene_ply(root / "scene.ply")
    cloud = dataio.read_point_cloud_ply(root / "points.ply")
    trajectory = dataio.read_tum(root / "gt_trajectory.txt")
    views = []
    for v in range(spec.n_views):
        vdir = view_dir(root, v)
        start = dataio.read_pfm(vdir / "start.pfm")
        latents = [
            dataio.read_pfm(vdir / f"sharp_{k:02d}.pfm").astype(np.float32)
            for k in range(1, spec.u + 1)
        ]
        blur = dataio.read_pfm(vdir / "blur.pfm")
        events = dataio.read_events_binary(
            vdir / "events.bin", t_start=0.0, t_end=spec.exposure_us
        )
        anchor = dataio.read_tum(vdir / "anchor.txt").poses[0]
        views.append(SyntheticView(
            params=ViewTrajectoryParams(anchor), start=start,
            latents=latents, blur=blur, events=events, initial_anchor=anchor,
        ))
    return SyntheticDataset(spec=spec, scene=scene, views=views, cloud=cloud,
                            trajectory=trajectory)
