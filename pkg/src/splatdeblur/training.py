"""Joint optimization of splat scenes and per-view latent trajectories.

Each blurred view contributes two signals: the blur reconstruction loss on
the average of the rendered latent images, and an event loss tying each
rendered latent to its decoupled counterpart in grayscale. Trajectories are
parameterized by a base-pose correction twist and the two exposure-delta
twists; their gradients flow through the analytic interpolation Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, DimensionMismatch, WrongChannelCount
from .events import LUMA_WEIGHTS
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    Twist,
    latent_pose_parameter_jacobians,
    se3_exp,
)
from .metrics import ssim_with_gradient
from .splat import Scene, render_backward, render_forward

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lambda_b: float = 0.2
    lambda_e: float = 5e-3
    u: int = 10
    theta: float = 0.27
    total_iters: int = 2000
    warmup_iters: int = 300
    seed: int = 0
    # learning rates; lr_means is scaled by the scene bounding-box diagonal
    lr_means: float = 1.6e-4
    lr_log_scales: float = 5e-3
    lr_quats: float = 1e-3
    lr_opacity: float = 5e-2
    lr_colors: float = 2.5e-3
    lr_deltas: float = 1e-3
    lr_base: float = 1e-4
    snapshot_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda_b <= 1.0:
            raise ValueError("lambda_b must lie in [0, 1]")
        if self.lambda_e < 0.0:
            raise ValueError("lambda_e must be nonnegative")
        if self.u < 1:
            raise ValueError("u must be at least 1")
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup cannot exceed total iterations")

    def effective_lambda_e(self, iteration: int) -> float:
        return 0.0 if iteration < self.warmup_iters else self.lambda_e


CONFIG_KEYS = {
    "lambda_b": "lambda_b",
    "lambda_e": "lambda_e",
    "u": "u",
    "theta": "theta",
    "iters": "total_iters",
    "warmup": "warmup_iters",
    "seed": "seed",
    "lr.means": "lr_means",
    "lr.scales": "lr_log_scales",
    "lr.quats": "lr_quats",
    "lr.opacity": "lr_opacity",
    "lr.colors": "lr_colors",
    "lr.deltas": "lr_deltas",
    "lr.base": "lr_base",
}

_INT_FIELDS = {"u", "total_iters", "warmup_iters", "seed"}


def read_train_config(path) -> TrainConfig:
    """Parse the 'key = value' config format; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.rstrip()}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown config key: {key}")
            attr = CONFIG_KEYS[key]
            values[attr] = int(val) if attr in _INT_FIELDS else float(val)
    return TrainConfig(**values)


def write_train_config(path, cfg: TrainConfig) -> None:
    with open(path, "w") as fh:
        for key, attr in CONFIG_KEYS.items():
            fh.write(f"{key} = {getattr(cfg, attr):.9g}\n")


@dataclass
class ViewTrajectoryParams:
    """Per-view trajectory parameters around a fixed initial pose anchor.

    The optimized base pose is Exp(base_twist) . anchor; latent pose k is
    base . Exp(d1) . Exp((k/u) Log(Exp(-d1) Exp(du))).
    """

    anchor: RigidTransform
    base_twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    d1_twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    du_twist: np.ndarray = field(default_factory=lambda: np.zeros(6))

    @property
    def base_pose(self) -> RigidTransform:
        return se3_exp(Twist.from_vector(self.base_twist)) @ self.anchor

    def latent_pose(self, s: float) -> RigidTransform:
        pose, _, _, _ = latent_pose_parameter_jacobians(
            Twist.from_vector(self.base_twist), self.anchor,
            Twist.from_vector(self.d1_twist), Twist.from_vector(self.du_twist),
            s,
        )
        return pose

    def latent_poses(self, u: int):
        return [self.latent_pose(k / u) for k in range(1, u + 1)]

    def copy(self) -> "ViewTrajectoryParams":
        return ViewTrajectoryParams(
            self.anchor, self.base_twist.copy(), self.d1_twist.copy(),
            self.du_twist.copy(),
        )


@dataclass
class TrainView:
    """One blurred observation with its decoupled latents and trajectory."""

    blur: np.ndarray  # (H, W, 3)
    edi_latents: np.ndarray  # (u, H, W, 3), indices 1..u of the decoupling
    params: ViewTrajectoryParams


@dataclass(frozen=True)
class LossBreakdown:
    l_b: float
    l_e: float
    total: float


def grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise WrongChannelCount(f"expected 3 channels, got shape {img.shape}")
    return img @ np.asarray(LUMA_WEIGHTS)


def event_loss(rendered_latents, edi_latents) -> float:
    """Mean absolute grayscale difference, averaged over the u latents."""
    rendered = list(rendered_latents)
    reference = list(edi_latents)
    if len(rendered) != len(reference):
        raise CountMismatch(f"{len(rendered)} rendered vs {len(reference)} EDI latents")
    if not rendered:
        raise CountMismatch("need at least one latent pair")
    total = 0.0
    for r, e in zip(rendered, reference):
        if r.shape != e.shape:
            raise DimensionMismatch(f"{r.shape} vs {e.shape}")
        total += float(np.mean(np.abs(grayscale(r) - grayscale(e))))
    return total / len(rendered)


def blur_loss(rendered_blur, observed_blur, lambda_b: float) -> float:
    value, _ = _blur_loss_with_grad(rendered_blur, observed_blur, lambda_b)
    return value


def _blur_loss_with_grad(rendered, observed, lambda_b):
    rendered = np.asarray(rendered, float)
    observed = np.asarray(observed, float)
    if rendered.shape != observed.shape:
        raise DimensionMismatch(f"{rendered.shape} vs {observed.shape}")
    diff = rendered - observed
    l1 = float(np.mean(np.abs(diff)))
    g_l1 = np.sign(diff) / diff.size
    if lambda_b == 0.0:
        return l1, (1.0 - lambda_b) * g_l1
    ssim_val, ssim_grad = ssim_with_gradient(rendered, observed)
    d_ssim = (1.0 - ssim_val) / 2.0
    value = (1.0 - lambda_b) * l1 + lambda_b * d_ssim
    grad = (1.0 - lambda_b) * g_l1 + lambda_b * (-0.5) * ssim_grad
    return value, grad


class Adam:
    """Standard Adam with bias correction; one instance per parameter array."""

    def __init__(self, shape, lr):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr = lr

    def step(self, grad: np.ndarray) -> np.ndarray:
        b1, b2 = ADAM_BETAS
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad**2
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class Trainer:
    """Owns all mutable optimization state for one scene + dataset."""

    def __init__(self, scene: Scene, views, intrinsics: CameraIntrinsics,
                 cfg: TrainConfig):
        if not views:
            raise CountMismatch("need at least one view")
        self.scene = scene
        self.views = views
        self.intrinsics = intrinsics
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        extent = float(
            np.linalg.norm(scene.means.max(axis=0) - scene.means.min(axis=0))
        )
        extent = extent if extent > 0 else 1.0
        self.opt_scene = {
            "means": Adam(scene.means.shape, cfg.lr_means * extent),
            "log_scales": Adam(scene.log_scales.shape, cfg.lr_log_scales),
            "quats": Adam(scene.quats.shape, cfg.lr_quats),
            "opacity_logits": Adam(scene.opacity_logits.shape, cfg.lr_opacity),
            "colors": Adam(scene.colors.shape, cfg.lr_colors),
        }
        self.opt_views = [
            {
                "base_twist": Adam(6, cfg.lr_base),
                "d1_twist": Adam(6, cfg.lr_deltas),
                "du_twist": Adam(6, cfg.lr_deltas),
            }
            for _ in views
        ]
        self._order = []
        self.history: list[LossBreakdown] = []

    def _next_view(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.views)))
        return int(self._order.pop())

    def evaluate_view(self, view_idx: int, lambda_e: float):
        """Losses and gradients for one view; pure apart from RNG-free math."""
        view = self.views[view_idx]
        cfg = self.cfg
        u = cfg.u
        params = view.params

        b = Twist.from_vector(params.base_twist)
        d1 = Twist.from_vector(params.d1_twist)
        du = Twist.from_vector(params.du_twist)
        poses, jacobians = [], []
        for k in range(1, u + 1):
            pose, j_b, j_d1, j_du = latent_pose_parameter_jacobians(
                b, params.anchor, d1, du, k / u,
            )
            poses.append(pose)
            jacobians.append((j_b, j_d1, j_du))

        # first pass: forward renders to form the blur and the event residuals
        saved = [render_forward(self.scene, pose, self.intrinsics)
                 for pose in poses]
        latents = [s.output.color for s in saved]
        blur_hat = np.mean(latents, axis=0)
        l_b, g_blur = _blur_loss_with_grad(blur_hat, view.blur, cfg.lambda_b)

        luma = np.asarray(LUMA_WEIGHTS)
        l_e = 0.0
        adjoints = []
        for k, latent in enumerate(latents):
            adj = g_blur / u
            gray_diff = grayscale(latent) - grayscale(view.edi_latents[k])
            l_e += float(np.mean(np.abs(gray_diff)))
            if lambda_e > 0.0:
                g_event = (np.sign(gray_diff) / gray_diff.size)[..., None] * luma
                adj = adj + lambda_e * g_event / u
            adjoints.append(adj)
        l_e /= u

        # second pass: backpropagate the combined adjoints
        g_scene = {name: np.zeros_like(getattr(self.scene, name))
                   for name in self.opt_scene}
        g_params = {"base_twist": np.zeros(6), "d1_twist": np.zeros(6),
                    "du_twist": np.zeros(6)}
        for sv, (j_b, j_d1, j_du), adj in zip(saved, jacobians, adjoints):
            grads = render_backward(self.scene, sv, adj)
            g_scene["means"] += grads.means
            g_scene["log_scales"] += grads.log_scales
            g_scene["quats"] += grads.quats
            g_scene["opacity_logits"] += grads.opacity_logits
            g_scene["colors"] += grads.colors
            g_params["base_twist"] += j_b.T @ grads.pose_twist
            g_params["d1_twist"] += j_d1.T @ grads.pose_twist
            g_params["du_twist"] += j_du.T @ grads.pose_twist

        total = l_b + lambda_e * l_e
        return LossBreakdown(l_b, l_e, total), g_scene, g_params

    def step(self, iteration: int) -> LossBreakdown:
        lambda_e = self.cfg.effective_lambda_e(iteration)
        view_idx = self._next_view()
        breakdown, g_scene, g_params = self.evaluate_view(view_idx, lambda_e)
        for name, opt in self.opt_scene.items():
            arr = getattr(self.scene, name)
            arr += opt.step(g_scene[name])
        params = self.views[view_idx].params
        opts = self.opt_views[view_idx]
        for name in ("base_twist", "d1_twist", "du_twist"):
            setattr(params, name,
                    getattr(params, name) + opts[name].step(g_params[name]))
        self.history.append(breakdown)
        return breakdown


def training_step(scene, views, intrinsics, cfg, iteration,
                  trainer: Trainer | None = None) -> LossBreakdown:
    """Single optimization step; pass a Trainer to keep optimizer state."""
    if trainer is None:
        trainer = Trainer(scene, views, intrinsics, cfg)
    return trainer.step(iteration)


@dataclass
class TrainResult:
    scene: Scene
    views: list
    history: list
    snapshots: list

    def log_csv(self) -> str:
        lines = ["iter,l_b,l_e,total"]
        for i, b in enumerate(self.history):
            lines.append(f"{i},{b.l_b:.9g},{b.l_e:.9g},{b.total:.9g}")
        return "\n".join(lines) + "\n"


def train(scene: Scene, views, intrinsics: CameraIntrinsics,
          cfg: TrainConfig) -> TrainResult:
    """Run the full schedule; deterministic for a fixed config and seed."""
    trainer = Trainer(scene, views, intrinsics, cfg)
    snapshots = []
    for iteration in range(cfg.total_iters):
        trainer.step(iteration)
        if cfg.snapshot_every and (iteration + 1) % cfg.snapshot_every == 0:
            snapshots.append((iteration + 1, scene.copy()))
    return TrainResult(scene=scene, views=views, history=trainer.history,
                       snapshots=snapshots)
