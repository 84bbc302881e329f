"""Differentiable CPU rasterizer for anisotropic 3D Gaussian splats.

Forward: project each Gaussian to a 2D footprint, sort front to back, and
alpha-composite per pixel with early termination. Backward: analytic
reverse-mode gradients for every Gaussian parameter and for a left
perturbation twist of the camera pose.

The camera pose maps world to camera coordinates (x_cam = R x_w + t); depth
is the camera-frame z. Pixel centers sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Quaternion, RigidTransform, _skew

try:  # optional fused kernels; the numpy path below is the reference
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


NEAR_PLANE = 0.01
# Compositing stops once transmittance falls below this.
MIN_TRANSMITTANCE = 1e-4
# Contributions beyond the 3-sigma Mahalanobis radius are cut to exactly zero
# (sigma = d^2/2 = 4.5), which is what makes tile culling lossless.
SIGMA_CUTOFF = 4.5
# Low-pass floor added to the projected covariance diagonal, in px^2.
COV2D_FLOOR = 0.3
# Projected Gaussians with a determinant below this are skipped as singular.
MIN_DET = 1e-12

TILE = 16


@dataclass
class Gaussian3D:
    """One splat primitive with unconstrained storage for scale and opacity."""

    mu: np.ndarray  # (3,)
    log_scale: np.ndarray  # (3,)
    quat: np.ndarray  # (4,) wxyz, normalized on use
    opacity_logit: float
    color: np.ndarray  # (3,) in [0, 1]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_scale, float))

    @property
    def opacity(self) -> float:
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))

    @property
    def rotation(self) -> np.ndarray:
        q = np.asarray(self.quat, float)
        return Quaternion(*(q / np.linalg.norm(q))).to_matrix()


@dataclass
class Scene:
    """Splat collection stored as arrays for vectorized rendering."""

    means: np.ndarray  # (K, 3)
    log_scales: np.ndarray  # (K, 3)
    quats: np.ndarray  # (K, 4) wxyz
    opacity_logits: np.ndarray  # (K,)
    colors: np.ndarray  # (K, 3)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.means = np.asarray(self.means, float).reshape(-1, 3)
        k = len(self.means)
        self.log_scales = np.asarray(self.log_scales, float).reshape(k, 3)
        self.quats = np.asarray(self.quats, float).reshape(k, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, float).reshape(k)
        self.colors = np.asarray(self.colors, float).reshape(k, 3)
        self.background = np.asarray(self.background, float).reshape(3)

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mu=self.means[i],
            log_scale=self.log_scales[i],
            quat=self.quats[i],
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i],
        )

    @staticmethod
    def from_gaussians(gaussians, background=(0.0, 0.0, 0.0)) -> "Scene":
        return Scene(
            means=np.array([g.mu for g in gaussians], float),
            log_scales=np.array([g.log_scale for g in gaussians], float),
            quats=np.array([g.quat for g in gaussians], float),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], float),
            colors=np.array([g.color for g in gaussians], float),
            background=np.asarray(background, float),
        )

    def copy(self) -> "Scene":
        return Scene(
            self.means.copy(),
            self.log_scales.copy(),
            self.quats.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
            self.background.copy(),
        )


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray  # (H, W) final per-pixel transmittance
    weight_sum: np.ndarray  # (H, W) accumulated alpha weights


@dataclass
class SceneGradients:
    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    pose_twist: np.ndarray  # (6,) left perturbation (rho, phi)


def _rotations_from_quats(quats: np.ndarray) -> np.ndarray:
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def build_covariance(g: Gaussian3D) -> np.ndarray:
    """World-frame covariance R diag(scale^2) R^T; PSD by construction."""
    r = g.rotation
    return r @ np.diag(g.scale**2) @ r.T


def _covariances(scene: Scene) -> np.ndarray:
    r = _rotations_from_quats(scene.quats)
    s2 = np.exp(2.0 * scene.log_scales)
    return np.einsum("kij,kj,klj->kil", r, s2, r)


@dataclass
class _Projected:
    """Per-Gaussian screen-space state shared by forward and backward."""

    t_cam: np.ndarray  # (K, 3) camera-frame means
    mean2d: np.ndarray  # (K, 2)
    depth: np.ndarray  # (K,)
    cov2d: np.ndarray  # (K, 2, 2) with low-pass floor applied
    conic: np.ndarray  # (K, 2, 2) inverse of cov2d
    m_world: np.ndarray  # (K, 3, 3) camera-rotated covariance
    jacobian: np.ndarray  # (K, 2, 3) perspective Jacobian at t_cam
    valid: np.ndarray  # (K,) bool
    order: np.ndarray  # valid indices sorted by (depth, index)


def _project_all(scene: Scene, pose: RigidTransform, intr: CameraIntrinsics,
                 near: float = NEAR_PLANE) -> _Projected:
    w_rot = pose.rotation
    cov = _covariances(scene)
    t_cam = scene.means @ w_rot.T + pose.translation
    tz = t_cam[:, 2]
    valid = tz > near

    safe_z = np.where(valid, tz, 1.0)
    f = intr.focal
    j = np.zeros((len(scene), 2, 3))
    j[:, 0, 0] = f / safe_z
    j[:, 1, 1] = f / safe_z
    j[:, 0, 2] = -f * t_cam[:, 0] / safe_z**2
    j[:, 1, 2] = -f * t_cam[:, 1] / safe_z**2

    m = np.einsum("ij,kjl,ml->kim", w_rot, cov, w_rot)
    cov2d = np.einsum("kij,kjl,kml->kim", j, m, j)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    valid &= det >= MIN_DET

    conic = np.zeros_like(cov2d)
    safe_det = np.where(det > 0, det, 1.0)
    conic[:, 0, 0] = c / safe_det
    conic[:, 0, 1] = -b / safe_det
    conic[:, 1, 0] = -b / safe_det
    conic[:, 1, 1] = a / safe_det

    mean2d = np.stack(
        [f * t_cam[:, 0] / safe_z + intr.cx, f * t_cam[:, 1] / safe_z + intr.cy],
        axis=1,
    )
    idx = np.arange(len(scene))
    order = idx[np.lexsort((idx, tz))]
    order = order[valid[order]]
    return _Projected(
        t_cam=t_cam, mean2d=mean2d, depth=tz, cov2d=cov2d, conic=conic,
        m_world=m, jacobian=j, valid=valid, order=order,
    )


def project_gaussian(g: Gaussian3D, pose: RigidTransform, intr: CameraIntrinsics,
                     near: float = NEAR_PLANE):
    """Project one Gaussian; returns (mean2d, cov2d, depth) or None if culled."""
    scene = Scene.from_gaussians([g])
    proj = _project_all(scene, pose, intr, near)
    if not proj.valid[0]:
        return None
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])


def _tile_ranges(size: int, tile: int):
    return [(lo, min(lo + tile, size)) for lo in range(0, size, tile)]


def _footprint_radii(proj: _Projected):
    rx = 3.0 * np.sqrt(np.maximum(proj.cov2d[:, 0, 0], 0.0))
    ry = 3.0 * np.sqrt(np.maximum(proj.cov2d[:, 1, 1], 0.0))
    return rx, ry


def _tile_alphas(scene, proj, sel, xs, ys):
    """Alpha matrix (n_sel, n_pix) for the given pixel centers, with the
    sigma cutoff applied as an exact zero."""
    dx = xs[None, :] - proj.mean2d[sel, 0][:, None]
    dy = ys[None, :] - proj.mean2d[sel, 1][:, None]
    ca = proj.conic[sel, 0, 0][:, None]
    cb = proj.conic[sel, 0, 1][:, None]
    cc = proj.conic[sel, 1, 1][:, None]
    sigma = 0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
    opacity = 1.0 / (1.0 + np.exp(-scene.opacity_logits[sel]))[:, None]
    inside = sigma <= SIGMA_CUTOFF
    alpha = np.zeros_like(sigma)
    np.exp(-sigma, out=alpha, where=inside)
    alpha *= opacity
    return alpha, sigma, dx, dy


def _transmittance_before(alpha: np.ndarray) -> np.ndarray:
    t = np.cumprod(1.0 - alpha, axis=0)
    return np.concatenate([np.ones((1, alpha.shape[1])), t[:-1]], axis=0)


def rasterize(scene: Scene, pose: RigidTransform, intr: CameraIntrinsics,
              tile: int = TILE) -> RenderOutput:
    """Front-to-back alpha compositing over depth-sorted Gaussians."""
    if len(scene) == 0:
        raise ValueError("scene must be nonempty for rendering")
    h, w = intr.height, intr.width
    color = np.empty((h, w, 3))
    color[:] = scene.background
    transmittance = np.ones((h, w))
    weight_sum = np.zeros((h, w))

    proj = _project_all(scene, pose, intr)
    if len(proj.order) == 0:
        return RenderOutput(color, transmittance, weight_sum)
    rx, ry = _footprint_radii(proj)
    xs_img, ys_img = np.meshgrid(
        np.arange(w, dtype=float), np.arange(h, dtype=float)
    )

    for y0, y1 in _tile_ranges(h, tile):
        for x0, x1 in _tile_ranges(w, tile):
            o = proj.order
            hit = (
                (proj.mean2d[o, 0] + rx[o] >= x0)
                & (proj.mean2d[o, 0] - rx[o] <= x1 - 1)
                & (proj.mean2d[o, 1] + ry[o] >= y0)
                & (proj.mean2d[o, 1] - ry[o] <= y1 - 1)
            )
            sel = o[hit]
            if len(sel) == 0:
                continue
            xs = xs_img[y0:y1, x0:x1].ravel()
            ys = ys_img[y0:y1, x0:x1].ravel()
            alpha, _, _, _ = _tile_alphas(scene, proj, sel, xs, ys)
            t_before = _transmittance_before(alpha)
            contrib = (t_before >= MIN_TRANSMITTANCE) & (alpha > 0.0)

            npix = len(xs)
            c_acc = np.zeros((npix, 3))
            w_acc = np.zeros(npix)
            t_run = np.ones(npix)
            for i in range(len(sel)):
                wi = np.where(contrib[i], alpha[i] * t_before[i], 0.0)
                c_acc += wi[:, None] * scene.colors[sel[i]]
                w_acc += wi
                t_run *= np.where(contrib[i], 1.0 - alpha[i], 1.0)
            c_acc += t_run[:, None] * scene.background

            shape = (y1 - y0, x1 - x0)
            color[y0:y1, x0:x1] = c_acc.reshape(shape + (3,))
            transmittance[y0:y1, x0:x1] = t_run.reshape(shape)
            weight_sum[y0:y1, x0:x1] = w_acc.reshape(shape)
    return RenderOutput(color, transmittance, weight_sum)


def rasterize_naive(scene: Scene, pose: RigidTransform,
                    intr: CameraIntrinsics) -> RenderOutput:
    """Per-pixel reference loop; must match rasterize bit for bit."""
    if len(scene) == 0:
        raise ValueError("scene must be nonempty for rendering")
    h, w = intr.height, intr.width
    proj = _project_all(scene, pose, intr)
    color = np.empty((h, w, 3))
    color[:] = scene.background
    transmittance = np.ones((h, w))
    weight_sum = np.zeros((h, w))
    opacities = 1.0 / (1.0 + np.exp(-scene.opacity_logits))
    for py in range(h):
        for px in range(w):
            t_run = 1.0
            c = np.zeros(3)
            ws = 0.0
            for i in proj.order:
                if t_run < MIN_TRANSMITTANCE:
                    break
                dx = px - proj.mean2d[i, 0]
                dy = py - proj.mean2d[i, 1]
                sigma = 0.5 * (
                    proj.conic[i, 0, 0] * dx * dx
                    + 2.0 * proj.conic[i, 0, 1] * dx * dy
                    + proj.conic[i, 1, 1] * dy * dy
                )
                if sigma > SIGMA_CUTOFF:
                    continue
                alpha = opacities[i] * np.exp(-sigma)
                wi = alpha * t_run
                c += wi * scene.colors[i]
                ws += wi
                t_run *= 1.0 - alpha
            c += t_run * scene.background
            color[py, px] = c
            transmittance[py, px] = t_run
            weight_sum[py, px] = ws
    return RenderOutput(color, transmittance, weight_sum)


def _quat_rotation_grads(quats: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Chain dL/dR back to the raw (unnormalized) quaternion storage."""
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    q = quats / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zeros = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack(
            [np.stack(r, axis=-1) for r in rows], axis=-2
        )  # (K, 3, 3)

    dr_dw = mat([[zeros, -z, y], [z, zeros, -x], [-y, x, zeros]])
    dr_dx = mat([[zeros, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dr_dy = mat([[-2 * y, x, w], [x, zeros, z], [-w, z, -2 * y]])
    dr_dz = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zeros]])
    g_unit = np.stack(
        [np.einsum("kij,kij->k", g_rot, d) for d in (dr_dw, dr_dx, dr_dy, dr_dz)],
        axis=1,
    )
    # through normalization: q_hat = q / |q|
    proj = g_unit - q * np.einsum("ki,ki->k", g_unit, q)[:, None]
    return proj / norms


@dataclass
class SavedRender:
    """Forward-pass intermediates needed to run the backward pass later.

    With numba available only the tile assignment is kept and the backward
    kernel replays the compositing at native speed. Otherwise tile state is
    stored densely: every nonempty tile is padded to the same gaussian count
    (padding has alpha exactly 0, so it never contributes) and the same pixel
    count (padding pixels get a zero adjoint), which lets the backward pass
    run as a handful of large array operations instead of hundreds of small
    per-tile ones.
    """

    pose: RigidTransform
    intr: CameraIntrinsics
    proj: "_Projected"
    output: RenderOutput
    rects: list  # (y0, x0, y1, x1) per nonempty tile
    sel_flat: np.ndarray | None = None  # numba path: concatenated tile sels
    sel_start: np.ndarray | None = None  # (T+1,) offsets into sel_flat
    rects_arr: np.ndarray | None = None  # (T, 4) int64 copy of rects
    opacities: np.ndarray | None = None  # (K,) sigmoid of the logits
    sel_pad: np.ndarray | None = None  # (T, n) gaussian ids, depth-ordered
    opac_pad: np.ndarray | None = None  # (T, n), 0 on padding
    xs_pad: np.ndarray | None = None  # (T, p) pixel centers
    ys_pad: np.ndarray | None = None
    alpha: np.ndarray | None = None  # (T, p, n)
    t_before: np.ndarray | None = None
    contrib: np.ndarray | None = None
    wmat: np.ndarray | None = None
    t_run: np.ndarray | None = None  # (T, p)


@_njit(cache=True)
def _forward_kernel(sel_flat, sel_start, rects, mean2d, conic_a, conic_b,
                    conic_c, opac, colors, bg, color, transmittance,
                    weight_sum):  # pragma: no cover - replaced by numba
    for t in range(rects.shape[0]):
        y0, x0, y1, x1 = rects[t, 0], rects[t, 1], rects[t, 2], rects[t, 3]
        s0, s1 = sel_start[t], sel_start[t + 1]
        for py in range(y0, y1):
            for px in range(x0, x1):
                t_run = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                ws = 0.0
                for si in range(s0, s1):
                    if t_run < MIN_TRANSMITTANCE:
                        break
                    i = sel_flat[si]
                    dx = px - mean2d[i, 0]
                    dy = py - mean2d[i, 1]
                    sigma = 0.5 * (
                        conic_a[i] * dx * dx
                        + 2.0 * conic_b[i] * dx * dy
                        + conic_c[i] * dy * dy
                    )
                    if sigma > SIGMA_CUTOFF:
                        continue
                    a_ = opac[i] * np.exp(-sigma)
                    if a_ <= 0.0:
                        continue
                    wi = a_ * t_run
                    c0 += wi * colors[i, 0]
                    c1 += wi * colors[i, 1]
                    c2 += wi * colors[i, 2]
                    ws += wi
                    t_run *= 1.0 - a_
                color[py, px, 0] = c0 + t_run * bg[0]
                color[py, px, 1] = c1 + t_run * bg[1]
                color[py, px, 2] = c2 + t_run * bg[2]
                transmittance[py, px] = t_run
                weight_sum[py, px] = ws


@_njit(cache=True)
def _backward_kernel(sel_flat, sel_start, rects, mean2d, conic_a, conic_b,
                     conic_c, opac, colors, bg, adjoint, g_color, g_logit,
                     g_mean2d, g_ca, g_cb,
                     g_cc):  # pragma: no cover - replaced by numba
    max_n = 0
    for t in range(rects.shape[0]):
        m = sel_start[t + 1] - sel_start[t]
        if m > max_n:
            max_n = m
    alpha_s = np.empty(max_n)
    tb_s = np.empty(max_n)
    dx_s = np.empty(max_n)
    dy_s = np.empty(max_n)
    for t in range(rects.shape[0]):
        y0, x0, y1, x1 = rects[t, 0], rects[t, 1], rects[t, 2], rects[t, 3]
        s0, s1 = sel_start[t], sel_start[t + 1]
        for py in range(y0, y1):
            for px in range(x0, x1):
                a0 = adjoint[py, px, 0]
                a1 = adjoint[py, px, 1]
                a2 = adjoint[py, px, 2]
                # replay the forward compositing for this pixel
                t_run = 1.0
                m = 0
                for si in range(s0, s1):
                    if t_run < MIN_TRANSMITTANCE:
                        break
                    i = sel_flat[si]
                    dx = px - mean2d[i, 0]
                    dy = py - mean2d[i, 1]
                    sigma = 0.5 * (
                        conic_a[i] * dx * dx
                        + 2.0 * conic_b[i] * dx * dy
                        + conic_c[i] * dy * dy
                    )
                    if sigma > SIGMA_CUTOFF:
                        a_ = 0.0
                    else:
                        a_ = opac[i] * np.exp(-sigma)
                    alpha_s[m] = a_
                    tb_s[m] = t_run
                    dx_s[m] = dx
                    dy_s[m] = dy
                    m += 1
                    if a_ > 0.0:
                        t_run *= 1.0 - a_
                bgdot = bg[0] * a0 + bg[1] * a1 + bg[2] * a2
                acc = bgdot * t_run
                for ii in range(m - 1, -1, -1):
                    a_ = alpha_s[ii]
                    if a_ <= 0.0:
                        continue
                    tb = tb_s[ii]
                    i = sel_flat[s0 + ii]
                    cda = (colors[i, 0] * a0 + colors[i, 1] * a1
                           + colors[i, 2] * a2)
                    wi = a_ * tb
                    om = 1.0 - a_
                    if om > 0.0:  # IEEE-style division for saturated alpha
                        d_alpha = cda * tb - acc / om
                    elif acc == 0.0:
                        d_alpha = np.nan
                    elif acc > 0.0:
                        d_alpha = -np.inf
                    else:
                        d_alpha = np.inf
                    acc += wi * cda
                    g_color[i, 0] += wi * a0
                    g_color[i, 1] += wi * a1
                    g_color[i, 2] += wi * a2
                    g_logit[i] += d_alpha * a_ * (1.0 - opac[i])
                    dsa = d_alpha * a_
                    dx = dx_s[ii]
                    dy = dy_s[ii]
                    g_mean2d[i, 0] += dsa * (conic_a[i] * dx + conic_b[i] * dy)
                    g_mean2d[i, 1] += dsa * (conic_b[i] * dx + conic_c[i] * dy)
                    g_ca[i] += -0.5 * dsa * dx * dx
                    g_cb[i] += -0.5 * dsa * dx * dy
                    g_cc[i] += -0.5 * dsa * dy * dy


def _select_tiles(proj: _Projected, h: int, w: int, tile: int):
    """Depth-ordered gaussian lists per nonempty tile."""
    rx, ry = _footprint_radii(proj)
    o = proj.order
    mx, my = proj.mean2d[o, 0], proj.mean2d[o, 1]
    rects, sels = [], []
    for y0, y1 in _tile_ranges(h, tile):
        for x0, x1 in _tile_ranges(w, tile):
            hit = (
                (mx + rx[o] >= x0) & (mx - rx[o] <= x1 - 1)
                & (my + ry[o] >= y0) & (my - ry[o] <= y1 - 1)
            )
            sel = o[hit]
            if len(sel):
                rects.append((y0, x0, y1, x1))
                sels.append(sel)
    return rects, sels


def render_forward(scene: Scene, pose: RigidTransform, intr: CameraIntrinsics,
                   tile: int = TILE) -> SavedRender:
    """Vectorized forward render that records dense state for backward."""
    if len(scene) == 0:
        raise ValueError("scene must be nonempty for rendering")
    h, w = intr.height, intr.width
    proj = _project_all(scene, pose, intr)
    color = np.empty((h, w, 3))
    color[:] = scene.background
    transmittance = np.ones((h, w))
    weight_sum = np.zeros((h, w))
    out = RenderOutput(color, transmittance, weight_sum)
    saved = SavedRender(pose=pose, intr=intr, proj=proj, output=out, rects=[])
    if len(proj.order) == 0:
        return saved

    rects, sels = _select_tiles(proj, h, w, tile)
    if not rects:
        return saved
    saved.rects = rects
    opacities = 1.0 / (1.0 + np.exp(-scene.opacity_logits))
    saved.opacities = opacities

    if _HAVE_NUMBA:
        saved.sel_flat = np.concatenate(sels)
        saved.sel_start = np.zeros(len(sels) + 1, dtype=np.int64)
        np.cumsum([len(s) for s in sels], out=saved.sel_start[1:])
        saved.rects_arr = np.asarray(rects, dtype=np.int64)
        _forward_kernel(
            saved.sel_flat, saved.sel_start, saved.rects_arr,
            np.ascontiguousarray(proj.mean2d),
            np.ascontiguousarray(proj.conic[:, 0, 0]),
            np.ascontiguousarray(proj.conic[:, 0, 1]),
            np.ascontiguousarray(proj.conic[:, 1, 1]),
            opacities, scene.colors, scene.background,
            color, transmittance, weight_sum,
        )
        return saved

    t_count = len(rects)
    n = max(len(s) for s in sels)
    p = max((y1 - y0) * (x1 - x0) for y0, x0, y1, x1 in rects)
    sel_pad = np.zeros((t_count, n), dtype=np.int64)
    opac_pad = np.zeros((t_count, n))
    xs_pad = np.zeros((t_count, p))
    ys_pad = np.zeros((t_count, p))
    opacities = 1.0 / (1.0 + np.exp(-scene.opacity_logits))
    for i, ((y0, x0, y1, x1), sel) in enumerate(zip(rects, sels)):
        sel_pad[i, : len(sel)] = sel
        opac_pad[i, : len(sel)] = opacities[sel]
        npix = (y1 - y0) * (x1 - x0)
        gx, gy = np.meshgrid(np.arange(x0, x1, dtype=float),
                             np.arange(y0, y1, dtype=float))
        xs_pad[i, :npix] = gx.ravel()
        ys_pad[i, :npix] = gy.ravel()

    # gaussian axis last keeps cumprod/cumsum contiguous
    dx = xs_pad[:, :, None] - proj.mean2d[sel_pad, 0][:, None, :]
    dy = ys_pad[:, :, None] - proj.mean2d[sel_pad, 1][:, None, :]
    ca = proj.conic[sel_pad, 0, 0][:, None, :]
    cb = proj.conic[sel_pad, 0, 1][:, None, :]
    cc = proj.conic[sel_pad, 1, 1][:, None, :]
    sigma = dx * dx
    sigma *= ca
    tmp = dx * dy
    tmp *= 2.0 * cb
    sigma += tmp
    np.multiply(dy, dy, out=tmp)
    tmp *= cc
    sigma += tmp
    sigma *= 0.5
    inside = sigma <= SIGMA_CUTOFF
    np.negative(sigma, out=tmp)
    alpha = np.exp(tmp, out=tmp)
    alpha *= inside
    alpha *= opac_pad[:, None, :]

    cum = np.cumprod(1.0 - alpha, axis=2)
    t_before = np.empty_like(cum)
    t_before[:, :, 0] = 1.0
    t_before[:, :, 1:] = cum[:, :, :-1]
    contrib = (t_before >= MIN_TRANSMITTANCE) & (alpha > 0.0)
    wmat = alpha * t_before
    wmat *= contrib
    gated = alpha * contrib
    np.subtract(1.0, gated, out=gated)
    t_run = np.prod(gated, axis=2)

    c_sel = scene.colors[sel_pad]  # (T, n, 3)
    c_acc = wmat @ c_sel  # (T, p, 3)
    c_acc += t_run[:, :, None] * scene.background
    w_acc = wmat.sum(axis=2)
    for i, (y0, x0, y1, x1) in enumerate(rects):
        shape = (y1 - y0, x1 - x0)
        npix = shape[0] * shape[1]
        color[y0:y1, x0:x1] = c_acc[i, :npix].reshape(shape + (3,))
        transmittance[y0:y1, x0:x1] = t_run[i, :npix].reshape(shape)
        weight_sum[y0:y1, x0:x1] = w_acc[i, :npix].reshape(shape)

    saved.rects = rects
    saved.sel_pad = sel_pad
    saved.opac_pad = opac_pad
    saved.xs_pad = xs_pad
    saved.ys_pad = ys_pad
    saved.alpha = alpha
    saved.t_before = t_before
    saved.contrib = contrib
    saved.wmat = wmat
    saved.t_run = t_run
    return saved


def render_backward(scene: Scene, saved: SavedRender,
                    loss_adjoint: np.ndarray) -> SceneGradients:
    """Backpropagate an image-space adjoint through a saved forward pass."""
    intr, proj, pose = saved.intr, saved.proj, saved.pose
    h, w = intr.height, intr.width
    adjoint = np.asarray(loss_adjoint, float).reshape(h, w, 3)
    k = len(scene)

    g_color = np.zeros((k, 3))
    g_logit = np.zeros(k)
    g_mean2d = np.zeros((k, 2))
    g_conic = np.zeros((k, 2, 2))

    if saved.sel_flat is not None:
        g_ca = np.zeros(k)
        g_cb = np.zeros(k)
        g_cc = np.zeros(k)
        _backward_kernel(
            saved.sel_flat, saved.sel_start, saved.rects_arr,
            np.ascontiguousarray(proj.mean2d),
            np.ascontiguousarray(proj.conic[:, 0, 0]),
            np.ascontiguousarray(proj.conic[:, 0, 1]),
            np.ascontiguousarray(proj.conic[:, 1, 1]),
            saved.opacities, scene.colors, scene.background,
            np.ascontiguousarray(adjoint),
            g_color, g_logit, g_mean2d, g_ca, g_cb, g_cc,
        )
        g_conic[:, 0, 0] = g_ca
        g_conic[:, 0, 1] = g_cb
        g_conic[:, 1, 0] = g_cb
        g_conic[:, 1, 1] = g_cc
    elif saved.sel_pad is not None:
        sel_pad = saved.sel_pad
        alpha, t_before = saved.alpha, saved.t_before
        contrib, wmat, t_run = saved.contrib, saved.wmat, saved.t_run
        t_count, n = sel_pad.shape
        p = saved.xs_pad.shape[1]
        adj = np.zeros((t_count, p, 3))
        for i, (y0, x0, y1, x1) in enumerate(saved.rects):
            npix = (y1 - y0) * (x1 - x0)
            adj[i, :npix] = adjoint[y0:y1, x0:x1].reshape(-1, 3)

        c_sel = scene.colors[sel_pad]
        # everything reduces through the per-pixel scalar c . adjoint,
        # so no (gaussian, pixel, channel) array is ever built
        c_dot_adj = adj @ c_sel.transpose(0, 2, 1)  # (T, p, n)
        z = wmat * c_dot_adj
        # exclusive reverse cumsum: total minus the inclusive running sum
        np.cumsum(z, axis=2, out=z)
        total = z[:, :, -1].copy()
        behind = np.subtract(total[:, :, None], z, out=z)
        behind += ((adj @ scene.background) * t_run)[:, :, None]
        behind /= np.where(contrib, 1.0 - alpha, 1.0)
        d_alpha = c_dot_adj * t_before
        d_alpha -= behind
        d_alpha *= contrib
        d_times_a = d_alpha * alpha  # == -d_sigma

        dx = saved.xs_pad[:, :, None] - proj.mean2d[sel_pad, 0][:, None, :]
        dy = saved.ys_pad[:, :, None] - proj.mean2d[sel_pad, 1][:, None, :]
        ca = proj.conic[sel_pad, 0, 0][:, None, :]
        cb = proj.conic[sel_pad, 0, 1][:, None, :]
        cc = proj.conic[sel_pad, 1, 1][:, None, :]

        gc = wmat.transpose(0, 2, 1) @ adj  # (T, n, 3)
        gl = d_times_a.sum(axis=1) * (1.0 - saved.opac_pad)
        ax = ca * dx
        ax += cb * dy
        ax *= d_times_a
        gm0 = ax.sum(axis=1)
        ay = cb * dx
        ay += cc * dy
        ay *= d_times_a
        gm1 = ay.sum(axis=1)
        q = dx * dx
        q *= d_times_a
        q11 = -0.5 * q.sum(axis=1)
        np.multiply(dx, dy, out=q)
        q *= d_times_a
        q12 = -0.5 * q.sum(axis=1)
        np.multiply(dy, dy, out=q)
        q *= d_times_a
        q22 = -0.5 * q.sum(axis=1)

        # one gaussian can appear in several tiles; padding rows carry
        # exact zeros, so bincount accumulation is safe
        idx = sel_pad.ravel()

        def scatter(values):
            return np.bincount(idx, weights=values.ravel(), minlength=k)

        for c in range(3):
            g_color[:, c] = scatter(gc[:, :, c])
        g_logit = scatter(gl)
        g_mean2d[:, 0] = scatter(gm0)
        g_mean2d[:, 1] = scatter(gm1)
        g_conic[:, 0, 0] = scatter(q11)
        g_conic[:, 0, 1] = scatter(q12)
        g_conic[:, 1, 0] = g_conic[:, 0, 1]
        g_conic[:, 1, 1] = scatter(q22)

    # ----- chain screen-space gradients to 3D parameters -----
    g_cov2d = -np.einsum("kij,kjl,klm->kim", proj.conic, g_conic, proj.conic)
    j = proj.jacobian
    m = proj.m_world
    h_m = np.einsum("kji,kjl,klm->kim", j, g_cov2d, j)  # dL/dM, symmetric
    d_j = 2.0 * np.einsum("kij,kjl,klm->kim", g_cov2d, j, m)
    w_rot = pose.rotation
    g_sigma3 = np.einsum("ji,kjl,lm->kim", w_rot, h_m, w_rot)  # dL/dCov3D

    rot = _rotations_from_quats(scene.quats)
    s2 = np.exp(2.0 * scene.log_scales)
    g_rot = 2.0 * np.einsum("kij,kjl->kil", g_sigma3, rot) * s2[:, None, :]
    rtgr = np.einsum("kji,kjl,klm->kim", rot, g_sigma3, rot)
    g_log_scale = 2.0 * s2 * np.diagonal(rtgr, axis1=1, axis2=2)
    g_quat = _quat_rotation_grads(scene.quats, g_rot)

    # camera-frame mean gradient: through the projected mean and through J
    f = intr.focal
    t_cam = proj.t_cam
    safe_z = np.where(proj.valid, t_cam[:, 2], 1.0)
    g_t = np.einsum("kji,kj->ki", j, g_mean2d)
    inv_z2 = f / safe_z**2
    g_t[:, 0] += d_j[:, 0, 2] * (-inv_z2)
    g_t[:, 1] += d_j[:, 1, 2] * (-inv_z2)
    g_t[:, 2] += (
        -(d_j[:, 0, 0] + d_j[:, 1, 1]) * inv_z2
        + 2.0 * (d_j[:, 0, 2] * t_cam[:, 0] + d_j[:, 1, 2] * t_cam[:, 1])
        * f / safe_z**3
    )

    invalid = ~proj.valid
    for arr in (g_color, g_logit, g_log_scale):
        arr[invalid] = 0.0
    g_quat[invalid] = 0.0
    g_t[invalid] = 0.0
    h_m[invalid] = 0.0

    g_means = g_t @ w_rot

    # pose twist: translation part is the summed mean gradient; rotation part
    # collects the mean displacement and the rotated-covariance terms
    g_rho = g_t.sum(axis=0)
    g_phi = np.einsum("kij,kj->ki", _skew_batch(t_cam), g_t).sum(axis=0)
    hm_mh = np.einsum("kij,kjl->kil", h_m, m) - np.einsum("kij,kjl->kil", m, h_m)
    g_phi += 2.0 * np.stack(
        [hm_mh[:, 2, 1], hm_mh[:, 0, 2], hm_mh[:, 1, 0]], axis=1
    ).sum(axis=0)

    grads = SceneGradients(
        means=g_means,
        log_scales=g_log_scale,
        quats=g_quat,
        opacity_logits=g_logit,
        colors=g_color,
        pose_twist=np.concatenate([g_rho, g_phi]),
    )
    return grads


def render_with_gradients(scene: Scene, pose: RigidTransform,
                          intr: CameraIntrinsics, loss_adjoint: np.ndarray,
                          tile: int = TILE):
    """Render and backpropagate an image-space adjoint to all parameters.

    Returns (RenderOutput, SceneGradients); the pose gradient is w.r.t. a
    left-perturbation twist eps with pose' = Exp(eps) * pose.
    """
    saved = render_forward(scene, pose, intr, tile)
    return saved.output, render_backward(scene, saved, loss_adjoint)


def _skew_batch(v: np.ndarray) -> np.ndarray:
    k = np.zeros((len(v), 3, 3))
    k[:, 0, 1] = -v[:, 2]
    k[:, 0, 2] = v[:, 1]
    k[:, 1, 0] = v[:, 2]
    k[:, 1, 2] = -v[:, 0]
    k[:, 2, 0] = -v[:, 1]
    k[:, 2, 1] = v[:, 0]
    return k
