"""Image and trajectory evaluation: PSNR, SSIM, D-SSIM helper, and ATE."""

from __future__ import annotations

import io as _io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionMismatch, ImageTooSmall, LengthMismatch

PSNR_REPORT_CAP = 100.0  # dB reported for identical images

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf for identical images."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _conv_window(img: np.ndarray, kernel: np.ndarray, mode: str) -> np.ndarray:
    """Separable convolution with the outer-product window of `kernel`."""
    tmp = convolve2d(img, kernel[:, None], mode=mode)
    return convolve2d(tmp, kernel[None, :], mode=mode)


def _ssim_single(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    kernel = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _conv_window(a, kernel, "valid")
    mu_b = _conv_window(b, kernel, "valid")
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = _conv_window(a * a, kernel, "valid") - mu_aa
    var_b = _conv_window(b * b, kernel, "valid") - mu_bb
    cov = _conv_window(a * b, kernel, "valid") - mu_ab
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5), mean over valid windows.

    Color images are scored per channel and averaged.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ImageTooSmall(f"need at least {SSIM_WINDOW} px per side, got {a.shape[:2]}")
    if a.ndim == 2:
        return _ssim_single(a, b, peak)
    if a.ndim == 3:
        return float(
            np.mean([_ssim_single(a[..., c], b[..., c], peak) for c in range(a.shape[2])])
        )
    raise DimensionMismatch(f"expected 2D or 3D image, got {a.shape}")


def d_ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Structural dissimilarity (1 - SSIM) / 2."""
    return (1.0 - ssim(a, b, peak)) / 2.0


def umeyama_alignment(
    source: np.ndarray, target: np.ndarray, with_scale: bool = True
):
    """Similarity transform (s, R, t) minimizing ||target - (s R source + t)||^2."""
    source = np.asarray(source, float)
    target = np.asarray(target, float)
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    cov = xt.T @ xs / len(source)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    if with_scale:
        var_s = (xs**2).sum() / len(source)
        scale = float(np.trace(np.diag(d) @ s) / var_s) if var_s > 0 else 1.0
    else:
        scale = 1.0
    trans = mu_t - scale * rot @ mu_s
    return scale, rot, trans


def _positions(trajectory) -> np.ndarray:
    if hasattr(trajectory, "positions"):
        return np.asarray(trajectory.positions, float)
    arr = np.asarray(trajectory, float)
    if arr.ndim == 2 and arr.shape[1] == 3:
        return arr
    raise DimensionMismatch("trajectory must be (N,3) positions or have .positions")


def ate(estimated, reference, align: bool = True) -> float:
    """RMSE over translation residuals after optional similarity alignment."""
    est = _positions(estimated)
    ref = _positions(reference)
    if len(est) != len(ref):
        raise LengthMismatch(f"{len(est)} vs {len(ref)} poses")
    if len(est) < 2:
        raise LengthMismatch("need at least two poses")
    if align:
        scale, rot, trans = umeyama_alignment(est, ref, with_scale=True)
        est = (scale * (rot @ est.T)).T + trans
    residuals = est - ref
    return float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    ate_rmse: float | None = None

    @property
    def psnr_capped(self) -> float:
        return min(self.psnr, PSNR_REPORT_CAP)

    def to_csv(self) -> str:
        ate_field = "" if self.ate_rmse is None else f"{self.ate_rmse:.9g}"
        return (
            "psnr_db,ssim,ate_rmse,lpips\n"
            f"{self.psnr_capped:.9g},{self.ssim:.9g},{ate_field},unavailable\n"
        )

    def table(self) -> str:
        buf = _io.StringIO()
        buf.write(f"{'PSNR (dB)':>12}  {self.psnr_capped:8.4f}\n")
        buf.write(f"{'SSIM':>12}  {self.ssim:8.4f}\n")
        if self.ate_rmse is not None:
            buf.write(f"{'ATE RMSE':>12}  {self.ate_rmse:8.6f}\n")
        buf.write(f"{'LPIPS':>12}  {'unavailable':>11}\n")
        return buf.getvalue()


def _ssim_single_with_grad(a: np.ndarray, b: np.ndarray, peak: float):
    """SSIM and its gradient with respect to `a` for one channel.

    The chain runs through the three window convolutions (mean, raw second
    moment, raw cross moment); with a symmetric kernel the transpose of a
    valid convolution is a full convolution with the same kernel.
    """
    kernel = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _conv_window(a, kernel, "valid")
    mu_b = _conv_window(b, kernel, "valid")
    var_a = _conv_window(a * a, kernel, "valid") - mu_a * mu_a
    var_b = _conv_window(b * b, kernel, "valid") - mu_b * mu_b
    cov = _conv_window(a * b, kernel, "valid") - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + c1
    a2 = 2 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    d = b1 * b2
    s = a1 * a2 / d
    value = float(np.mean(s))

    n = s.size
    # per-window partials, scaled by the final mean
    g_mu = (2 * mu_b * a2 / d - 2 * mu_a * s / b1
            + 2 * mu_a * s / b2 - 2 * mu_b * a1 / d) / n
    g_sq = (-s / b2) / n  # via the raw second moment of a
    g_cross = (2 * a1 / d) / n  # via the raw cross moment
    grad = (
        _conv_window(g_mu, kernel, "full")
        + 2 * a * _conv_window(g_sq, kernel, "full")
        + b * _conv_window(g_cross, kernel, "full")
    )
    return value, grad


def ssim_with_gradient(a: np.ndarray, b: np.ndarray, peak: float = 1.0):
    """As ssim(), but also returns d ssim / d a (same shape as a)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ImageTooSmall(f"need at least {SSIM_WINDOW} px per side, got {a.shape[:2]}")
    if a.ndim == 2:
        return _ssim_single_with_grad(a, b, peak)
    values = []
    grad = np.empty_like(a)
    for c in range(a.shape[2]):
        v, g = _ssim_single_with_grad(a[..., c], b[..., c], peak)
        values.append(v)
        grad[..., c] = g / a.shape[2]
    return float(np.mean(values)), grad
