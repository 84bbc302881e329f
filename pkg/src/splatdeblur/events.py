"""Event-stream simulation, temporal binning, and event-based blur decoupling.

Images are plain numpy arrays: (H, W) grayscale or (H, W, 3) color, linear
intensity, float64. Event timestamps are microseconds (float, so interpolated
crossing times keep sub-microsecond resolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySequence, NonPositiveThreshold

# Added to intensities before taking logs; the threshold model is undefined at 0.
DEFAULT_LOG_EPS = 1e-3

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse a color image to a single luma channel; grayscale passes through."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA_WEIGHTS
    raise DimensionMismatch(f"expected (H,W) or (H,W,3) image, got {img.shape}")


@dataclass(frozen=True)
class EventStream:
    """Time-sorted polarity events over a fixed sensor and exposure window."""

    x: np.ndarray  # int32 column indices
    y: np.ndarray  # int32 row indices
    t: np.ndarray  # float64 microseconds, nondecreasing
    p: np.ndarray  # int8 polarity, +1 or -1
    t_start: float
    t_end: float
    width: int
    height: int

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DimensionMismatch("event field lengths differ")
        if n and (np.any(np.diff(self.t) < 0)):
            raise ValueError("event timestamps must be nondecreasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def exposure(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class EventBins:
    """u per-pixel polarity-summed rasters over an even split of the exposure."""

    bins: np.ndarray  # (u, H, W) signed integer counts
    t_start: float
    t_end: float

    @property
    def u(self) -> int:
        return self.bins.shape[0]

    def boundaries(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.u + 1)


def simulate_events(
    sharp_frames,
    timestamps,
    threshold: float,
    log_eps: float = DEFAULT_LOG_EPS,
) -> EventStream:
    """Integrate-and-fire event simulation from a sharp frame sequence.

    Each pixel keeps a reference log-intensity; every full +-threshold crossing
    between consecutive frames emits one event with a linearly interpolated
    timestamp, and the reference advances by threshold per event. The residual
    carries across frame pairs.
    """
    if threshold <= 0:
        raise NonPositiveThreshold(f"threshold must be > 0, got {threshold}")
    frames = [luminance(f) for f in sharp_frames]
    if len(frames) < 2:
        raise DimensionMismatch("need at least two frames")
    shape = frames[0].shape
    for f in frames[1:]:
        if f.shape != shape:
            raise DimensionMismatch("frames must share dimensions")
    timestamps = np.asarray(timestamps, dtype=float)
    if len(timestamps) != len(frames):
        raise DimensionMismatch("one timestamp per frame required")

    h, w = shape
    ref = np.log(frames[0] + log_eps)
    xs, ys, ts, ps = [], [], [], []
    for idx in range(1, len(frames)):
        cur = np.log(frames[idx] + log_eps)
        diff = cur - ref
        n = np.floor(np.abs(diff) / threshold).astype(np.int64)
        total = int(n.sum())
        if total:
            flat_n = n.ravel()
            pix = np.repeat(np.arange(h * w), flat_n)
            # crossing index 1..n within each pixel
            start = np.cumsum(flat_n) - flat_n
            j = np.arange(total) - np.repeat(start, flat_n) + 1
            sign = np.sign(diff).ravel()[pix]
            frac = j * threshold / np.abs(diff).ravel()[pix]
            t0, t1 = timestamps[idx - 1], timestamps[idx]
            ts.append(t0 + frac * (t1 - t0))
            xs.append((pix % w).astype(np.int32))
            ys.append((pix // w).astype(np.int32))
            ps.append(sign.astype(np.int8))
        ref = ref + np.sign(diff) * n * threshold

    if xs:
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        t = np.concatenate(ts)
        p = np.concatenate(ps)
        order = np.lexsort((p, x, y, t))
        x, y, t, p = x[order], y[order], t[order], p[order]
    else:
        x = np.empty(0, np.int32)
        y = np.empty(0, np.int32)
        t = np.empty(0, np.float64)
        p = np.empty(0, np.int8)
    return EventStream(
        x=x, y=y, t=t, p=p,
        t_start=float(timestamps[0]), t_end=float(timestamps[-1]),
        width=w, height=h,
    )


def bin_events(stream: EventStream, u: int) -> EventBins:
    """Split the exposure into u equal bins; event at tau in (t_{k-1}, t_k] goes to bin k."""
    if u < 1:
        raise ValueError("u must be >= 1")
    bins = np.zeros((u, stream.height, stream.width), dtype=np.int64)
    if len(stream):
        exposure = stream.exposure
        frac = (stream.t - stream.t_start) / exposure
        k = np.ceil(frac * u).astype(np.int64)
        k = np.clip(k, 1, u) - 1
        np.add.at(bins, (k, stream.y, stream.x), stream.p)
    return EventBins(bins=bins, t_start=stream.t_start, t_end=stream.t_end)


def edi_decouple(
    blur: np.ndarray, bins: EventBins, threshold: float, u: int | None = None
):
    """Recover the start-of-exposure image and u latent sharp images from a blur.

    Per pixel the latent at bin k is the start image scaled by
    exp(threshold * cumulative polarity sum up to k); the start image follows
    from the blur being the average of the u+1 latents.
    """
    if threshold <= 0:
        raise NonPositiveThreshold(f"threshold must be > 0, got {threshold}")
    blur = np.asarray(blur, dtype=float)
    if u is None:
        u = bins.u
    if u != bins.u:
        raise DimensionMismatch(f"u={u} but bins hold {bins.u}")
    if blur.shape[:2] != bins.bins.shape[1:]:
        raise DimensionMismatch(
            f"blur {blur.shape[:2]} vs bins {bins.bins.shape[1:]}"
        )
    cum = np.cumsum(bins.bins, axis=0)
    weights = np.exp(threshold * cum)  # (u, H, W)
    denom = 1.0 + weights.sum(axis=0)
    if blur.ndim == 3:
        # events encode luminance; the scalar weight field applies per channel
        denom = denom[..., None]
        weights = weights[..., None]
    i0 = (u + 1) * blur / denom
    latents = [i0 * weights[k] for k in range(u)]
    return i0, latents


def synthesize_blur(latents) -> np.ndarray:
    """Arithmetic per-pixel mean of a latent image sequence."""
    if len(latents) == 0:
        raise EmptySequence("need at least one latent image")
    first = np.asarray(latents[0], dtype=float)
    acc = first.copy()
    for img in latents[1:]:
        img = np.asarray(img, dtype=float)
        if img.shape != first.shape:
            raise DimensionMismatch("latent images must share dimensions")
        acc += img
    return acc / len(latents)
