"""Event-based deblurring walkthrough.

A bright square sweeps across the frame during the exposure. We synthesize
the motion-blurred photo, simulate the event stream an event camera would
emit over the same window, and then invert the blur: the events tell us how
each pixel's log intensity moved, so the blurred average can be factored
back into sharp latent frames.
"""

import numpy as np

from splatdeblur.events import (
    bin_events,
    edi_decouple,
    simulate_events,
    synthesize_blur,
)

U = 10
THETA = 0.27
H = W = 64


def moving_square_sequence():
    ys, xs = np.mgrid[0:H, 0:W]
    base = 0.25 + 0.1 * (xs + ys) / (H + W)
    frames = []
    for k in range(U + 1):
        f = base.copy()
        x0 = 6 + 3 * k
        f[20:40, x0:x0 + 14] = 1.2
        frames.append(f)
    return frames


def main():
    frames = moving_square_sequence()
    stamps = np.linspace(0.0, 40_000.0, U + 1)  # microseconds

    print(f"simulating events over a {U + 1}-frame sequence "
          f"(threshold {THETA}) ...")
    stream = simulate_events(frames, stamps, THETA, log_eps=0.0)
    print(f"  {len(stream)} events, "
          f"{(stream.p > 0).sum()} positive / {(stream.p < 0).sum()} negative")

    blur = synthesize_blur(frames)
    print(f"blurred photo: mean {blur.mean():.3f}, "
          f"dynamic range [{blur.min():.3f}, {blur.max():.3f}]")

    bins = bin_events(stream, U)
    i0, latents = edi_decouple(blur, bins, THETA)

    # the decoupling is algebraically exact: averaging the recovered frames
    # reproduces the blurred input
    identity_err = np.abs(synthesize_blur([i0] + latents) - blur).max()
    print(f"identity check |mean(recovered) - blur|: {identity_err:.2e}")

    rel = [float(np.median(np.abs(lat - gt) / gt))
           for lat, gt in zip(latents, frames[1:])]
    print("median per-pixel relative error of each recovered latent:")
    print("  " + "  ".join(f"{e:.3%}" for e in rel))


if __name__ == "__main__":
    main()
