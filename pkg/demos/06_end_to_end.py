"""End-to-end training on a small synthetic scene.

Builds a blurred multi-view dataset with simulated events, decouples the
blur, seeds splats from the confidence cloud, and optimizes scene plus
per-view trajectories — once with the event-alignment term and once
without — then compares the held-out metrics.
"""

import time

from splatdeblur.pipeline import (
    evaluate_run,
    run_training,
    train_config_from_spec,
)
from splatdeblur.synthetic import SyntheticDatasetSpec, build_synthetic_dataset

SPEC = SyntheticDatasetSpec(
    n_gaussians=80,
    width=32,
    height=32,
    n_views=4,
    u=6,
)
ITERS = 600


def run(data, lambda_e):
    cfg = train_config_from_spec(
        data, lambda_e=lambda_e, total_iters=ITERS, warmup_iters=100
    )
    t0 = time.monotonic()
    result, before = run_training(data, cfg)
    after = evaluate_run(data, result.scene, result.views)
    return before, after, time.monotonic() - t0


def main():
    data = build_synthetic_dataset(SPEC)
    print(f"dataset: {SPEC.n_views} blurred views at "
          f"{SPEC.width}x{SPEC.height}, {SPEC.u} latents each, "
          f"{SPEC.n_gaussians} ground-truth splats\n")

    for lambda_e in (5e-3, 0.0):
        before, after, elapsed = run(data, lambda_e)
        tag = "with events" if lambda_e else "  no events"
        print(f"{tag} (lambda_e={lambda_e:g}), {ITERS} iters, "
              f"{elapsed:.0f}s:")
        print(f"  PSNR {before.psnr:6.2f} -> {after.psnr:6.2f} dB   "
              f"SSIM {before.ssim:.4f} -> {after.ssim:.4f}")
        print(f"  ATE  {before.ate_rmse:.5f} -> {after.ate_rmse:.5f} "
              f"(ratio {after.ate_rmse / before.ate_rmse:.2f})\n")

    print("the event term supervises every latent frame individually, so it"
          "\nsharpens the reconstruction and pulls the trajectories toward"
          "\nthe true motion instead of merely matching the blurred average.")


if __name__ == "__main__":
    main()
