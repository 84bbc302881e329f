"""Confidence-balanced sampling compared against its baselines.

Reconstruction seeds should cover the confidence spectrum of a point cloud,
not just its most confident mode. We build a cloud whose confidence
histogram is heavily skewed, then compare which strata each strategy picks
its seeds from.
"""

import numpy as np

from splatdeblur.sampling import (
    ConfidencePointCloud,
    SamplingPlan,
    center_sample,
    confidence_balanced_sample,
    random_sample,
    spatial_sample,
)

K = 20_000
TARGET = 1000
M = 10


def skewed_cloud(rng):
    # 90% of the mass sits in the top fifth of the confidence range
    conf = np.where(
        rng.uniform(size=K) < 0.9,
        rng.uniform(0.8, 1.0, size=K),
        rng.uniform(0.0, 0.8, size=K),
    )
    return ConfidencePointCloud(rng.normal(size=(K, 3)), conf)


def stratum_histogram(cloud, idx):
    conf = cloud.confidence
    width = (conf.max() - conf.min()) / M
    strata = np.minimum(((conf[idx] - conf.min()) / width).astype(int), M - 1)
    return np.bincount(strata, minlength=M)


def main():
    rng = np.random.default_rng(0)
    cloud = skewed_cloud(rng)

    picks = {
        "balanced": confidence_balanced_sample(
            cloud, SamplingPlan(TARGET, M, seed=1)
        ),
        "random": random_sample(cloud, TARGET, seed=1),
        "spatial": spatial_sample(cloud, TARGET),
        "center": center_sample(cloud, TARGET),
    }

    print(f"{TARGET} seeds from a {K}-point cloud, "
          f"{M} equal-width confidence strata\n")
    print(f"{'strategy':>10}  " + " ".join(f"s{i:<4d}" for i in range(M)))
    for name, idx in picks.items():
        counts = stratum_histogram(cloud, idx)
        print(f"{name:>10}  " + " ".join(f"{c:<5d}" for c in counts))

    print("\nbalanced sampling fills every stratum evenly (100 each) while the"
          "\nbaselines inherit the skew of the underlying confidence histogram.")


if __name__ == "__main__":
    main()
