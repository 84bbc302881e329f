"""Seed selection from confidence-weighted point clouds.

Four strategies: confidence-balanced stratified sampling plus the three
baselines it is compared against (random, spatial FPS-in-voxels, center).
All are deterministic for a fixed seed and return distinct indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPointsInRadius, TargetExceedsCloud

# Nonpositive confidences from file inputs are clamped here before weighting.
MIN_CONFIDENCE = 1e-12


@dataclass(frozen=True)
class ConfidencePointCloud:
    positions: np.ndarray  # (K, 3)
    confidence: np.ndarray  # (K,)
    colors: np.ndarray | None = None  # (K, 3) in [0, 1]

    def __post_init__(self):
        object.__setattr__(
            self, "positions", np.asarray(self.positions, float).reshape(-1, 3)
        )
        object.__setattr__(
            self, "confidence", np.asarray(self.confidence, float).reshape(-1)
        )
        if self.colors is not None:
            object.__setattr__(
                self, "colors", np.asarray(self.colors, float).reshape(-1, 3)
            )
        if len(self.positions) < 1:
            raise ValueError("point cloud must hold at least one point")
        if len(self.confidence) != len(self.positions):
            raise ValueError("one confidence per point required")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.confidence).all()):
            raise ValueError("positions and confidences must be finite")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class SamplingPlan:
    target: int  # L, number of seeds to select
    intervals: int = 40  # M, equal-width confidence strata
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.intervals <= self.target:
            raise ValueError("need 1 <= intervals <= target")


def _weighted_draw_without_replacement(rng, weights: np.ndarray, count: int) -> np.ndarray:
    """Exponential-race draw: smallest Exp(1)/w keys win, marginals ~ w."""
    keys = rng.exponential(size=len(weights)) / weights
    return np.argpartition(keys, count - 1)[:count] if count < len(weights) else np.arange(len(weights))


def confidence_balanced_sample(
    cloud: ConfidencePointCloud, plan: SamplingPlan
) -> np.ndarray:
    """Stratified confidence-weighted selection of plan.target distinct indices.

    The confidence range is split into plan.intervals equal-width strata; each
    stratum is asked for an equal share of the target, drawn without
    replacement with probability proportional to confidence. Shortfall from
    thin strata is redistributed to the others proportionally to their
    remaining capacity.
    """
    k = len(cloud)
    ell, m = plan.target, plan.intervals
    if ell > k:
        raise TargetExceedsCloud(f"requested {ell} of {k} points")
    conf = np.maximum(cloud.confidence, MIN_CONFIDENCE)
    c_min, c_max = conf.min(), conf.max()
    width = (c_max - c_min) / m
    if width > 0:
        stratum = np.minimum(((conf - c_min) / width).astype(np.int64), m - 1)
    else:
        stratum = np.zeros(k, dtype=np.int64)
    members = [np.flatnonzero(stratum == i) for i in range(m)]
    capacity = np.array([len(mem) for mem in members])

    # equal share first, then redistribute shortfall by residual capacity
    take = np.minimum(np.full(m, ell // m), capacity)
    leftovers = ell - (ell // m) * m
    if leftovers:
        room = capacity - take
        order = np.argsort(-room, kind="stable")[:leftovers]
        take[order] += room[order] > 0
    deficit = ell - take.sum()
    while deficit > 0:
        room = capacity - take
        open_total = room.sum()
        add = np.floor(deficit * room / open_total).astype(np.int64)
        if add.sum() == 0:
            order = np.argsort(-room, kind="stable")
            for i in order[:deficit]:
                take[i] += 1
            break
        take += np.minimum(add, room)
        deficit = ell - take.sum()

    rng = np.random.default_rng(plan.seed)
    chosen = []
    for mem, n in zip(members, take):
        if n == 0:
            continue
        local = _weighted_draw_without_replacement(rng, conf[mem], int(n))
        chosen.append(mem[local])
    return np.sort(np.concatenate(chosen))


def random_sample(cloud: ConfidencePointCloud, target: int, seed: int = 0) -> np.ndarray:
    """Uniform selection without replacement."""
    if target > len(cloud):
        raise TargetExceedsCloud(f"requested {target} of {len(cloud)} points")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(len(cloud), size=target, replace=False))


def spatial_sample(
    cloud: ConfidencePointCloud, target: int, voxel: float | None = None
) -> np.ndarray:
    """Farthest-point sampling constrained by per-voxel occupancy quotas.

    Seeded at the highest-confidence point; voxels may contribute at most
    ceil(target * occupancy / K) points so dense clusters cannot dominate.
    Default voxel edge is the bounding-box diagonal / 32.
    """
    k = len(cloud)
    if target > k:
        raise TargetExceedsCloud(f"requested {target} of {k} points")
    pos = cloud.positions
    if voxel is None:
        diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
        voxel = diag / 32.0 if diag > 0 else 1.0
    cells = np.floor(pos / voxel).astype(np.int64)
    _, cell_id, counts = np.unique(
        cells, axis=0, return_inverse=True, return_counts=True
    )
    quota = np.ceil(target * counts / k).astype(np.int64)
    used = np.zeros(len(counts), dtype=np.int64)

    selected = np.empty(target, dtype=np.int64)
    seed_idx = int(np.argmax(cloud.confidence))
    selected[0] = seed_idx
    used[cell_id[seed_idx]] += 1
    dist = np.linalg.norm(pos - pos[seed_idx], axis=1)
    dist[seed_idx] = -np.inf
    for i in range(1, target):
        open_cell = used[cell_id] < quota[cell_id]
        masked = np.where(open_cell, dist, -np.inf)
        nxt = int(np.argmax(masked))
        selected[i] = nxt
        used[cell_id[nxt]] += 1
        dist = np.minimum(dist, np.linalg.norm(pos - pos[nxt], axis=1))
        dist[nxt] = -np.inf
    return np.sort(selected)


def center_sample(cloud: ConfidencePointCloud, target: int, seed: int = 0) -> np.ndarray:
    """Uniform selection among points within the mean distance of the
    confidence-weighted centroid."""
    conf = np.maximum(cloud.confidence, MIN_CONFIDENCE)
    center = (cloud.positions * conf[:, None]).sum(axis=0) / conf.sum()
    dist = np.linalg.norm(cloud.positions - center, axis=1)
    radius = dist.mean()
    eligible = np.flatnonzero(dist <= radius * (1.0 + 1e-9))
    if target > len(eligible):
        raise InsufficientPointsInRadius(
            f"requested {target} but only {len(eligible)} points lie within "
            f"radius {radius:.6g}"
        )
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(eligible, size=target, replace=False))
