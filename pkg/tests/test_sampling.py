import numpy as np
import pytest

from splatdeblur import sampling as S
from splatdeblur.errors import InsufficientPointsInRadius, TargetExceedsCloud


def cloud_of(positions, confidence, colors=None):
    return S.ConfidencePointCloud(
        positions=np.asarray(positions, float),
        confidence=np.asarray(confidence, float),
        colors=colors,
    )


class TestConfidenceBalanced:
    def test_full_scale_allocation(self):
        # 5000 from 40 full strata: exactly 125 each
        rng = np.random.default_rng(0)
        k = 40_000
        conf = rng.uniform(0, 1, k)
        cloud = cloud_of(rng.normal(size=(k, 3)), conf)
        idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(5000, 40, seed=1))
        assert len(idx) == 5000
        assert len(np.unique(idx)) == 5000
        c_min, c_max = conf.min(), conf.max()
        width = (c_max - c_min) / 40
        strata = np.minimum(((conf[idx] - c_min) / width).astype(int), 39)
        counts = np.bincount(strata, minlength=40)
        np.testing.assert_array_equal(counts, 125)

    def test_equal_confidence_single_stratum_is_uniform(self):
        rng = np.random.default_rng(1)
        k = 50
        cloud = cloud_of(rng.normal(size=(k, 3)), np.ones(k))
        hits = np.zeros(k)
        for seed in range(4000):
            idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(5, 1, seed=seed))
            hits[idx] += 1
        freq = hits / 4000
        # every point expected with probability 5/50
        assert np.all(np.abs(freq - 0.1) < 4 * np.sqrt(0.1 * 0.9 / 4000))

    def test_two_bin_split(self):
        cloud = cloud_of(
            np.arange(18).reshape(6, 3), [0.1, 0.1, 0.1, 0.9, 0.9, 0.9]
        )
        idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(4, 2, seed=3))
        low = np.sum(idx < 3)
        assert low == 2 and len(idx) == 4

    def test_deficit_redistribution(self):
        # one stratum nearly empty: its shortfall lands in the other strata
        conf = np.concatenate([np.full(1, 0.05), np.full(99, 0.95)])
        cloud = cloud_of(np.random.default_rng(2).normal(size=(100, 3)), conf)
        idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(50, 2, seed=4))
        assert len(idx) == 50
        assert len(np.unique(idx)) == 50

    def test_proportional_marginals_two_to_one(self):
        # one stratum with weights 2c and c in equal numbers, drawing 1:
        # the heavy points win with frequency 2/3
        conf = np.concatenate([np.full(10, 0.8), np.full(10, 0.4)])
        cloud = cloud_of(np.random.default_rng(3).normal(size=(20, 3)), conf)
        trials = 10_000
        heavy = 0
        for seed in range(trials):
            idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(1, 1, seed=seed))
            heavy += int(idx[0] < 10)
        p = 2.0 / 3.0
        sigma = np.sqrt(p * (1 - p) / trials)
        assert abs(heavy / trials - p) <= 3 * sigma

    def test_determinism(self):
        rng = np.random.default_rng(5)
        cloud = cloud_of(rng.normal(size=(300, 3)), rng.uniform(0.1, 1, 300))
        plan = S.SamplingPlan(100, 10, seed=42)
        a = S.confidence_balanced_sample(cloud, plan)
        b = S.confidence_balanced_sample(cloud, plan)
        np.testing.assert_array_equal(a, b)

    def test_target_exceeds_cloud(self):
        cloud = cloud_of(np.zeros((3, 3)), np.ones(3))
        with pytest.raises(TargetExceedsCloud):
            S.confidence_balanced_sample(cloud, S.SamplingPlan(4, 2))

    def test_nonpositive_confidence_clamped(self):
        cloud = cloud_of(np.zeros((4, 3)), [0.0, -1.0, 0.5, 1.0])
        idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(4, 2, seed=0))
        assert len(idx) == 4


class TestRandomSample:
    def test_full_draw_returns_everything(self):
        cloud = cloud_of(np.zeros((7, 3)), np.ones(7))
        np.testing.assert_array_equal(S.random_sample(cloud, 7, seed=0), np.arange(7))

    def test_empty_draw(self):
        cloud = cloud_of(np.zeros((7, 3)), np.ones(7))
        assert len(S.random_sample(cloud, 0, seed=0)) == 0

    def test_seed_reproducibility(self):
        cloud = cloud_of(np.random.default_rng(6).normal(size=(50, 3)), np.ones(50))
        np.testing.assert_array_equal(
            S.random_sample(cloud, 10, seed=9), S.random_sample(cloud, 10, seed=9)
        )
        assert not np.array_equal(
            S.random_sample(cloud, 10, seed=9), S.random_sample(cloud, 10, seed=10)
        )


def brute_force_fps(points, target, seed_idx):
    chosen = [seed_idx]
    while len(chosen) < target:
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(np.linalg.norm(points[i] - points[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return sorted(chosen)


class TestSpatialSample:
    def test_square_corners(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
        cloud = cloud_of(pts, [0.9, 0.5, 0.5, 0.5])
        idx = S.spatial_sample(cloud, 2)
        assert list(idx) == brute_force_fps(pts, 2, 0)
        # the second pick is the diagonally opposite corner
        assert set(idx) == {0, 2}

    def test_single_point_is_highest_confidence(self):
        rng = np.random.default_rng(7)
        cloud = cloud_of(rng.normal(size=(20, 3)), rng.uniform(size=20))
        idx = S.spatial_sample(cloud, 1)
        assert idx[0] == np.argmax(cloud.confidence)

    def test_collinear_picks_endpoints_and_midpoint(self):
        pts = np.array([[i, 0, 0] for i in range(5)], float)
        cloud = cloud_of(pts, [0.9, 0.1, 0.1, 0.1, 0.1])
        idx = S.spatial_sample(cloud, 3)
        assert set(idx) == {0, 2, 4}
        assert list(idx) == brute_force_fps(pts, 3, 0)

    def test_matches_brute_force_without_binding_quotas(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(30, 3)) * 10
        cloud = cloud_of(pts, rng.uniform(size=30))
        idx = S.spatial_sample(cloud, 6)
        assert list(idx) == brute_force_fps(pts, 6, int(np.argmax(cloud.confidence)))

    def test_voxel_quota_limits_cluster(self):
        rng = np.random.default_rng(9)
        cluster = rng.normal(scale=0.01, size=(90, 3))
        spread = rng.normal(scale=5.0, size=(10, 3)) + 20
        pts = np.vstack([cluster, spread])
        cloud = cloud_of(pts, np.concatenate([np.full(90, 0.9), np.full(10, 0.5)]))
        idx = S.spatial_sample(cloud, 10, voxel=1.0)
        # the tight cluster occupies one voxel: at most ceil(10*90/100) = 9 picks
        assert np.sum(idx < 90) <= 9


class TestCenterSample:
    def test_sphere_shell_all_eligible(self):
        rng = np.random.default_rng(10)
        dirs = rng.normal(size=(20, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = np.vstack([dirs, -dirs]) * 2.5  # antipodal pairs: centroid at 0
        cloud = cloud_of(pts, np.ones(40))
        idx = S.center_sample(cloud, 40, seed=0)
        np.testing.assert_array_equal(idx, np.arange(40))

    def test_far_outlier_excluded(self):
        pts = np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [100, 0, 0]], float
        )
        cloud = cloud_of(pts, np.ones(5))
        # centroid ~ (19.6, 0, 0); the four near-origin points are within the
        # mean distance, the outlier is far beyond it
        idx = S.center_sample(cloud, 4, seed=0)
        assert 4 not in idx

    def test_insufficient_raises(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [10, 0, 0]], float)
        cloud = cloud_of(pts, np.ones(3))
        with pytest.raises(InsufficientPointsInRadius):
            S.center_sample(cloud, 3, seed=0)


class TestCommonContracts:
    @pytest.mark.parametrize("strategy", ["cbs", "random", "spatial", "center"])
    def test_distinct_in_range_exact_count(self, strategy):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(200, 3))
        cloud = cloud_of(pts, rng.uniform(0.1, 1, 200))
        if strategy == "cbs":
            idx = S.confidence_balanced_sample(cloud, S.SamplingPlan(60, 6, seed=1))
        elif strategy == "random":
            idx = S.random_sample(cloud, 60, seed=1)
        elif strategy == "spatial":
            idx = S.spatial_sample(cloud, 60)
        else:
            idx = S.center_sample(cloud, 60, seed=1)
        assert len(idx) == 60
        assert len(np.unique(idx)) == 60
        assert idx.min() >= 0 and idx.max() < 200
