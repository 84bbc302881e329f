"""Acceptance suite: one test class per top-level guarantee of the toolkit.

Each class states the property it certifies and the tolerance at which it is
checked; the heavier end-to-end trend check lives at the bottom.
"""

import time

import numpy as np
import pytest

from splatdeblur import alignment as AL
from splatdeblur import sampling as SA
from splatdeblur import splat as SP
from splatdeblur.events import (
    EventBins,
    bin_events,
    edi_decouple,
    simulate_events,
    synthesize_blur,
)
from splatdeblur.geometry import (
    CameraIntrinsics,
    Quaternion,
    RigidTransform,
    Twist,
    latent_pose,
    se3_exp,
    se3_log,
)
from splatdeblur.metrics import ate, psnr, ssim
from splatdeblur.pipeline import evaluate_run, run_training, train_config_from_spec
from splatdeblur.synthetic import SyntheticDatasetSpec, build_synthetic_dataset


class TestEdiIdentity:
    """Decoupling is exact: the mean of the start image and the u latents
    reproduces the input blur for any bins and threshold."""

    def test_hundred_random_triples(self):
        rng = np.random.default_rng(0)
        t0 = time.monotonic()
        worst = 0.0
        for _ in range(100):
            u = int(rng.integers(1, 13))
            h = int(rng.integers(8, 24))
            w = int(rng.integers(8, 24))
            channels = int(rng.choice([0, 3]))
            shape = (h, w) if channels == 0 else (h, w, 3)
            blur = rng.uniform(0.1, 1.0, size=shape)
            counts = rng.integers(-3, 4, size=(u, h, w))
            bins = EventBins(bins=counts, t_start=0.0, t_end=1.0)
            theta = float(rng.uniform(0.05, 0.5))
            i0, latents = edi_decouple(blur, bins, theta)
            mean = synthesize_blur([i0] + latents)
            worst = max(worst, float(np.max(np.abs(mean - blur) / blur)))
        assert worst <= 1e-6
        assert time.monotonic() - t0 < 5.0


class TestEventRoundTrip:
    """Simulated events plus the synthesized blur recover the sharp latents."""

    def make_sequence(self, u=10, h=64, w=64):
        ys, xs = np.mgrid[0:h, 0:w]
        base = 0.25 + 0.1 * (xs + ys) / (h + w)
        frames = []
        for k in range(u + 1):
            f = base.copy()
            x0 = 6 + 3 * k
            f[20:40, x0:x0 + 14] = 1.2
            frames.append(f)
        return frames

    def test_round_trip_accuracy(self):
        t0 = time.monotonic()
        theta, u = 0.27, 10
        frames = self.make_sequence(u)
        stamps = np.linspace(0.0, 40_000.0, u + 1)
        stream = simulate_events(frames, stamps, theta, log_eps=0.0)
        blur = synthesize_blur(frames)
        bins = bin_events(stream, u)
        i0, latents = edi_decouple(blur, bins, theta)

        recovered = np.stack([i0] + latents)
        truth = np.stack(frames)
        rel = np.abs(recovered - truth) / truth
        assert float(np.median(rel)) <= 0.05
        log_err = np.abs(np.log(recovered) - np.log(truth))
        assert float(log_err.max()) <= theta
        assert time.monotonic() - t0 < 10.0


def random_transform(rng, trans=1.0, rot=2.5):
    phi = rng.normal(size=3)
    phi *= rng.uniform(0.0, rot) / np.linalg.norm(phi)
    return se3_exp(Twist(rng.normal(size=3) * trans, phi))


class TestSe3Suite:
    def test_exp_log_round_trip_ten_thousand(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            rho = rng.normal(size=3) * 2.0
            phi = rng.normal(size=3)
            phi *= rng.uniform(0.0, 3.0) / np.linalg.norm(phi)
            xi = Twist(rho, phi)
            back = se3_log(se3_exp(xi))
            assert np.abs(back.rho - xi.rho).max() <= 1e-9
            assert np.abs(back.phi - xi.phi).max() <= 1e-9

    def test_latent_pose_endpoint_identities(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            base = random_transform(rng)
            d1 = random_transform(rng, trans=0.3, rot=1.0)
            du = random_transform(rng, trans=0.3, rot=1.0)
            start = latent_pose(base, d1, du, 0.0)
            end = latent_pose(base, d1, du, 1.0)
            assert np.abs(start.matrix() - (base @ d1).matrix()).max() <= 1e-9
            assert np.abs(end.matrix() - (base @ du).matrix()).max() <= 1e-9

    def test_midpoint_rotation_matches_slerp(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            base = random_transform(rng)
            d1 = random_transform(rng, trans=0.3, rot=1.0)
            du = random_transform(rng, trans=0.3, rot=1.0)
            mid = latent_pose(base, d1, du, 0.5)
            qa = (base @ d1).quaternion()
            qb = (base @ du).quaternion()
            slerped = Quaternion.slerp(qa, qb, 0.5).to_matrix()
            assert np.abs(mid.rotation - slerped).max() <= 1e-6


class TestConfidenceBalancedSampling:
    def test_five_thousand_over_forty_full_strata(self):
        rng = np.random.default_rng(4)
        k = 40_000
        conf = rng.uniform(0.0, 1.0, k)
        cloud = SA.ConfidencePointCloud(rng.normal(size=(k, 3)), conf)
        idx = SA.confidence_balanced_sample(cloud, SA.SamplingPlan(5000, 40, seed=0))
        assert len(idx) == 5000 and len(np.unique(idx)) == 5000
        c_min, c_max = conf.min(), conf.max()
        width = (c_max - c_min) / 40
        strata = np.minimum(((conf[idx] - c_min) / width).astype(int), 39)
        np.testing.assert_array_equal(np.bincount(strata, minlength=40), 125)

    def test_two_to_one_weighted_draw_frequency(self):
        conf = np.concatenate([np.full(10, 0.8), np.full(10, 0.4)])
        cloud = SA.ConfidencePointCloud(
            np.random.default_rng(5).normal(size=(20, 3)), conf
        )
        trials = 10_000
        heavy = 0
        for seed in range(trials):
            idx = SA.confidence_balanced_sample(
                cloud, SA.SamplingPlan(1, 1, seed=seed)
            )
            heavy += int(idx[0] < 10)
        p = 2.0 / 3.0
        sigma = np.sqrt(p * (1 - p) / trials)
        assert abs(heavy / trials - p) <= 3 * sigma


class TestRendererGradients:
    def make_problem(self):
        rng = np.random.default_rng(6)
        k = 70
        scene = SP.Scene(
            means=rng.normal(size=(k, 3)) * 0.6 + [0, 0, 4.0],
            log_scales=rng.normal(size=(k, 3)) * 0.3 - 1.3,
            quats=rng.normal(size=(k, 4)),
            opacity_logits=rng.normal(size=k) * 0.8,
            colors=rng.uniform(0.1, 0.9, size=(k, 3)),
            background=np.array([0.15, 0.1, 0.2]),
        )
        intr = CameraIntrinsics(focal=40.0, width=32, height=32)
        adjoint = rng.normal(size=(32, 32, 3))
        return scene, intr, adjoint, rng

    @staticmethod
    def loss(scene, pose, intr, adjoint):
        out = SP.render_forward(scene, pose, intr).output
        return float((out.color * adjoint).sum())

    def test_thousand_parameter_probes(self):
        scene, intr, adjoint, rng = self.make_problem()
        poses = [RigidTransform(np.eye(3), np.zeros(3))] + [
            random_transform(rng, trans=0.05, rot=0.05) for _ in range(3)
        ]
        # small eps keeps central differences from straddling the exact-zero
        # footprint cutoff, which is a true discontinuity of the renderer
        eps = 1e-6
        results = []

        def record(analytic, fd):
            denom = max(abs(analytic), abs(fd))
            if denom < 1e-9:
                results.append(True)
            else:
                results.append(abs(analytic - fd) / denom <= 1e-3)

        pose = poses[0]
        _, grads = SP.render_with_gradients(scene, pose, intr, adjoint)
        arrays = [
            ("means", grads.means),
            ("log_scales", grads.log_scales),
            ("quats", grads.quats),
            ("opacity_logits", grads.opacity_logits),
            ("colors", grads.colors),
        ]
        for name, grad in arrays:
            ref = getattr(scene, name)
            for flat in range(ref.size):
                idx = np.unravel_index(flat, ref.shape)
                orig = ref[idx]
                ref[idx] = orig + eps
                hi = self.loss(scene, pose, intr, adjoint)
                ref[idx] = orig - eps
                lo = self.loss(scene, pose, intr, adjoint)
                ref[idx] = orig
                record(grad[idx], (hi - lo) / (2 * eps))

        for pose in poses:
            _, grads = SP.render_with_gradients(scene, pose, intr, adjoint)
            for i in range(6):
                step = np.zeros(6)
                step[i] = eps
                hi = self.loss(
                    scene, se3_exp(Twist.from_vector(step)) @ pose, intr, adjoint
                )
                lo = self.loss(
                    scene, se3_exp(Twist.from_vector(-step)) @ pose, intr, adjoint
                )
                record(grads.pose_twist[i], (hi - lo) / (2 * eps))

        assert len(results) >= 1000
        assert np.mean(results) >= 0.99

    def test_alpha_conservation(self):
        scene, intr, _, rng = self.make_problem()
        out = SP.rasterize(scene, RigidTransform(np.eye(3), np.zeros(3)), intr)
        assert np.abs(out.weight_sum + out.transmittance - 1.0).max() <= 1e-6

    def test_tiled_bit_identical_to_naive(self):
        scene, _, _, rng = self.make_problem()
        intr = CameraIntrinsics(focal=40.0, width=33, height=29)
        pose = random_transform(rng, trans=0.05, rot=0.05)
        a = SP.rasterize(scene, pose, intr)
        b = SP.rasterize_naive(scene, pose, intr)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.transmittance, b.transmittance)
        np.testing.assert_array_equal(a.weight_sum, b.weight_sum)


def pinhole_pointmap(rng, focal, width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    depth = rng.uniform(1.0, 5.0, size=(height, width))
    points = np.stack(
        [(xs - width / 2.0) / focal * depth,
         (ys - height / 2.0) / focal * depth,
         depth],
        axis=-1,
    )
    return AL.PointMap(points, rng.uniform(0.5, 2.0, size=(height, width)))


def four_view_graph(rng, n_views=4, h=8, w=8):
    """Complete graph over one ground-truth cloud with known edge scales."""
    gt_maps = [
        rng.uniform(0.5, 3.0, size=(h, w, 3)) + np.array([0, 0, 2.0])
        for _ in range(n_views)
    ]
    confs = [rng.uniform(0.5, 2.0, size=(h, w)) for _ in range(n_views)]
    pairs = [(a, b) for a in range(n_views) for b in range(a + 1, n_views)]
    log_s = rng.normal(scale=0.4, size=len(pairs))
    log_s -= log_s.mean()
    sigmas = np.exp(log_s)
    transforms = [
        se3_exp(Twist(rng.normal(size=3) * 0.2, rng.normal(size=3) * 0.2))
        for _ in pairs
    ]
    transforms[0] = se3_exp(Twist.zero())
    edges = []
    for (a, b), t, s in zip(pairs, transforms, sigmas):
        inv = t.inverse()

        def local(v):
            flat = gt_maps[v].reshape(-1, 3)
            return ((flat @ inv.rotation.T + inv.translation) / s).reshape(h, w, 3)

        edges.append(AL.Edge(a, b, AL.PointMap(local(a), confs[a]),
                             AL.PointMap(local(b), confs[b])))
    return AL.ViewGraph(n_views, edges), sigmas


class TestAlignment:
    def test_noiseless_focal_within_point_one_percent(self):
        rng = np.random.default_rng(7)
        truth = 73.0
        pm = pinhole_pointmap(rng, truth, 24, 20)
        got = AL.estimate_focal_weiszfeld(pm)
        assert abs(got - truth) / truth <= 1e-3

    def test_four_view_scales_and_objective(self):
        rng = np.random.default_rng(8)
        graph, sigmas = four_view_graph(rng)
        sol = AL.global_align(graph, AL.AlignmentConfig(max_iters=1000))
        assert np.abs(sol.edge_scales - sigmas).max() <= 1e-3
        assert abs(np.prod(sol.edge_scales) - 1.0) <= 1e-9
        assert np.all(np.diff(sol.history) <= 1e-12)


class TestEndToEndTrend:
    """Event supervision helps: on the default synthetic scene the
    event-guided run beats the image-only ablation by >= 2 dB on held-out
    sharp latents and at least halves the initial trajectory error."""

    def test_event_term_improves_psnr_and_ate(self):
        t0 = time.monotonic()
        data = build_synthetic_dataset(SyntheticDatasetSpec())

        cfg_ev = train_config_from_spec(data, lambda_e=5e-3)
        result_ev, before = run_training(data, cfg_ev)
        after_ev = evaluate_run(data, result_ev.scene, result_ev.views)

        cfg_img = train_config_from_spec(data, lambda_e=0.0)
        result_img, _ = run_training(data, cfg_img)
        after_img = evaluate_run(data, result_img.scene, result_img.views)

        elapsed = time.monotonic() - t0
        assert after_ev.psnr - after_img.psnr >= 2.0
        assert after_ev.ate_rmse <= 0.5 * before.ate_rmse
        assert elapsed <= 600.0


class TestMetrics:
    def test_uniform_offset_psnr_is_twenty(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(0.0, 0.9, size=(32, 32, 3))
        assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-6

    def test_self_ssim_is_one(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=(24, 24))
        assert abs(ssim(x, x) - 1.0) <= 1e-12

    def test_rigidly_transformed_trajectory_has_zero_ate(self):
        rng = np.random.default_rng(11)
        positions = rng.normal(size=(20, 3))
        move = random_transform(rng)
        moved = positions @ move.rotation.T + move.translation
        assert ate(moved, positions) <= 1e-9
