import numpy as np
import pytest

from splatdeblur import io as dataio
from splatdeblur.events import bin_events, synthesize_blur
from splatdeblur.synthetic import (
    SyntheticDatasetSpec,
    build_synthetic_dataset,
    generate_synthetic_dataset,
    load_synthetic_dataset,
    read_dataset_spec,
    view_dir,
    write_dataset_spec,
)

SMALL = SyntheticDatasetSpec(n_gaussians=40, width=32, height=32, n_views=2,
                             u=4, seed=3)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticDatasetSpec(n_gaussians=0)
        with pytest.raises(ValueError):
            SyntheticDatasetSpec(width=8)
        with pytest.raises(ValueError):
            SyntheticDatasetSpec(n_views=0)

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "dataset.cfg"
        write_dataset_spec(path, SMALL)
        assert read_dataset_spec(path) == SMALL


class TestBuild:
    def test_deterministic_in_memory(self):
        a = build_synthetic_dataset(SMALL)
        b = build_synthetic_dataset(SMALL)
        np.testing.assert_array_equal(a.scene.means, b.scene.means)
        np.testing.assert_array_equal(a.views[1].blur, b.views[1].blur)
        np.testing.assert_array_equal(a.views[0].events.t, b.views[0].events.t)

    def test_blur_is_mean_of_latents(self):
        data = build_synthetic_dataset(SMALL)
        for view in data.views:
            np.testing.assert_array_equal(
                view.blur, synthesize_blur(view.latents)
            )

    def test_u_equals_one_blur_is_the_sharp_frame(self):
        spec = SyntheticDatasetSpec(n_gaussians=20, width=32, height=32,
                                    n_views=1, u=1, seed=4)
        data = build_synthetic_dataset(spec)
        view = data.views[0]
        assert len(view.latents) == 1
        np.testing.assert_array_equal(view.blur,
                                      np.asarray(view.latents[0], float))

    def test_confidences_positive_and_finite(self):
        data = build_synthetic_dataset(SMALL)
        conf = data.cloud.confidence
        assert np.all(conf > 0) and np.all(np.isfinite(conf))
        assert len(data.cloud) == SMALL.n_gaussians

    def test_trajectory_covers_all_latents(self):
        data = build_synthetic_dataset(SMALL)
        assert len(data.trajectory) == SMALL.n_views * SMALL.u

    def test_event_streams_match_binning(self):
        data = build_synthetic_dataset(SMALL)
        for view in data.views:
            bins = bin_events(view.events, SMALL.u)
            assert int(np.abs(bins.bins).sum()) == len(view.events)


class TestOnDisk:
    def test_round_trip(self, tmp_path):
        data = generate_synthetic_dataset(SMALL, tmp_path / "ds")
        back = load_synthetic_dataset(tmp_path / "ds")
        assert back.spec == SMALL
        np.testing.assert_array_equal(back.scene.means,
                                      data.scene.means.astype(np.float32))
        for va, vb in zip(back.views, data.views):
            np.testing.assert_array_equal(va.blur, np.float32(vb.blur))
            np.testing.assert_array_equal(va.events.t, vb.events.t)

    def test_blur_file_is_mean_of_latent_files(self, tmp_path):
        generate_synthetic_dataset(SMALL, tmp_path / "ds")
        for v in range(SMALL.n_views):
            vdir = view_dir(tmp_path / "ds", v)
            latents = [
                dataio.read_pfm(vdir / f"sharp_{k:02d}.pfm").astype(np.float32)
                for k in range(1, SMALL.u + 1)
            ]
            blur = dataio.read_pfm(vdir / "blur.pfm")
            np.testing.assert_array_equal(
                blur, synthesize_blur(latents).astype(np.float32)
            )

    def test_regeneration_is_byte_identical(self, tmp_path):
        generate_synthetic_dataset(SMALL, tmp_path / "a")
        generate_synthetic_dataset(SMALL, tmp_path / "b")
        rel_a = sorted(p.relative_to(tmp_path / "a")
                       for p in (tmp_path / "a").rglob("*") if p.is_file())
        rel_b = sorted(p.relative_to(tmp_path / "b")
                       for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert rel_a == rel_b
        for rel in rel_a:
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()

    def test_gt_trajectory_file(self, tmp_path):
        data = generate_synthetic_dataset(SMALL, tmp_path / "ds")
        traj = dataio.read_tum(tmp_path / "ds" / "gt_trajectory.txt")
        assert len(traj) == len(data.trajectory)
        np.testing.assert_allclose(traj.timestamps, data.trajectory.timestamps,
                                   rtol=1e-8)
