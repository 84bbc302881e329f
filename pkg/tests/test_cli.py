import numpy as np
import pytest

from splatdeblur import io as dataio
from splatdeblur.alignment import PointMap
from splatdeblur.cli import main
from splatdeblur.geometry import CameraIntrinsics
from splatdeblur.synthetic import SyntheticDatasetSpec, \
    generate_synthetic_dataset


def run(argv):
    return main([str(a) for a in argv])


class TestUsage:
    def test_no_command_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            run([])
        assert exc.value.code != 0

    def test_unknown_command_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code != 0

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            run(["sample", "--target", "5"])
        assert exc.value.code != 0

    def test_pipeline_error_returns_nonzero(self, tmp_path, capsys):
        img = np.random.default_rng(0).uniform(size=(16, 16, 3))
        dataio.write_pfm(tmp_path / "blur.pfm", img)
        # negative theta propagates the module error name on stderr
        code = run(["decouple", "--blur", tmp_path / "blur.pfm",
                    "--events", tmp_path / "missing.bin",
                    "--theta", "-1", "--u", "2",
                    "--out", tmp_path / "out"])
        assert code != 0
        assert "NonPositiveThreshold" in capsys.readouterr().err


class TestSimulateAndDecouple:
    def make_frames(self, tmp_path, n=4):
        rng = np.random.default_rng(1)
        base = rng.uniform(0.2, 0.8, size=(16, 16, 3))
        frames = [base * (1.0 + 0.25 * i) for i in range(n)]
        fdir = tmp_path / "frames"
        fdir.mkdir()
        for i, f in enumerate(frames):
            dataio.write_pfm(fdir / f"frame_{i:02d}.pfm", f)
        return fdir, frames

    def test_simulate_events_writes_file(self, tmp_path, capsys):
        fdir, _ = self.make_frames(tmp_path)
        out = tmp_path / "events.bin"
        assert run(["simulate-events", "--frames", fdir, "--theta", "0.2",
                    "--out", out]) == 0
        stream = dataio.read_events_binary(out)
        assert len(stream) > 0

    def test_decouple_theta_zero_reproduces_input(self, tmp_path):
        rng = np.random.default_rng(2)
        blur = rng.uniform(0.1, 0.9, size=(16, 16, 3)).astype(np.float32)
        dataio.write_pfm(tmp_path / "blur.pfm", blur)
        out = tmp_path / "dec"
        assert run(["decouple", "--blur", tmp_path / "blur.pfm",
                    "--theta", "0", "--u", "3", "--out", out]) == 0
        for name in ("i0.pfm", "latent_01.pfm", "latent_02.pfm",
                     "latent_03.pfm"):
            np.testing.assert_array_equal(
                dataio.read_pfm(out / name).astype(np.float32), blur
            )

    def test_simulate_then_decouple_round_trip(self, tmp_path):
        fdir, frames = self.make_frames(tmp_path)
        events = tmp_path / "events.bin"
        run(["simulate-events", "--frames", fdir, "--theta", "0.1",
             "--exposure-us", "30000", "--out", events])
        blur = np.mean(frames[1:], axis=0)
        dataio.write_pfm(tmp_path / "blur.pfm", blur)
        out = tmp_path / "dec"
        assert run(["decouple", "--blur", tmp_path / "blur.pfm",
                    "--events", events, "--theta", "0.1", "--u", "3",
                    "--out", out]) == 0
        assert (out / "latent_03.pfm").exists()


class TestSample:
    def test_sample_subset(self, tmp_path):
        rng = np.random.default_rng(3)
        from splatdeblur.sampling import ConfidencePointCloud

        cloud = ConfidencePointCloud(
            positions=rng.normal(size=(100, 3)),
            confidence=rng.uniform(0.5, 2.0, 100),
            colors=rng.uniform(size=(100, 3)),
        )
        dataio.write_point_cloud_ply(tmp_path / "in.ply", cloud)
        assert run(["sample", "--points", tmp_path / "in.ply",
                    "--target", "20", "--intervals", "5",
                    "--out", tmp_path / "out.ply", "--seed", "7"]) == 0
        subset = dataio.read_point_cloud_ply(tmp_path / "out.ply")
        assert len(subset) == 20

    def test_target_too_large_fails(self, tmp_path, capsys):
        from splatdeblur.sampling import ConfidencePointCloud

        cloud = ConfidencePointCloud(positions=np.zeros((5, 3)),
                                     confidence=np.ones(5))
        dataio.write_point_cloud_ply(tmp_path / "in.ply", cloud)
        code = run(["sample", "--points", tmp_path / "in.ply",
                    "--target", "50", "--intervals", "2",
                    "--out", tmp_path / "out.ply"])
        assert code != 0
        assert "TargetExceedsCloud" in capsys.readouterr().err


class TestAlign:
    def test_align_consistent_pair(self, tmp_path):
        rng = np.random.default_rng(4)
        h = w = 12
        f = 50.0
        zs = rng.uniform(2.0, 4.0, size=(h, w))
        ys, xs = np.mgrid[0:h, 0:w]
        pts = np.stack([(xs - w / 2) * zs / f, (ys - h / 2) * zs / f, zs],
                       axis=-1)
        conf = np.ones((h, w))
        m0 = PointMap(points=pts, confidence=conf)
        m1 = PointMap(points=pts + np.array([0.1, 0.0, 0.0]),
                      confidence=conf)
        mdir = tmp_path / "maps"
        mdir.mkdir()
        dataio.write_pointmap(mdir / "edge0_0", m0, (0, 1))
        dataio.write_pointmap(mdir / "edge0_1", m1, (0, 1))
        out = tmp_path / "aligned"
        assert run(["align", "--maps", mdir, "--iters", "50",
                    "--out", out]) == 0
        pairs, scales = dataio.read_scales(out / "scales.txt")
        assert pairs == [(0, 1)]
        focal = float((out / "focal.txt").read_text())
        assert focal == pytest.approx(f, rel=1e-3)
        assert (out / "transforms.txt").exists()
        assert (out / "history.csv").read_text().startswith("iter,objective")


class TestEvaluate:
    def test_identical_trajectories_ate_zero(self, tmp_path, capsys):
        text = "0 1 2 3 0 0 0 1\n1 2 2 3 0 0 0 1\n2 3 2 3 0 0 0 1\n"
        (tmp_path / "a.txt").write_text(text)
        (tmp_path / "b.txt").write_text(text)
        assert run(["evaluate", "--traj", tmp_path / "a.txt",
                    "--ref", tmp_path / "b.txt"]) == 0
        out = capsys.readouterr().out
        assert "ATE RMSE" in out
        value = float(out.split()[-1])
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_image_metrics(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        img = rng.uniform(size=(16, 16, 3))
        dataio.write_pfm(tmp_path / "a.pfm", img)
        dataio.write_pfm(tmp_path / "b.pfm", img)
        assert run(["evaluate", "--image", tmp_path / "a.pfm",
                    "--ref-image", tmp_path / "b.pfm",
                    "--out", tmp_path / "m.csv"]) == 0
        csv = (tmp_path / "m.csv").read_text()
        assert csv.startswith("psnr_db,ssim,ate_rmse,lpips")
        assert "SSIM" in capsys.readouterr().out

    def test_missing_inputs_fail(self, capsys):
        assert run(["evaluate"]) != 0


class TestTrainAndE2e:
    def test_train_on_small_dataset(self, tmp_path, capsys):
        spec = SyntheticDatasetSpec(n_gaussians=25, width=24, height=24,
                                    n_views=2, u=2, seed=6)
        generate_synthetic_dataset(spec, tmp_path / "ds")
        assert run(["train", "--data", tmp_path / "ds",
                    "--out", tmp_path / "run",
                    "--iters", "5", "--warmup", "2"]) == 0
        assert (tmp_path / "run" / "trained_scene.ply").exists()
        log = (tmp_path / "run" / "training_log.csv").read_text()
        assert log.splitlines()[0] == "iter,l_b,l_e,total"
        assert len(log.splitlines()) == 6
        traj = dataio.read_tum(tmp_path / "run" / "trajectory.txt")
        assert len(traj) == spec.n_views * spec.u

    def test_e2e_smoke(self, tmp_path, capsys):
        assert run(["e2e", "--out", tmp_path / "ws",
                    "--gaussians", "25", "--width", "24", "--height", "24",
                    "--views", "2", "--u", "2",
                    "--iters", "5", "--warmup", "2"]) == 0
        csv = (tmp_path / "ws" / "metrics.csv").read_text()
        assert csv.startswith("psnr_db,ssim,ate_rmse,lpips")
        out = capsys.readouterr().out
        assert "PSNR" in out and "ATE" in out

    def test_e2e_deterministic_given_seed(self, tmp_path):
        args = ["e2e", "--gaussians", "20", "--width", "24", "--height", "24",
                "--views", "2", "--u", "2", "--iters", "3", "--warmup", "1",
                "--seed", "9"]
        run(args + ["--out", tmp_path / "a"])
        run(args + ["--out", tmp_path / "b"])
        assert (tmp_path / "a" / "metrics.csv").read_text() == \
            (tmp_path / "b" / "metrics.csv").read_text()
        assert (tmp_path / "a" / "run" / "trained_scene.ply").read_bytes() == \
            (tmp_path / "b" / "run" / "trained_scene.ply").read_bytes()
