import numpy as np
import pytest

from splatdeblur import io as IO
from splatdeblur.errors import IoFailure
from splatdeblur.events import EventStream
from splatdeblur.geometry import Quaternion, RigidTransform, Twist, se3_exp
from splatdeblur.sampling import ConfidencePointCloud
from splatdeblur.splat import Scene


def random_stream(rng, n=200, width=64, height=48):
    t = np.sort(rng.integers(0, 1_000_000, size=n)).astype(float)
    return EventStream(
        x=rng.integers(0, width, size=n).astype(np.int32),
        y=rng.integers(0, height, size=n).astype(np.int32),
        t=t,
        p=rng.choice([-1, 1], size=n).astype(np.int8),
        t_start=float(t[0]),
        t_end=float(t[-1]),
        width=width,
        height=height,
    )


class TestPfm:
    def test_grayscale_round_trip(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(13, 17)).astype(np.float32)
        path = tmp_path / "img.pfm"
        IO.write_pfm(path, img)
        np.testing.assert_array_equal(IO.read_pfm(path), img.astype(np.float64))

    def test_color_round_trip(self, tmp_path):
        img = np.random.default_rng(1).normal(size=(8, 6, 3)).astype(np.float32)
        path = tmp_path / "img.pfm"
        IO.write_pfm(path, img)
        np.testing.assert_array_equal(IO.read_pfm(path), img.astype(np.float64))

    def test_rejects_bad_shape(self, tmp_path):
        with pytest.raises(IoFailure):
            IO.write_pfm(tmp_path / "x.pfm", np.zeros((4, 4, 2)))

    def test_rejects_non_pfm(self, tmp_path):
        path = tmp_path / "junk.pfm"
        path.write_bytes(b"hello world")
        with pytest.raises(IoFailure):
            IO.read_pfm(path)


class TestPng:
    def test_round_trip_is_quantized_identity(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(10, 12, 3))
        path = tmp_path / "img.png"
        IO.write_png(path, img)
        back = IO.read_png(path)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_eight_bit_values_exact(self, tmp_path):
        img = (np.arange(256).reshape(16, 16) / 255.0)
        img = np.stack([img] * 3, axis=-1)
        path = tmp_path / "ramp.png"
        IO.write_png(path, img)
        np.testing.assert_allclose(IO.read_png(path), img, atol=1e-12)

    def test_dispatch_by_extension(self, tmp_path):
        img = np.random.default_rng(3).uniform(size=(8, 8, 3))
        IO.save_image(tmp_path / "a.pfm", img)
        IO.save_image(tmp_path / "a.png", img)
        assert IO.load_image(tmp_path / "a.pfm").shape == (8, 8, 3)
        with pytest.raises(IoFailure):
            IO.save_image(tmp_path / "a.jpg", img)


class TestEventFiles:
    def test_binary_round_trip(self, tmp_path):
        stream = random_stream(np.random.default_rng(4))
        path = tmp_path / "events.bin"
        IO.write_events_binary(path, stream)
        back = IO.read_events_binary(path, t_start=stream.t_start,
                                     t_end=stream.t_end)
        np.testing.assert_array_equal(back.x, stream.x)
        np.testing.assert_array_equal(back.y, stream.y)
        np.testing.assert_array_equal(back.t, stream.t)
        np.testing.assert_array_equal(back.p, stream.p)
        assert (back.width, back.height) == (stream.width, stream.height)

    def test_binary_save_load_save_byte_identical(self, tmp_path):
        stream = random_stream(np.random.default_rng(5))
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        IO.write_events_binary(a, stream)
        IO.write_events_binary(b, IO.read_events_binary(a))
        assert a.read_bytes() == b.read_bytes()

    def test_csv_round_trip(self, tmp_path):
        stream = random_stream(np.random.default_rng(6), n=50)
        path = tmp_path / "events.csv"
        IO.write_events_csv(path, stream)
        assert path.read_text().splitlines()[0] == "x,y,t_us,p"
        back = IO.read_events_csv(path, stream.width, stream.height)
        np.testing.assert_array_equal(back.x, stream.x)
        np.testing.assert_array_equal(back.t, stream.t)
        np.testing.assert_array_equal(back.p, stream.p)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(IoFailure):
            IO.read_events_binary(path)


class TestPly:
    def test_point_cloud_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        cloud = ConfidencePointCloud(
            positions=rng.normal(size=(40, 3)).astype(np.float32),
            confidence=rng.uniform(0.1, 1, size=40).astype(np.float32),
            colors=rng.uniform(size=(40, 3)).astype(np.float32),
        )
        path = tmp_path / "cloud.ply"
        IO.write_point_cloud_ply(path, cloud)
        back = IO.read_point_cloud_ply(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.confidence, cloud.confidence)
        np.testing.assert_array_equal(back.colors, cloud.colors)

    def test_scene_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        k = 25
        scene = Scene(
            means=rng.normal(size=(k, 3)).astype(np.float32),
            log_scales=rng.normal(size=(k, 3)).astype(np.float32),
            quats=rng.normal(size=(k, 4)).astype(np.float32),
            opacity_logits=rng.normal(size=k).astype(np.float32),
            colors=rng.uniform(size=(k, 3)).astype(np.float32),
            background=np.array([0.25, 0.5, 0.75]),
        )
        path = tmp_path / "scene.ply"
        IO.write_scene_ply(path, scene)
        back = IO.read_scene_ply(path)
        np.testing.assert_array_equal(back.means, scene.means)
        np.testing.assert_array_equal(back.log_scales, scene.log_scales)
        np.testing.assert_array_equal(back.quats, scene.quats)
        np.testing.assert_array_equal(back.opacity_logits, scene.opacity_logits)
        np.testing.assert_array_equal(back.colors, scene.colors)
        np.testing.assert_allclose(back.background, scene.background)

    def test_missing_property_raises(self, tmp_path):
        path = tmp_path / "bare.ply"
        IO._write_ply(path, [], ["x", "y", "z"],
                      [np.zeros(3), np.zeros(3), np.zeros(3)])
        with pytest.raises(IoFailure):
            IO.read_point_cloud_ply(path)


class TestTum:
    def random_trajectory(self, rng, n=10):
        poses = [
            se3_exp(Twist(rng.normal(size=3), rng.normal(size=3) * 0.5))
            for _ in range(n)
        ]
        return IO.Trajectory(np.arange(n, dtype=float) * 0.1, poses)

    def test_round_trip_to_print_precision(self, tmp_path):
        traj = self.random_trajectory(np.random.default_rng(9))
        path = tmp_path / "traj.txt"
        IO.write_tum(path, traj)
        back = IO.read_tum(path)
        assert len(back) == len(traj)
        np.testing.assert_allclose(back.timestamps, traj.timestamps, rtol=1e-8)
        for a, b in zip(back.poses, traj.poses):
            np.testing.assert_allclose(a.translation, b.translation, atol=1e-7)
            np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-7)

    def test_save_load_save_byte_identical(self, tmp_path):
        traj = self.random_trajectory(np.random.default_rng(10))
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        IO.write_tum(a, traj)
        IO.write_tum(b, IO.read_tum(a))
        assert a.read_bytes() == b.read_bytes()

    def test_line_format(self, tmp_path):
        pose = RigidTransform.from_quaternion(
            Quaternion.identity(), np.array([1.0, 2.0, 3.0])
        )
        path = tmp_path / "one.txt"
        IO.write_tum(path, IO.Trajectory([0.5], [pose]))
        assert path.read_text() == "0.5 1 2 3 0 0 0 1\n"

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# header\n\n0 1 2 3 0 0 0 1\n")
        assert len(IO.read_tum(path)) == 1

    def test_malformed_line_raises(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 1 2 3\n")
        with pytest.raises(IoFailure):
            IO.read_tum(path)
