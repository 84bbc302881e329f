"""File formats: PFM/PNG images, event streams, PLY clouds and scenes, TUM.

All binary formats are little-endian. Round trips are lossless: PFM at
float32 precision, event files at integer-microsecond timestamps, PLY at
float32, TUM at 9 significant digits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .events import EventStream
from .geometry import Quaternion, RigidTransform
from .sampling import ConfidencePointCloud
from .splat import Scene

EVT_MAGIC = b"EVT1"


# ---------------------------------------------------------------------------
# images


def write_pfm(path, image: np.ndarray) -> None:
    """Write a 1- or 3-channel float image as little-endian PFM."""
    image = np.asarray(image, np.float32)
    if image.ndim == 2:
        header = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
    else:
        raise IoFailure(f"PFM supports HxW or HxWx3 images, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())  # bottom-up rows


def read_pfm(path) -> np.ndarray:
    """Read a PFM image; returns float64 (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind == b"PF":
            channels = 3
        elif kind == b"Pf":
            channels = 1
        else:
            raise IoFailure(f"not a PFM file: {path}")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise IoFailure(f"truncated PFM file: {path}")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    """Write floats in [0, 1] as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image, float), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG into floats in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".png":
        return read_png(path)
    raise IoFailure(f"unsupported image format: {path}")


def save_image(path, image: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, image)
    elif suffix == ".png":
        write_png(path, image)
    else:
        raise IoFailure(f"unsupported image format: {path}")


# ---------------------------------------------------------------------------
# event streams


def write_events_csv(path, stream: EventStream) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,t_us,p\n")
        for x, y, t, p in zip(stream.x, stream.y, stream.t, stream.p):
            fh.write(f"{x},{y},{t:.9g},{p}\n")


def read_events_csv(path, width: int, height: int,
                    t_start: float | None = None,
                    t_end: float | None = None) -> EventStream:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    t = np.asarray(data["t_us"], float)
    return EventStream(
        x=np.asarray(data["x"], np.int32),
        y=np.asarray(data["y"], np.int32),
        t=t,
        p=np.asarray(data["p"], np.int8),
        t_start=float(t[0]) if t_start is None and len(t) else (t_start or 0.0),
        t_end=float(t[-1]) if t_end is None and len(t) else (t_end or 0.0),
        width=width,
        height=height,
    )


def write_events_binary(path, stream: EventStream) -> None:
    """Packed records of u16 x, u16 y, u64 t_us, i8 p after a 16-byte header.

    Timestamps are rounded to integer microseconds.
    """
    n = len(stream.t)
    rec = np.zeros(n, dtype=[("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["t"] = np.round(stream.t).astype(np.uint64)
    rec["p"] = stream.p
    with open(path, "wb") as fh:
        fh.write(EVT_MAGIC)
        fh.write(struct.pack("<HHQ", stream.width, stream.height, n))
        fh.write(rec.tobytes())


def read_events_binary(path, t_start: float | None = None,
                       t_end: float | None = None) -> EventStream:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EVT_MAGIC:
            raise IoFailure(f"bad event-file magic {magic!r} in {path}")
        width, height, n = struct.unpack("<HHQ", fh.read(12))
        rec = np.frombuffer(
            fh.read(n * 13),
            dtype=[("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")],
        )
    if len(rec) != n:
        raise IoFailure(f"truncated event file: {path}")
    t = rec["t"].astype(np.float64)
    if t_start is None:
        t_start = float(t[0]) if n else 0.0
    if t_end is None:
        t_end = float(t[-1]) if n else 0.0
    return EventStream(
        x=rec["x"].astype(np.int32), y=rec["y"].astype(np.int32),
        t=t, p=rec["p"].astype(np.int8),
        t_start=t_start, t_end=t_end, width=width, height=height,
    )


# ---------------------------------------------------------------------------
# PLY


def _write_ply(path, comments, properties, columns) -> None:
    n = len(columns[0])
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        for c in comments:
            fh.write(f"comment {c}\n".encode())
        fh.write(f"element vertex {n}\n".encode())
        for name in properties:
            fh.write(f"property float {name}\n".encode())
        fh.write(b"end_header\n")
        block = np.stack(
            [np.asarray(c, np.float32) for c in columns], axis=1
        )
        fh.write(np.ascontiguousarray(block).tobytes())


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise IoFailure(f"not a PLY file: {path}")
        if b"binary_little_endian" not in fh.readline():
            raise IoFailure(f"only binary little-endian PLY supported: {path}")
        properties, comments, n = [], [], 0
        while True:
            line = fh.readline()
            if not line:
                raise IoFailure(f"unterminated PLY header: {path}")
            if line.startswith(b"comment"):
                comments.append(line[8:].strip().decode())
            elif line.startswith(b"element vertex"):
                n = int(line.split()[2])
            elif line.startswith(b"property"):
                kind, name = line.split()[1:3]
                if kind != b"float":
                    raise IoFailure(f"only float properties supported: {path}")
                properties.append(name.decode())
            elif line.strip() == b"end_header":
                break
        data = np.frombuffer(fh.read(n * 4 * len(properties)), dtype="<f4")
    if data.size != n * len(properties):
        raise IoFailure(f"truncated PLY file: {path}")
    table = data.reshape(n, len(properties)).astype(np.float64)
    return {name: table[:, i] for i, name in enumerate(properties)}, comments


def write_point_cloud_ply(path, cloud: ConfidencePointCloud) -> None:
    colors = cloud.colors
    if colors is None:
        colors = np.zeros((len(cloud), 3))
    _write_ply(
        path, [],
        ["x", "y", "z", "red", "green", "blue", "confidence"],
        [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2],
         colors[:, 0], colors[:, 1], colors[:, 2], cloud.confidence],
    )


def read_point_cloud_ply(path) -> ConfidencePointCloud:
    cols, _ = _read_ply(path)
    try:
        return ConfidencePointCloud(
            positions=np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
            confidence=cols["confidence"],
            colors=np.stack([cols["red"], cols["green"], cols["blue"]], axis=1),
        )
    except KeyError as exc:
        raise IoFailure(f"missing PLY property {exc} in {path}") from exc


SCENE_PROPERTIES = [
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",  # stored as log-scales
    "rot_0", "rot_1", "rot_2", "rot_3",  # quaternion wxyz
    "opacity",  # stored as logit
    "red", "green", "blue",
]


def write_scene_ply(path, scene: Scene) -> None:
    """Serialize a splat scene; scale_* hold log-scales and opacity the logit
    so saved values match the unconstrained training parameters."""
    bg = scene.background
    _write_ply(
        path,
        [f"background {bg[0]:.9g} {bg[1]:.9g} {bg[2]:.9g}"],
        SCENE_PROPERTIES,
        [scene.means[:, 0], scene.means[:, 1], scene.means[:, 2],
         scene.log_scales[:, 0], scene.log_scales[:, 1], scene.log_scales[:, 2],
         scene.quats[:, 0], scene.quats[:, 1], scene.quats[:, 2],
         scene.quats[:, 3], scene.opacity_logits,
         scene.colors[:, 0], scene.colors[:, 1], scene.colors[:, 2]],
    )


def read_scene_ply(path) -> Scene:
    cols, comments = _read_ply(path)
    background = np.zeros(3)
    for c in comments:
        parts = c.split()
        if parts[:1] == ["background"] and len(parts) == 4:
            background = np.array([float(v) for v in parts[1:]])
    try:
        return Scene(
            means=np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
            log_scales=np.stack(
                [cols["scale_0"], cols["scale_1"], cols["scale_2"]], axis=1
            ),
            quats=np.stack(
                [cols["rot_0"], cols["rot_1"], cols["rot_2"], cols["rot_3"]],
                axis=1,
            ),
            opacity_logits=cols["opacity"],
            colors=np.stack([cols["red"], cols["green"], cols["blue"]], axis=1),
            background=background,
        )
    except KeyError as exc:
        raise IoFailure(f"missing PLY property {exc} in {path}") from exc


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Timestamped camera poses; positions are the pose translations."""

    timestamps: np.ndarray  # (N,) seconds
    poses: list  # list of RigidTransform

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, float).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("one timestamp per pose required")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


def write_tum(path, trajectory: Trajectory) -> None:
    """One line per pose: 'timestamp tx ty tz qx qy qz qw'."""
    with open(path, "w") as fh:
        for ts, pose in zip(trajectory.timestamps, trajectory.poses):
            t = pose.translation
            q = pose.quaternion()
            vals = [ts, t[0], t[1], t[2], q.x, q.y, q.z, q.w]
            fh.write(" ".join(f"{v:.9g}" for v in vals) + "\n")


def read_tum(path) -> Trajectory:
    timestamps, poses = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise IoFailure(f"expected 8 fields per TUM line in {path}")
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            timestamps.append(ts)
            poses.append(
                RigidTransform.from_quaternion(
                    Quaternion(qw, qx, qy, qz).normalized(),
                    np.array([tx, ty, tz]),
                )
            )
    return Trajectory(np.array(timestamps), poses)


# ---------------------------------------------------------------------------
# pointmap files


def write_pointmap(prefix, pointmap, pair) -> None:
    """Write a pointmap as a PFM pair plus a sidecar naming the view pair:
    {prefix}.points.pfm, {prefix}.conf.pfm, {prefix}.pair.txt."""
    prefix = str(prefix)
    write_pfm(prefix + ".points.pfm", pointmap.points)
    write_pfm(prefix + ".conf.pfm", pointmap.confidence)
    with open(prefix + ".pair.txt", "w") as fh:
        fh.write(f"{pair[0]} {pair[1]}\n")


def read_pointmap(prefix):
    """Read a pointmap written by write_pointmap; returns (PointMap, pair)."""
    from .alignment import PointMap

    prefix = str(prefix)
    points = read_pfm(prefix + ".points.pfm")
    confidence = read_pfm(prefix + ".conf.pfm")
    with open(prefix + ".pair.txt") as fh:
        parts = fh.read().split()
    if len(parts) != 2:
        raise IoFailure(f"malformed pair sidecar {prefix}.pair.txt")
    return PointMap(points, confidence), (int(parts[0]), int(parts[1]))


def write_scales(path, pairs, scales) -> None:
    """Alignment scales as text lines 'edge_n edge_m sigma'."""
    with open(path, "w") as fh:
        for (n, m), sigma in zip(pairs, scales):
            fh.write(f"{n} {m} {sigma:.9g}\n")


def read_scales(path):
    pairs, scales = [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            n, m, sigma = line.split()
            pairs.append((int(n), int(m)))
            scales.append(float(sigma))
    return pairs, np.array(scales)
