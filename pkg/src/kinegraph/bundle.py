"""Scene bundle disk format: reading, writing, validation.

A bundle directory holds one recorded (or simulated) sequence:

    meta.json          version, n_frames, fps, intrinsics, camera poses
    depth_%06d.bin     per-frame depth, little-endian float32, row-major,
                       meters, 0 = invalid
    masks_%06d.bin     per-frame agent mask, packed bits, row-major
    tracks.json        2D point tracks: positions (T, F, 2) and visibility
    objects.json       object table; point sets live in points_%03d.bin
                       sidecars (little-endian float64, N x 3), masks in
                       packed-bit sidecars
    gt.json            ground truth (simulator bundles only)
    hints.json         optional per-interaction mode hints

All JSON is written canonically: sorted keys, compact separators, floats in
shortest-roundtrip form. Writes go through a temp file plus rename so a
crashed run never leaves a half-written payload behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaVersionError, ShapeError, ValidationError
from .se3 import CameraIntrinsics, RigidTransform
from .tracks import PointTracks2D

BUNDLE_VERSION = 1

DEPTH_PATTERN = "depth_%06d.bin"
MASK_PATTERN = "masks_%06d.bin"
POINTS_PATTERN = "points_%03d.bin"
OBJMASK_PATTERN = "objmask_%03d_%s.bin"


def canonical_dumps(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace, exact float roundtrip."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    atomic_write_bytes(path, (canonical_dumps(obj) + "\n").encode())


def read_json(path: str):
    with open(path, "rb") as handle:
        return json.loads(handle.read())


def write_depth(path: str, depth: np.ndarray) -> None:
    atomic_write_bytes(path, np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: str, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != height * width:
        raise ShapeError(
            f"{os.path.basename(path)} holds {data.size} floats, "
            f"expected {height}x{width}"
        )
    return data.reshape(height, width).astype(float)


def write_mask(path: str, mask: np.ndarray) -> None:
    atomic_write_bytes(path, np.packbits(mask.astype(bool), axis=None).tobytes())


def read_mask(path: str, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype=np.uint8)
    expected = (height * width + 7) // 8
    if data.size != expected:
        raise ShapeError(
            f"{os.path.basename(path)} holds {data.size} bytes, expected {expected}"
        )
    bits = np.unpackbits(data)[: height * width]
    return bits.reshape(height, width).astype(bool)


def write_points(path: str, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"point set must be (N, 3), got {pts.shape}")
    atomic_write_bytes(path, np.ascontiguousarray(pts, dtype="<f8").tobytes())


def read_points(path: str, n_points: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f8")
    if data.size != n_points * 3:
        raise ShapeError(
            f"{os.path.basename(path)} holds {data.size} doubles, "
            f"expected {n_points}x3"
        )
    return data.reshape(n_points, 3)


@dataclass(frozen=True, eq=False)
class BundleObject:
    name: str
    points: np.ndarray  # (N, 3) world, closed state
    mask_closed: np.ndarray  # (H, W) bool
    mask_open: np.ndarray
    closed_frame: int
    open_frame: int


@dataclass(eq=False)
class SceneBundle:
    """In-memory view of a bundle directory."""

    path: str
    n_frames: int
    fps: float
    intrinsics: CameraIntrinsics
    poses: list[RigidTransform]
    tracks2d: PointTracks2D
    objects: list[BundleObject] = field(default_factory=list)
    gt: dict | None = None
    hints: list[dict] | None = None

    def depth(self, frame: int) -> np.ndarray:
        return read_depth(
            os.path.join(self.path, DEPTH_PATTERN % frame),
            self.intrinsics.height,
            self.intrinsics.width,
        )

    def depths(self) -> np.ndarray:
        return np.stack([self.depth(t) for t in range(self.n_frames)])

    def agent_mask(self, frame: int) -> np.ndarray:
        return read_mask(
            os.path.join(self.path, MASK_PATTERN % frame),
            self.intrinsics.height,
            self.intrinsics.width,
        )

    def agent_masks(self) -> np.ndarray:
        return np.stack([self.agent_mask(t) for t in range(self.n_frames)])


def load_bundle(path: str) -> SceneBundle:
    """Read and validate a bundle directory.

    Checks the schema version, that every declared frame's payload exists
    with exactly the declared size, and that track shapes are consistent.
    """
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise ValidationError(f"{path} has no meta.json")
    meta = read_json(meta_path)
    version = meta.get("version")
    if version != BUNDLE_VERSION:
        raise SchemaVersionError(
            f"bundle version {version!r} unsupported (expected {BUNDLE_VERSION})"
        )
    intr = meta["intrinsics"]
    intrinsics = CameraIntrinsics(
        fx=float(intr["fx"]),
        fy=float(intr["fy"]),
        cx=float(intr["cx"]),
        cy=float(intr["cy"]),
        width=int(intr["width"]),
        height=int(intr["height"]),
    )
    n_frames = int(meta["n_frames"])
    poses_raw = meta["poses"]
    if len(poses_raw) != n_frames:
        raise ValidationError(
            f"meta declares {n_frames} frames but {len(poses_raw)} poses"
        )
    poses = [RigidTransform.from_matrix(np.asarray(m, dtype=float)) for m in poses_raw]

    for t in range(n_frames):
        depth_path = os.path.join(path, DEPTH_PATTERN % t)
        if not os.path.exists(depth_path):
            raise ValidationError(f"missing {DEPTH_PATTERN % t}")
        expected = intrinsics.height * intrinsics.width * 4
        actual = os.path.getsize(depth_path)
        if actual != expected:
            raise ShapeError(
                f"{DEPTH_PATTERN % t} is {actual} bytes, expected {expected}"
            )

    tracks_raw = read_json(os.path.join(path, "tracks.json"))
    positions = np.asarray(tracks_raw["positions"], dtype=float)
    visibility = np.asarray(tracks_raw["visibility"], dtype=bool)
    if positions.shape[0] != n_frames:
        raise ValidationError(
            f"tracks span {positions.shape[0]} frames, bundle has {n_frames}"
        )
    tracks2d = PointTracks2D(positions, visibility)

    objects = []
    objects_path = os.path.join(path, "objects.json")
    if os.path.exists(objects_path):
        table = read_json(objects_path)
        for entry in table["objects"]:
            points = read_points(
                os.path.join(path, entry["points"]), int(entry["n_points"])
            )
            mask_closed = read_mask(
                os.path.join(path, entry["mask_closed"]),
                intrinsics.height,
                intrinsics.width,
            )
            mask_open = read_mask(
                os.path.join(path, entry["mask_open"]),
                intrinsics.height,
                intrinsics.width,
            )
            objects.append(
                BundleObject(
                    name=entry["name"],
                    points=points,
                    mask_closed=mask_closed,
                    mask_open=mask_open,
                    closed_frame=int(entry["closed_frame"]),
                    open_frame=int(entry["open_frame"]),
                )
            )

    gt_path = os.path.join(path, "gt.json")
    gt = read_json(gt_path) if os.path.exists(gt_path) else None
    hints_path = os.path.join(path, "hints.json")
    hints = read_json(hints_path)["hints"] if os.path.exists(hints_path) else None

    return SceneBundle(
        path=path,
        n_frames=n_frames,
        fps=float(meta.get("fps", 30.0)),
        intrinsics=intrinsics,
        poses=poses,
        tracks2d=tracks2d,
        objects=objects,
        gt=gt,
        hints=hints,
    )
