"""Synthetic articulated-scene generator.

Scenes are unions of axis-aligned-in-their-own-frame boxes: some belong to
objects (which may move along a screw joint or ride a moving parent), the
rest is static background. A pinhole camera renders per-frame depth by
ray-box intersection; ray directions keep camera z = 1 so the slab parameter
is the depth directly. Ground-truth point tracks are sampled on box surfaces
(area-weighted) and carried through the joint motion, then corrupted in a
fixed order: per-track 3D drift random walk, isotropic per-component 3D
noise, projection, pixel noise, and visibility (image bounds, occlusion
against the rendered depth, dropout).

Everything is driven by numpy SeedSequence streams keyed on (seed, purpose,
index), so a spec renders byte-identically across runs and platforms.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import bundle as bundle_io
from .errors import ValidationError
from .estimator import max_open_frame
from .se3 import (
    CameraIntrinsics,
    JointKind,
    RigidTransform,
    ScrewAxis,
    Twist,
    exp_map,
    rodrigues,
    twist_from_axis,
)
from .tracks import PointTracks2D, PointTracks3D

# Occlusion slack when testing a surface point against the rendered depth at
# its nearest pixel: neighboring pixels on a slanted face can legitimately
# differ by a few millimeters.
OCCLUSION_TOL = 5e-3

# RNG stream tags; fixed forever so bundles stay reproducible.
_TAG_OBJECT_TRACKS = 3
_TAG_STATIC_TRACKS = 4
_TAG_DROPOUT = 5
_TAG_DRIFT = 6
_TAG_NOISE_3D = 7
_TAG_NOISE_PIXEL = 8
_TAG_NOISE_DEPTH = 9


@dataclass(frozen=True, eq=False)
class BoxGeom:
    """Axis-aligned box in its own frame, placed by a rigid pose."""

    half_extents: np.ndarray
    pose: RigidTransform

    def __post_init__(self):
        half = np.asarray(self.half_extents, dtype=float)
        if half.shape != (3,) or np.any(half <= 0):
            raise ValidationError(f"half_extents must be 3 positive values, got {half}")
        object.__setattr__(self, "half_extents", half)

    @property
    def surface_areas(self) -> np.ndarray:
        hx, hy, hz = self.half_extents
        return 4.0 * np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])


@dataclass(frozen=True, eq=False)
class NoiseModel:
    pixel_sigma: float = 0.0  # px, on 2D track positions
    depth_sigma: float = 0.0  # m, on depth maps and on 3D track samples
    drift: float = 0.0  # m per frame, random-walk step std per track
    dropout: float = 0.0  # per-sample visibility loss probability

    def __post_init__(self):
        if min(self.pixel_sigma, self.depth_sigma, self.drift) < 0:
            raise ValidationError("noise sigmas must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValidationError(f"dropout must be in [0, 1], got {self.dropout}")


@dataclass(eq=False)
class SimObject:
    """One rigid object: a set of boxes sharing a motion state.

    A moving object carries axis + motion + window + mode. A child rides its
    ``parent`` (relation ARTICULATED) or sits still and is merely revealed
    by it (relation STATIC). Plain static objects set none of these.
    """

    name: str
    boxes: list[BoxGeom]
    axis: ScrewAxis | None = None
    motion: np.ndarray | None = None  # (T,) joint configuration per frame
    window: tuple[int, int] | None = None  # [t_start, t_end)
    mode: str | None = None
    parent: str | None = None
    relation: str | None = None
    n_tracks: int = 120

    @property
    def moving(self) -> bool:
        return self.motion is not None


@dataclass(eq=False)
class SceneSpec:
    name: str
    n_frames: int
    intrinsics: CameraIntrinsics
    camera: list[RigidTransform]
    objects: list[SimObject]
    static_geometry: list[BoxGeom] = field(default_factory=list)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    fps: float = 30.0
    static_tracks_per_box: int = 60
    agent_radius: float = 40.0

    def validate(self) -> None:
        if self.n_frames < 2:
            raise ValidationError("a scene needs at least 2 frames")
        if len(self.camera) != self.n_frames:
            raise ValidationError(
                f"camera path has {len(self.camera)} poses for "
                f"{self.n_frames} frames"
            )
        names = [obj.name for obj in self.objects]
        if len(set(names)) != len(names):
            raise ValidationError("object names must be unique")
        by_name = {obj.name: obj for obj in self.objects}
        for obj in self.objects:
            if not obj.boxes:
                raise ValidationError(f"object {obj.name} has no geometry")
            if obj.moving:
                if obj.axis is None or obj.window is None or obj.mode is None:
                    raise ValidationError(
                        f"moving object {obj.name} needs axis, window, and mode"
                    )
                if obj.parent is not None:
                    raise ValidationError(
                        f"object {obj.name} cannot both move and ride a parent"
                    )
                theta = np.asarray(obj.motion, dtype=float)
                if theta.shape != (self.n_frames,):
                    raise ValidationError(
                        f"motion of {obj.name} has shape {theta.shape}, "
                        f"expected ({self.n_frames},)"
                    )
                if not np.all(np.isfinite(theta)):
                    raise ValidationError(f"motion of {obj.name} is not finite")
                t_s, t_e = obj.window
                if not 0 <= t_s < t_e <= self.n_frames:
                    raise ValidationError(
                        f"window {obj.window} of {obj.name} outside "
                        f"[0, {self.n_frames})"
                    )
                if t_e - t_s < 2:
                    raise ValidationError(
                        f"window of {obj.name} must span at least 2 frames"
                    )
                # Closed before the window, frozen at its final value after.
                if np.any(theta[: t_s + 1] != 0.0):
                    raise ValidationError(
                        f"motion of {obj.name} is nonzero before its window"
                    )
                if np.any(theta[t_e - 1 :] != theta[t_e - 1]):
                    raise ValidationError(
                        f"motion of {obj.name} changes after its window"
                    )
                obj.motion = theta
            elif obj.window is not None:
                raise ValidationError(
                    f"object {obj.name} has a window but no motion profile"
                )
            if obj.parent is not None:
                if obj.relation not in ("ARTICULATED", "STATIC"):
                    raise ValidationError(
                        f"child {obj.name} relation must be ARTICULATED or "
                        f"STATIC, got {obj.relation!r}"
                    )
                parent = by_name.get(obj.parent)
                if parent is None:
                    raise ValidationError(
                        f"child {obj.name} names unknown parent {obj.parent}"
                    )
                if not parent.moving:
                    raise ValidationError(
                        f"parent {obj.parent} of {obj.name} does not move"
                    )
            elif obj.relation is not None:
                raise ValidationError(
                    f"object {obj.name} has a relation but no parent"
                )


@dataclass(eq=False)
class GtArticulation:
    object: str
    axis: ScrewAxis
    thetas: np.ndarray  # (T,) full-sequence configuration
    mode: str

    @property
    def kind(self) -> JointKind:
        return self.axis.kind


@dataclass(eq=False)
class SimGroundTruth:
    segments: list[tuple[int, int, str]]  # (t_start, t_end, object name)
    articulations: list[GtArticulation]
    children: list[tuple[str, str, str]]  # (parent, child, relation)
    max_open: dict[str, int]
    object_points: dict[str, np.ndarray]
    object_masks: dict[str, tuple[int, np.ndarray, int, np.ndarray]] | None


@dataclass(eq=False)
class SimResult:
    spec: SceneSpec
    depths: np.ndarray | None  # (T, H, W), 0 where no surface
    object_ids: np.ndarray | None  # (T, H, W) int16, -1 where no surface
    facet_ids: np.ndarray | None  # (T, H, W) int16, unique per box face
    agent_masks: np.ndarray | None  # (T, H, W) bool
    tracks2d: PointTracks2D
    tracks3d: PointTracks3D  # noisy, world frame
    tracks3d_clean: PointTracks3D
    track_owner: np.ndarray  # (F,) object index, -1 for background
    track_facet: np.ndarray  # (F,) global facet id each track was sampled on
    gt: SimGroundTruth


def ramp_profile(n_frames: int, window: tuple[int, int], peak: float) -> np.ndarray:
    """Linear opening ramp across the window, held at peak afterwards."""
    t_s, t_e = window
    theta = np.zeros(n_frames)
    # fraction first: it ends at exactly 1.0, so the last in-window frame
    # is bit-equal to the held peak ((peak * n) / n need not be)
    theta[t_s:t_e] = peak * ((np.arange(t_s, t_e) - t_s) / (t_e - 1 - t_s))
    theta[t_e:] = peak
    return theta


def triangle_profile(n_frames: int, window: tuple[int, int], peak: float) -> np.ndarray:
    """Open to peak mid-window, close back to zero by the window's end."""
    t_s, t_e = window
    last = t_e - 1
    mid = (t_s + last) // 2
    if mid <= t_s or mid >= last:
        raise ValidationError("triangle profile needs a window of at least 3 frames")
    theta = np.zeros(n_frames)
    up = np.arange(t_s, mid + 1)
    theta[t_s : mid + 1] = peak * ((up - t_s) / (mid - t_s))
    down = np.arange(mid + 1, t_e)
    theta[mid + 1 : t_e] = peak * ((last - down) / (last - mid))
    return theta


def _box_translate(center) -> RigidTransform:
    return RigidTransform(np.eye(3), np.asarray(center, dtype=float))


def _object_transforms(spec: SceneSpec) -> dict[str, list[RigidTransform]]:
    """World displacement per object per frame (identity when at rest)."""
    ident = RigidTransform.identity()
    out: dict[str, list[RigidTransform]] = {}
    for obj in spec.objects:
        if obj.moving:
            twist = twist_from_axis(obj.axis)
            frames = []
            for t in range(spec.n_frames):
                theta = float(obj.motion[t])
                frames.append(ident if theta == 0.0 else exp_map(twist, theta))
            out[obj.name] = frames
    for obj in spec.objects:
        if obj.parent is not None and obj.relation == "ARTICULATED":
            out[obj.name] = out[obj.parent]
    for obj in spec.objects:
        out.setdefault(obj.name, [ident] * spec.n_frames)
    return out


def _ray_boxes(origin, dirs, boxes):
    """Nearest-hit depth over a box list.

    ``dirs`` are world-frame ray directions scaled to camera z = 1, so the
    slab parameter of a hit equals its camera depth. Returns (depth, gid,
    face) flat arrays; depth is +inf and gid is -1 where nothing is hit.
    Faces are numbered 2k for the -half side of axis k, 2k+1 for +half.
    """
    n = dirs.shape[0]
    depth = np.full(n, np.inf)
    gid = np.full(n, -1, dtype=np.int16)
    face = np.zeros(n, dtype=np.int16)
    for rot, trans, half, g in boxes:
        o = rot.T @ (origin - trans)
        d = dirs @ rot
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        lo = np.fmin(t1, t2)
        hi = np.fmax(t1, t2)
        tn = np.max(lo, axis=1)
        tf = np.min(hi, axis=1)
        entering = tn > 1e-9
        t = np.where(entering, tn, tf)
        hit = (tn <= tf) & (tf > 1e-9) & np.isfinite(t)
        k = np.where(entering, np.argmax(lo, axis=1), np.argmin(hi, axis=1))
        dk = np.take_along_axis(d, k[:, None], axis=1)[:, 0]
        f = 2 * k + np.where(entering, dk < 0, dk > 0)
        closer = hit & (t < depth)
        depth[closer] = t[closer]
        gid[closer] = g
        face[closer] = f[closer]
    return depth, gid, face


def _camera_dirs(intrinsics: CameraIntrinsics) -> np.ndarray:
    u, v = np.meshgrid(
        np.arange(intrinsics.width, dtype=float),
        np.arange(intrinsics.height, dtype=float),
    )
    x = (u - intrinsics.cx) / intrinsics.fx
    y = (v - intrinsics.cy) / intrinsics.fy
    return np.stack([x.ravel(), y.ravel(), np.ones(x.size)], axis=1)


def _sample_surface(boxes: list[BoxGeom], n: int, rng):
    """Area-weighted uniform samples over the union of box surfaces.

    Returns (points, box_index, face_index); faces are numbered like the
    renderer's (2k for the -half side of axis k, 2k+1 for +half), so a
    sample's face id matches the facet the renderer reports where the
    sample is directly visible.
    """
    areas = np.concatenate([box.surface_areas for box in boxes])
    probs = areas / areas.sum()
    choice = rng.choice(areas.size, size=n, p=probs)
    box_idx = choice // 6
    face_idx = choice % 6
    axis = face_idx // 2
    sign = np.where(face_idx % 2 == 0, -1.0, 1.0)
    halves = np.stack([boxes[b].half_extents for b in box_idx])
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * halves
    local[np.arange(n), axis] = sign * halves[np.arange(n), axis]
    points = np.empty((n, 3))
    for b in range(len(boxes)):
        sel = box_idx == b
        if np.any(sel):
            points[sel] = boxes[b].pose.apply(local[sel])
    return points, box_idx, face_idx


def _disk_mask(height, width, center, radius) -> np.ndarray:
    u0, v0 = center
    v, u = np.ogrid[:height, :width]
    return (u - u0) ** 2 + (v - v0) ** 2 <= radius * radius


def render_scene(spec: SceneSpec, *, render_depth: bool = True) -> SimResult:
    """Generate one scene: depth/id/mask imagery, GT tracks, GT structure.

    With ``render_depth=False`` imagery and object masks are skipped and
    track visibility omits the occlusion test (only image bounds and dropout
    apply); the motion content of the tracks is identical.
    """
    spec.validate()
    T = spec.n_frames
    intr = spec.intrinsics
    H, W = intr.height, intr.width
    transforms = _object_transforms(spec)

    # Global box table: every rendered box gets a stable gid.
    box_table = []  # (object index or -1, BoxGeom)
    for i, obj in enumerate(spec.objects):
        for box in obj.boxes:
            box_table.append((i, box))
    for box in spec.static_geometry:
        box_table.append((-1, box))
    obj_of_gid = np.array([e[0] for e in box_table], dtype=np.int16)

    # Partition boxes into those whose world pose never changes and the rest.
    still_gids, moving_gids = [], []
    for g, (owner, box) in enumerate(box_table):
        if owner >= 0 and spec.objects[owner].name in _moving_set(spec):
            moving_gids.append(g)
        else:
            still_gids.append(g)

    def world_box(g: int, t: int):
        owner, box = box_table[g]
        if owner >= 0:
            pose = transforms[spec.objects[owner].name][t].compose(box.pose)
        else:
            pose = box.pose
        return (pose.rotation, pose.translation, box.half_extents, g)

    cam_dirs = _camera_dirs(intr)
    camera_static = all(
        np.array_equal(p.rotation, spec.camera[0].rotation)
        and np.array_equal(p.translation, spec.camera[0].translation)
        for p in spec.camera
    )

    depths = object_ids = facet_ids = agent_masks = None
    if render_depth:
        depths = np.zeros((T, H, W))
        object_ids = np.full((T, H, W), -1, dtype=np.int16)
        facet_ids = np.full((T, H, W), -1, dtype=np.int16)
        agent_masks = np.zeros((T, H, W), dtype=bool)

        still_cache = None
        for t in range(T):
            pose = spec.camera[t]
            dirs = cam_dirs @ pose.rotation.T
            origin = pose.translation
            if camera_static and still_cache is not None:
                d0, g0, f0 = still_cache
                d0, g0, f0 = d0.copy(), g0.copy(), f0.copy()
            else:
                d0, g0, f0 = _ray_boxes(
                    origin, dirs, [world_box(g, t) for g in still_gids]
                )
                if camera_static:
                    still_cache = (d0.copy(), g0.copy(), f0.copy())
            dm, gm, fm = _ray_boxes(
                origin, dirs, [world_box(g, t) for g in moving_gids]
            )
            nearer = dm < d0
            d0[nearer] = dm[nearer]
            g0[nearer] = gm[nearer]
            f0[nearer] = fm[nearer]
            hit = np.isfinite(d0) & (g0 >= 0)
            depth_img = np.where(hit, d0, 0.0).reshape(H, W)
            gid_img = np.where(hit, g0, -1).reshape(H, W).astype(np.int16)
            depths[t] = depth_img
            object_ids[t] = np.where(
                gid_img >= 0, obj_of_gid[np.maximum(gid_img, 0)], -1
            )
            facet_ids[t] = np.where(
                gid_img >= 0, gid_img * 6 + f0.reshape(H, W).astype(np.int16), -1
            )

            # Agent blob: a disk at each active object's projected centroid.
            for obj in spec.objects:
                if obj.window is None or not obj.window[0] <= t < obj.window[1]:
                    continue
                centers = np.stack(
                    [
                        transforms[obj.name][t].compose(b.pose).translation
                        for b in obj.boxes
                    ]
                )
                centroid = centers.mean(axis=0)
                cam = pose.inverse().apply(centroid)
                if cam[2] <= 0:
                    continue
                u0 = intr.fx * cam[0] / cam[2] + intr.cx
                v0 = intr.fy * cam[1] / cam[2] + intr.cy
                agent_masks[t] |= _disk_mask(H, W, (u0, v0), spec.agent_radius)

    # Ground-truth tracks: surface samples riding their object's motion.
    # gid_base[i] is the global id of object i's first box (the static
    # geometry's gids follow all object boxes), so each track can remember
    # the exact box face family it was sampled on.
    gid_base = np.cumsum([0] + [len(obj.boxes) for obj in spec.objects])
    points0, owner, track_facet = [], [], []
    for i, obj in enumerate(spec.objects):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, _TAG_OBJECT_TRACKS, i])
        )
        pts, local, face = _sample_surface(obj.boxes, obj.n_tracks, rng)
        points0.append(pts)
        owner.extend([i] * obj.n_tracks)
        track_facet.extend(((gid_base[i] + local) * 6 + face).tolist())
    for j, box in enumerate(spec.static_geometry):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, _TAG_STATIC_TRACKS, j])
        )
        pts, _, face = _sample_surface([box], spec.static_tracks_per_box, rng)
        points0.append(pts)
        owner.extend([-1] * spec.static_tracks_per_box)
        track_facet.extend(((gid_base[-1] + j) * 6 + face).tolist())
    p0 = (
        np.concatenate(points0)
        if points0
        else np.zeros((0, 3))
    )
    owner = np.asarray(owner, dtype=int)
    track_facet = np.asarray(track_facet, dtype=np.int16)
    F = p0.shape[0]

    clean = np.broadcast_to(p0, (T, F, 3)).copy()
    for i, obj in enumerate(spec.objects):
        sel = owner == i
        if not np.any(sel) or spec.objects[i].name not in _moving_set(spec):
            continue
        disp = transforms[obj.name]
        pts = p0[sel]
        for t in range(T):
            clean[t, sel] = disp[t].apply(pts)

    noise = spec.noise
    rng_drift = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_DRIFT]))
    drift = np.zeros((T, F, 3))
    if noise.drift > 0:
        steps = rng_drift.normal(0.0, noise.drift, size=(T, F, 3))
        steps[0] = 0.0
        drift = np.cumsum(steps, axis=0)
    rng_3d = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_NOISE_3D]))
    noisy3d = clean + drift
    if noise.depth_sigma > 0:
        noisy3d = noisy3d + rng_3d.normal(0.0, noise.depth_sigma, size=(T, F, 3))

    # 2D observations come from the drifted (not 3D-noised) geometry; pixel
    # noise models the 2D tracker's own jitter independently.
    uv = np.zeros((T, F, 2))
    z_cam = np.zeros((T, F))
    in_image = np.zeros((T, F), dtype=bool)
    base3d = clean + drift
    for t in range(T):
        pose = spec.camera[t]
        cam = (base3d[t] - pose.translation) @ pose.rotation
        z = cam[:, 2]
        ok = z > 1e-9
        safe = np.where(ok, z, 1.0)
        u = intr.fx * cam[:, 0] / safe + intr.cx
        v = intr.fy * cam[:, 1] / safe + intr.cy
        ok &= (u >= -0.5) & (u < W - 0.5) & (v >= -0.5) & (v < H - 0.5)
        uv[t] = np.stack([u, v], axis=1)
        z_cam[t] = z
        in_image[t] = ok

    visible = in_image.copy()
    if render_depth:
        for t in range(T):
            ok = in_image[t]
            cols = np.clip(np.rint(uv[t, ok, 0]).astype(int), 0, W - 1)
            rows = np.clip(np.rint(uv[t, ok, 1]).astype(int), 0, H - 1)
            d = depths[t][rows, cols]
            unoccluded = (d <= 0.0) | (z_cam[t, ok] < d + OCCLUSION_TOL)
            vis = visible[t].copy()
            vis[np.nonzero(ok)[0][~unoccluded]] = False
            visible[t] = vis

    rng_drop = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_DROPOUT]))
    if noise.dropout > 0:
        visible &= rng_drop.random(size=(T, F)) >= noise.dropout

    rng_px = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _TAG_NOISE_PIXEL])
    )
    uv_noisy = uv.copy()
    if noise.pixel_sigma > 0:
        uv_noisy = uv_noisy + rng_px.normal(0.0, noise.pixel_sigma, size=(T, F, 2))
    uv_noisy[~visible] = 0.0
    pos3 = noisy3d.copy()
    pos3[~visible] = 0.0
    clean_out = clean.copy()
    clean_out[~visible] = 0.0

    gt = _ground_truth(spec, object_ids)

    return SimResult(
        spec=spec,
        depths=depths,
        object_ids=object_ids,
        facet_ids=facet_ids,
        agent_masks=agent_masks,
        tracks2d=PointTracks2D(uv_noisy, visible),
        tracks3d=PointTracks3D(pos3, visible),
        tracks3d_clean=PointTracks3D(clean_out, visible),
        track_owner=owner,
        track_facet=track_facet,
        gt=gt,
    )


def _moving_set(spec: SceneSpec) -> set[str]:
    """Names whose world pose changes over time (movers and riders)."""
    movers = {obj.name for obj in spec.objects if obj.moving}
    movers |= {
        obj.name
        for obj in spec.objects
        if obj.parent in movers and obj.relation == "ARTICULATED"
    }
    return movers




def _ground_truth(spec: SceneSpec, object_ids: np.ndarray | None) -> SimGroundTruth:
    segments = sorted(
        (obj.window[0], obj.window[1], obj.name)
        for obj in spec.objects
        if obj.window is not None
    )
    articulations = [
        GtArticulation(
            object=obj.name,
            axis=obj.axis,
            thetas=np.asarray(obj.motion, dtype=float),
            mode=obj.mode,
        )
        for obj in spec.objects
        if obj.moving
    ]
    children = [
        (obj.parent, obj.name, obj.relation)
        for obj in spec.objects
        if obj.parent is not None
    ]
    max_open = {
        art.object: max_open_frame(art.thetas, art.mode) for art in articulations
    }

    # Closed-state point sets per object, denser than the tracked samples.
    object_points = {}
    for i, obj in enumerate(spec.objects):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, _TAG_OBJECT_TRACKS, 10_000 + i])
        )
        object_points[obj.name] = _sample_surface(obj.boxes, 400, rng)[0]

    masks = None
    if object_ids is not None:
        scene_open = max(max_open.values()) if max_open else 0
        by_name = {obj.name: obj for obj in spec.objects}
        masks = {}
        for i, obj in enumerate(spec.objects):
            if obj.name in max_open:
                open_frame = max_open[obj.name]
            elif obj.parent is not None and obj.parent in max_open:
                open_frame = max_open[obj.parent]
            else:
                open_frame = scene_open
            closed_frame = 0
            masks[obj.name] = (
                closed_frame,
                object_ids[closed_frame] == i,
                open_frame,
                object_ids[open_frame] == i,
            )

    return SimGroundTruth(
        segments=segments,
        articulations=articulations,
        children=children,
        max_open=max_open,
        object_points=object_points,
        object_masks=masks,
    )


def gen_bundle(spec: SceneSpec, out_dir: str) -> str:
    """Render a scene and write it as a bundle directory."""
    result = render_scene(spec, render_depth=True)
    os.makedirs(out_dir, exist_ok=True)
    T = spec.n_frames
    intr = spec.intrinsics

    rng_depth = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _TAG_NOISE_DEPTH])
    )
    for t in range(T):
        depth = result.depths[t].copy()
        if spec.noise.depth_sigma > 0:
            valid = depth > 0
            depth[valid] = np.maximum(
                depth[valid]
                + rng_depth.normal(0.0, spec.noise.depth_sigma, size=int(valid.sum())),
                1e-3,
            )
        bundle_io.write_depth(
            os.path.join(out_dir, bundle_io.DEPTH_PATTERN % t), depth
        )
        bundle_io.write_mask(
            os.path.join(out_dir, bundle_io.MASK_PATTERN % t), result.agent_masks[t]
        )

    meta = {
        "version": bundle_io.BUNDLE_VERSION,
        "n_frames": T,
        "fps": spec.fps,
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "poses": [pose.as_matrix().tolist() for pose in spec.camera],
    }
    bundle_io.write_json(os.path.join(out_dir, "meta.json"), meta)

    bundle_io.write_json(
        os.path.join(out_dir, "tracks.json"),
        {
            "positions": result.tracks2d.positions.tolist(),
            "visibility": result.tracks2d.visibility.astype(int).tolist(),
        },
    )

    entries = []
    for i, obj in enumerate(spec.objects):
        points = result.gt.object_points[obj.name]
        points_name = bundle_io.POINTS_PATTERN % i
        bundle_io.write_points(os.path.join(out_dir, points_name), points)
        closed_frame, mask_c, open_frame, mask_o = result.gt.object_masks[obj.name]
        closed_name = bundle_io.OBJMASK_PATTERN % (i, "closed")
        open_name = bundle_io.OBJMASK_PATTERN % (i, "open")
        bundle_io.write_mask(os.path.join(out_dir, closed_name), mask_c)
        bundle_io.write_mask(os.path.join(out_dir, open_name), mask_o)
        entries.append(
            {
                "name": obj.name,
                "points": points_name,
                "n_points": int(points.shape[0]),
                "mask_closed": closed_name,
                "mask_open": open_name,
                "closed_frame": closed_frame,
                "open_frame": open_frame,
            }
        )
    bundle_io.write_json(os.path.join(out_dir, "objects.json"), {"objects": entries})

    gt = {
        "segments": [
            {"t_start": s, "t_end": e, "object": name}
            for s, e, name in result.gt.segments
        ],
        "articulations": [
            {
                "object": art.object,
                "kind": art.kind.value,
                "axis": {
                    "direction": art.axis.direction.tolist(),
                    "point": art.axis.point.tolist(),
                },
                "thetas": art.thetas.tolist(),
                "mode": art.mode,
            }
            for art in result.gt.articulations
        ],
        "children": [
            {"parent": p, "child": c, "relation": r}
            for p, c, r in result.gt.children
        ],
        "max_open": result.gt.max_open,
    }
    bundle_io.write_json(os.path.join(out_dir, "gt.json"), gt)

    hints = [
        {"t_start": obj.window[0], "t_end": obj.window[1], "mode": obj.mode}
        for obj in spec.objects
        if obj.window is not None and obj.mode is not None
    ]
    if hints:
        bundle_io.write_json(os.path.join(out_dir, "hints.json"), {"hints": hints})

    return out_dir


def _default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=280.0, fy=280.0, cx=160.0, cy=120.0, width=320, height=240)


def _static_camera(n_frames: int) -> list[RigidTransform]:
    return [RigidTransform.identity()] * n_frames


def drawer_spec(seed: int = 0, noise: NoiseModel | None = None) -> SceneSpec:
    """Cabinet with one drawer sliding 0.35 m toward the camera."""
    T = 60
    drawer = SimObject(
        name="drawer",
        boxes=[BoxGeom((0.26, 0.09, 0.22), _box_translate((0.0, 0.10, 1.78)))],
        axis=ScrewAxis(JointKind.PRISMATIC, (0.0, 0.0, -1.0), (0.0, 0.0, 0.0)),
        motion=ramp_profile(T, (15, 45), 0.35),
        window=(15, 45),
        mode="OPENING",
        n_tracks=130,
    )
    cabinet = SimObject(
        name="cabinet",
        boxes=[BoxGeom((0.30, 0.22, 0.25), _box_translate((0.0, 0.06, 1.85)))],
        n_tracks=110,
    )
    return SceneSpec(
        name="drawer",
        n_frames=T,
        intrinsics=_default_intrinsics(),
        camera=_static_camera(T),
        objects=[drawer, cabinet],
        static_geometry=[BoxGeom((0.9, 0.7, 0.05), _box_translate((0.0, 0.0, 2.45)))],
        noise=noise or NoiseModel(),
        seed=seed,
    )


def _door_like_spec(
    name: str, seed: int, noise: NoiseModel | None, width: float, sweep: float
) -> SceneSpec:
    T = 60
    hinge_x = -0.10
    half_w = width / 2.0
    door = SimObject(
        name="door",
        boxes=[
            BoxGeom((half_w, 0.32, 0.02), _box_translate((hinge_x + half_w, 0.0, 2.0)))
        ],
        axis=ScrewAxis(JointKind.REVOLUTE, (0.0, 1.0, 0.0), (hinge_x, 0.0, 2.0)),
        motion=ramp_profile(T, (12, 48), sweep),
        window=(12, 48),
        mode="OPENING",
        n_tracks=140,
    )
    shelf = SimObject(
        name="shelf",
        boxes=[BoxGeom((0.12, 0.30, 0.12), _box_translate((0.55, 0.10, 2.1)))],
        n_tracks=90,
    )
    return SceneSpec(
        name=name,
        n_frames=T,
        intrinsics=_default_intrinsics(),
        camera=_static_camera(T),
        objects=[door, shelf],
        static_geometry=[BoxGeom((0.9, 0.7, 0.04), _box_translate((0.0, 0.0, 2.35)))],
        noise=noise or NoiseModel(),
        seed=seed,
    )


def door_spec(seed: int = 0, noise: NoiseModel | None = None) -> SceneSpec:
    """Hinged door, 0.45 m wide, sweeping 60 degrees toward the camera."""
    return _door_like_spec("door", seed, noise, 0.45, math.radians(60.0))


def small_arc_door_spec(seed: int = 0, noise: NoiseModel | None = None) -> SceneSpec:
    """Short door (0.25 m radius) opening only 15 degrees.

    The chords such a shallow arc traces are nearly parallel, which is
    exactly the regime where the direction prior has to earn its keep.
    """
    return _door_like_spec("small-arc-door", seed, noise, 0.25, math.radians(15.0))


def two_drawer_spec(seed: int = 0, noise: NoiseModel | None = None) -> SceneSpec:
    """Two stacked drawers; only the lower one is pulled open."""
    T = 60
    moving = SimObject(
        name="drawer_lower",
        boxes=[BoxGeom((0.26, 0.10, 0.22), _box_translate((0.0, 0.135, 1.79)))],
        axis=ScrewAxis(JointKind.PRISMATIC, (0.0, 0.0, -1.0), (0.0, 0.0, 0.0)),
        motion=ramp_profile(T, (15, 45), 0.30),
        window=(15, 45),
        mode="OPENING",
        n_tracks=130,
    )
    idle = SimObject(
        name="drawer_upper",
        boxes=[BoxGeom((0.26, 0.10, 0.22), _box_translate((0.0, -0.135, 1.79)))],
        n_tracks=110,
    )
    body = SimObject(
        name="cabinet",
        boxes=[BoxGeom((0.30, 0.26, 0.25), _box_translate((0.0, 0.0, 1.85)))],
        n_tracks=110,
    )
    return SceneSpec(
        name="two-drawer",
        n_frames=T,
        intrinsics=_default_intrinsics(),
        camera=_static_camera(T),
        objects=[moving, idle, body],
        static_geometry=[BoxGeom((0.9, 0.7, 0.05), _box_translate((0.0, 0.0, 2.45)))],
        noise=noise or NoiseModel(),
        seed=seed,
    )


def fridge_spec(seed: int = 0, noise: NoiseModel | None = None) -> SceneSpec:
    """Cabinet with a 120-degree door, one item riding the door's inner
    face and one resting inside the cavity."""
    T = 60
    hinge = np.array([-0.25, 0.0, 1.665])
    door = SimObject(
        name="door",
        boxes=[BoxGeom((0.30, 0.38, 0.015), _box_translate((0.05, 0.0, 1.665)))],
        axis=ScrewAxis(JointKind.REVOLUTE, (0.0, 1.0, 0.0), hinge),
        motion=ramp_profile(T, (10, 50), math.radians(120.0)),
        window=(10, 50),
        mode="OPENING",
        n_tracks=150,
    )
    body = SimObject(
        name="body",
        boxes=[
            BoxGeom((0.30, 0.40, 0.02), _box_translate((0.05, 0.0, 2.20))),
            BoxGeom((0.02, 0.40, 0.25), _box_translate((-0.25, 0.0, 1.95))),
            BoxGeom((0.02, 0.40, 0.25), _box_translate((0.35, 0.0, 1.95))),
            BoxGeom((0.28, 0.02, 0.25), _box_translate((0.05, -0.38, 1.95))),
            BoxGeom((0.28, 0.02, 0.25), _box_translate((0.05, 0.38, 1.95))),
        ],
        n_tracks=120,
    )
    door_shelf = SimObject(
        name="door_shelf",
        boxes=[BoxGeom((0.05, 0.06, 0.02), _box_translate((0.17, 0.10, 1.70)))],
        parent="door",
        relation="ARTICULATED",
        n_tracks=70,
    )
    cavity_item = SimObject(
        name="cavity_item",
        boxes=[BoxGeom((0.06, 0.05, 0.05), _box_translate((0.15, 0.31, 1.80)))],
        parent="door",
        relation="STATIC",
        n_tracks=70,
    )
    return SceneSpec(
        name="fridge",
        n_frames=T,
        intrinsics=_default_intrinsics(),
        camera=_static_camera(T),
        objects=[door, body, door_shelf, cavity_item],
        static_geometry=[BoxGeom((0.9, 0.7, 0.05), _box_translate((0.0, 0.0, 2.55)))],
        noise=noise or NoiseModel(),
        seed=seed,
    )


def static_scene_spec(seed: int = 0, n_frames: int = 40) -> SceneSpec:
    """Rigid scene observed by a slowly moving camera; nothing articulates."""
    camera = []
    for t in range(n_frames):
        rot, _ = rodrigues(np.array([0.0, -0.002 * t, 0.0]))
        camera.append(RigidTransform(rot, np.array([0.008 * t, 0.0, 0.003 * t])))
    return SceneSpec(
        name="static",
        n_frames=n_frames,
        intrinsics=_default_intrinsics(),
        camera=camera,
        objects=[],
        static_geometry=[
            BoxGeom((1.6, 1.2, 0.05), _box_translate((0.0, 0.0, 2.5))),
            BoxGeom((0.25, 0.20, 0.20), _box_translate((-0.35, 0.25, 1.9))),
            BoxGeom((0.18, 0.30, 0.15), _box_translate((0.40, 0.05, 2.0))),
        ],
        noise=NoiseModel(),
        seed=seed,
        static_tracks_per_box=60,
    )


def multi_interaction_spec(
    seed: int = 0, noise: NoiseModel | None = None, n_objects: int | None = None
) -> SceneSpec:
    """Several furniture units interacted with one after another.

    Windows are disjoint with generous idle gaps, so segmentation has
    clean boundaries to find. Unit types, profiles, and window jitter are
    drawn from the seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    if n_objects is None:
        n_objects = int(rng.integers(2, 4))
    T = 50 + 45 * n_objects
    centers_by_count = {2: [-0.35, 0.35], 3: [-0.55, 0.02, 0.58]}
    centers = centers_by_count[n_objects]
    objects = []
    for i in range(n_objects):
        t_s = 15 + 45 * i + int(rng.integers(-3, 4))
        t_e = t_s + 25 + int(rng.integers(0, 6))
        window = (t_s, t_e)
        cx = centers[i]
        kind = rng.choice(["drawer", "door"])
        shape = rng.choice(["ramp", "triangle"])
        if kind == "drawer":
            peak = 0.28
            axis = ScrewAxis(JointKind.PRISMATIC, (0.0, 0.0, -1.0), (0.0, 0.0, 0.0))
            boxes = [
                BoxGeom((0.20, 0.09, 0.20), _box_translate((cx, 0.12, 1.80))),
                BoxGeom((0.23, 0.20, 0.22), _box_translate((cx, 0.02, 1.88))),
            ]
            # Only the first box moves, so split into drawer + chassis.
            front = SimObject(
                name=f"unit{i}_drawer",
                boxes=[boxes[0]],
                axis=axis,
                motion=(
                    ramp_profile(T, window, peak)
                    if shape == "ramp"
                    else triangle_profile(T, window, peak)
                ),
                window=window,
                mode="OPENING" if shape == "ramp" else "OPENING-CLOSING",
                n_tracks=120,
            )
            chassis = SimObject(
                name=f"unit{i}_chassis", boxes=[boxes[1]], n_tracks=90
            )
            objects.extend([front, chassis])
        else:
            peak = math.radians(55.0)
            hinge_x = cx - 0.18
            axis = ScrewAxis(
                JointKind.REVOLUTE, (0.0, 1.0, 0.0), (hinge_x, 0.0, 1.95)
            )
            panel = SimObject(
                name=f"unit{i}_door",
                boxes=[
                    BoxGeom((0.18, 0.30, 0.02), _box_translate((cx, 0.0, 1.95)))
                ],
                axis=axis,
                motion=(
                    ramp_profile(T, window, peak)
                    if shape == "ramp"
                    else triangle_profile(T, window, peak)
                ),
                window=window,
                mode="OPENING" if shape == "ramp" else "OPENING-CLOSING",
                n_tracks=120,
            )
            objects.append(panel)
    return SceneSpec(
        name="multi",
        n_frames=T,
        intrinsics=_default_intrinsics(),
        camera=_static_camera(T),
        objects=objects,
        static_geometry=[BoxGeom((1.4, 0.8, 0.05), _box_translate((0.0, 0.0, 2.5)))],
        noise=noise
        or NoiseModel(pixel_sigma=0.5, depth_sigma=0.002, drift=3e-4, dropout=0.1),
        seed=seed,
    )


PRESETS = {
    "drawer": drawer_spec,
    "door": door_spec,
    "small-arc-door": small_arc_door_spec,
    "two-drawer": two_drawer_spec,
    "fridge": fridge_spec,
    "static": static_scene_spec,
    "multi": multi_interaction_spec,
}
