"""Point-track lifting, filtering, clustering, and smoothing.

2D tracks come in as (T, F, 2) pixel positions with a (T, F) visibility
mask. Lifting samples the depth stream (bilinear in inverse depth, which is
exact on planar surfaces) and transforms through the camera poses, so all 3D
tracks live in world coordinates and camera motion is compensated.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyClusterError, ShapeError, ValidationError
from .se3 import CameraIntrinsics, RigidTransform

# Depth-edge rejection (see _edge_pixels): the floor sits above float32
# raster quantization, the gain above the noise level a clean second
# difference reaches.
EDGE_TOL_FLOOR = 1e-6
EDGE_TOL_GAIN = 4.0


class TrackLabel(enum.Enum):
    STATIC = "STATIC"
    DYNAMIC = "DYNAMIC"
    REJECTED = "REJECTED"


@dataclass(frozen=True, eq=False)
class PointTracks2D:
    positions: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vis = np.asarray(self.visibility, dtype=bool)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ShapeError(f"positions must be (T, F, 2), got {pos.shape}")
        if vis.shape != pos.shape[:2]:
            raise ShapeError(
                f"visibility {vis.shape} does not match positions {pos.shape[:2]}"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True, eq=False)
class PointTracks3D:
    positions: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vis = np.asarray(self.visibility, dtype=bool)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ShapeError(f"positions must be (T, F, 3), got {pos.shape}")
        if vis.shape != pos.shape[:2]:
            raise ShapeError(
                f"visibility {vis.shape} does not match positions {pos.shape[:2]}"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[1]

    def subset(self, indices) -> "PointTracks3D":
        idx = np.asarray(indices, dtype=int)
        return PointTracks3D(self.positions[:, idx], self.visibility[:, idx])

    def time_slice(self, start: int, end: int) -> "PointTracks3D":
        return PointTracks3D(self.positions[start:end], self.visibility[start:end])


@dataclass(frozen=True, eq=False)
class TrackLabels:
    labels: np.ndarray  # array of TrackLabel, shape (F,)
    selected_cluster: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def indices(self, label: TrackLabel) -> np.ndarray:
        return np.array([i for i, l in enumerate(self.labels) if l is label], dtype=int)


def _edge_pixels(depths: np.ndarray) -> np.ndarray:
    """Flag pixels whose 3-neighborhood is not a single smooth surface.

    Inverse depth is affine in pixel coordinates on a plane, so its second
    difference along either image axis vanishes on single-surface
    neighborhoods and spikes where a crease or silhouette passes through.
    The firing threshold self-calibrates per frame: the robust median of
    the second differences measures the stream's own depth noise (zero for
    clean rasters), and a small floor absorbs float32 quantization. Pixels
    next to the image border or to invalid depth are flagged too.
    """
    n = depths.shape[0]
    with np.errstate(divide="ignore"):
        inv = np.where(depths > 0.0, 1.0 / depths, np.nan)
    flagged = np.ones(depths.shape, dtype=bool)
    for t in range(n):
        d2u = np.abs(inv[t, :, :-2] + inv[t, :, 2:] - 2.0 * inv[t, :, 1:-1])
        d2v = np.abs(inv[t, :-2, :] + inv[t, 2:, :] - 2.0 * inv[t, 1:-1, :])
        both = np.concatenate([d2u.ravel(), d2v.ravel()])
        scale = np.nanmedian(both) if np.any(np.isfinite(both)) else 0.0
        tol = max(EDGE_TOL_FLOOR, EDGE_TOL_GAIN * 1.4826 * float(scale))
        frame = np.zeros(depths.shape[1:], dtype=bool)
        frame[:, 1:-1] |= ~(d2u <= tol)  # NaN second differences flag too
        frame[1:-1, :] |= ~(d2v <= tol)
        frame[:, (0, -1)] = True
        frame[(0, -1), :] = True
        flagged[t] = frame | ~(depths[t] > 0.0)
    return flagged


def lift_tracks(
    tracks: PointTracks2D,
    depths: np.ndarray,
    poses: list[RigidTransform],
    intrinsics: CameraIntrinsics,
    *,
    max_spread: float = 0.10,
) -> PointTracks3D:
    """Lift 2D tracks to world-frame 3D tracks through the depth stream.

    Depth at a subpixel position is bilinear in inverse depth over the 2x2
    stencil, which reproduces planar surfaces exactly. A sample survives
    only when its whole stencil is valid, agrees within ``max_spread``, and
    sits clear of depth edges (see _edge_pixels); anything else loses
    visibility rather than risk blending two surfaces or committing to the
    wrong side of a silhouette.
    """
    depths = np.asarray(depths, dtype=float)
    n, f = tracks.n_frames, tracks.n_tracks
    if depths.shape != (n, intrinsics.height, intrinsics.width):
        raise ShapeError(
            f"depth stack {depths.shape} does not match tracks/intrinsics "
            f"({n}, {intrinsics.height}, {intrinsics.width})"
        )
    if len(poses) != n:
        raise ShapeError(f"got {len(poses)} poses for {n} frames")

    ts, fs = np.nonzero(tracks.visibility)
    u = tracks.positions[ts, fs, 0]
    v = tracks.positions[ts, fs, 1]

    h, w = intrinsics.height, intrinsics.width
    j0 = np.floor(u).astype(int)
    i0 = np.floor(v).astype(int)
    in_stencil = (j0 >= 0) & (j0 + 1 <= w - 1) & (i0 >= 0) & (i0 + 1 <= h - 1)
    j0c = np.clip(j0, 0, w - 2)
    i0c = np.clip(i0, 0, h - 2)
    d00 = depths[ts, i0c, j0c]
    d01 = depths[ts, i0c, j0c + 1]
    d10 = depths[ts, i0c + 1, j0c]
    d11 = depths[ts, i0c + 1, j0c + 1]
    stack = np.stack([d00, d01, d10, d11])
    all_valid = np.all(stack > 0.0, axis=0) & np.all(np.isfinite(stack), axis=0)
    spread = stack.max(axis=0) - stack.min(axis=0)

    edges = _edge_pixels(depths)
    on_edge = (
        edges[ts, i0c, j0c]
        | edges[ts, i0c, j0c + 1]
        | edges[ts, i0c + 1, j0c]
        | edges[ts, i0c + 1, j0c + 1]
    )
    ok = in_stencil & all_valid & (spread <= max_spread) & ~on_edge

    wu = u - j0c
    wv = v - i0c
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = (1.0 - wv) * ((1.0 - wu) / d00 + wu / d01) + wv * (
            (1.0 - wu) / d10 + wu / d11
        )
        depth = 1.0 / inv
    depth = np.where(ok, depth, 0.0)

    x = (u - intrinsics.cx) * depth / intrinsics.fx
    y = (v - intrinsics.cy) * depth / intrinsics.fy
    cam = np.stack([x, y, depth], axis=1)

    rot = np.stack([p.rotation for p in poses])
    trans = np.stack([p.translation for p in poses])
    world = np.einsum("nij,nj->ni", rot[ts], cam) + trans[ts]

    positions = np.zeros((n, f, 3))
    visibility = np.zeros((n, f), dtype=bool)
    positions[ts[ok], fs[ok]] = world[ok]
    visibility[ts[ok], fs[ok]] = True
    return PointTracks3D(positions, visibility)


def split_static_dynamic(
    tracks: PointTracks3D,
    *,
    motion_thresh: float = 0.10,
    jump_thresh: float = 0.15,
) -> TrackLabels:
    """Label tracks STATIC/DYNAMIC by net displacement, REJECTED on jumps.

    A jump is a per-frame displacement rate above ``jump_thresh`` between
    consecutive visible samples (gaps are rated per frame stepped over).
    Net displacement from first to last visible sample at or above
    ``motion_thresh`` makes a track DYNAMIC; tracks with fewer than two
    visible samples carry no motion evidence and stay STATIC.
    """
    labels = np.empty(tracks.n_tracks, dtype=object)
    for f in range(tracks.n_tracks):
        vis_t = np.nonzero(tracks.visibility[:, f])[0]
        if vis_t.size < 2:
            labels[f] = TrackLabel.STATIC
            continue
        pts = tracks.positions[vis_t, f]
        steps = np.diff(vis_t)
        hops = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(hops / steps > jump_thresh):
            labels[f] = TrackLabel.REJECTED
            continue
        net = np.linalg.norm(pts[-1] - pts[0])
        labels[f] = TrackLabel.DYNAMIC if net >= motion_thresh else TrackLabel.STATIC
    return TrackLabels(labels=labels)


def trajectory_distance_matrix(
    tracks: PointTracks3D, *, min_joint_frac: float = 0.30
) -> np.ndarray:
    """Mean per-frame distance between tracks over jointly visible frames.

    Pairs visible together on fewer than ``min_joint_frac`` of the frames
    get an infinite distance so clustering never links them.
    """
    n, f = tracks.n_frames, tracks.n_tracks
    vis = tracks.visibility
    pos = tracks.positions
    dist = np.zeros((f, f))
    min_joint = min_joint_frac * n
    for i in range(f):
        joint = vis[:, [i]] & vis  # (T, F)
        counts = joint.sum(axis=0)
        diffs = np.linalg.norm(pos[:, [i], :] - pos, axis=2)  # (T, F)
        sums = np.where(joint, diffs, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore"):
            row = np.where(counts >= max(min_joint, 1), sums / np.maximum(counts, 1), np.inf)
        dist[i] = row
    np.fill_diagonal(dist, 0.0)
    return dist


def dbscan(dist: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering over a precomputed distance matrix.

    Fixed ascending scan order, so the labeling is deterministic for a given
    input order; no randomness involved. A point's neighborhood includes
    itself. Returns cluster ids starting at 0, with -1 for noise.
    """
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {d.shape}")
    if eps <= 0.0 or min_pts < 1:
        raise ValidationError(f"need eps > 0 and min_pts >= 1, got {eps}, {min_pts}")
    n = d.shape[0]
    neighbors = [np.nonzero(d[i] <= eps)[0] for i in range(n)]
    labels = np.full(n, -1, dtype=int)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        if neighbors[i].size < min_pts:
            continue  # noise unless a later core point claims it as border
        labels[i] = cluster
        seeds = deque(neighbors[i])
        while seeds:
            j = seeds.popleft()
            if not visited[j]:
                visited[j] = True
                if neighbors[j].size >= min_pts:
                    seeds.extend(neighbors[j])
            if labels[j] == -1:
                labels[j] = cluster
        cluster += 1
    return labels


def cluster_tracks(
    tracks: PointTracks3D,
    *,
    eps: float = 0.25,
    min_pts: int = 5,
    min_joint_frac: float = 0.30,
) -> np.ndarray:
    """Pick the time-wise longest dense cluster of (dynamic) tracks.

    Returns sorted track indices of the selected cluster. Selection order:
    greatest median visible duration, then larger cluster, then lowest
    cluster id. Raises EmptyClusterError with fewer than ``min_pts`` tracks
    or when every track ends up labeled noise.
    """
    if tracks.n_tracks < min_pts:
        raise EmptyClusterError(
            f"{tracks.n_tracks} tracks cannot form a cluster of {min_pts}"
        )
    dist = trajectory_distance_matrix(tracks, min_joint_frac=min_joint_frac)
    labels = dbscan(dist, eps, min_pts)
    ids = np.unique(labels[labels >= 0])
    if ids.size == 0:
        raise EmptyClusterError("all tracks labeled noise")
    durations = tracks.visibility.sum(axis=0)
    best = None
    for cid in ids:
        members = np.nonzero(labels == cid)[0]
        key = (float(np.median(durations[members])), members.size, -int(cid))
        if best is None or key > best[0]:
            best = (key, members)
    return np.sort(best[1])


def smooth_tracks(tracks: PointTracks3D, window: int = 5) -> PointTracks3D:
    """Centered moving average within each visible run.

    Runs shorter than ``window`` pass through untouched, and no averaging
    crosses a visibility gap. Near run edges the window shrinks
    symmetrically, which keeps affine-in-time trajectories exactly fixed.
    """
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be odd and positive, got {window}")
    out = tracks.positions.copy()
    half = window // 2
    for f in range(tracks.n_tracks):
        vis = tracks.visibility[:, f]
        t = 0
        n = vis.size
        while t < n:
            if not vis[t]:
                t += 1
                continue
            start = t
            while t < n and vis[t]:
                t += 1
            run = np.arange(start, t)
            if run.size < window:
                continue
            pts = tracks.positions[run, f]
            csum = np.vstack([np.zeros(3), np.cumsum(pts, axis=0)])
            idx = np.arange(run.size)
            radius = np.minimum(np.minimum(idx, run.size - 1 - idx), half)
            lo = idx - radius
            hi = idx + radius + 1
            out[run, f] = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return PointTracks3D(out, tracks.visibility.copy())
