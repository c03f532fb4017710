"""Temporal interaction segmentation from depth disparity and agent masks.

Per frame, two weak indicators of manipulation are computed and fused:

* a depth disparity ratio: the previous depth map (lookback ``s_h`` frames)
  is forward-warped into the current view with full camera-motion
  compensation, and the fraction of jointly valid pixels whose absolute
  depth difference exceeds ``tau`` is recorded;
* an agent ratio: the fraction of pixels covered by the agent mask.

Both raw series are normalized by their own 99th percentile, clamped to
[0, 1], median filtered over ``kappa`` frames, and fused through a small
conditional probability table. Thresholding the fused score yields
interaction segments, stored half-open as [t_start, t_end).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError
from .se3 import CameraIntrinsics, RigidTransform, project, unproject


@dataclass(frozen=True, eq=False)
class DepthFrame:
    depth: np.ndarray
    pose: RigidTransform
    t: int

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2:
            raise ShapeError(f"depth must be 2D, got shape {d.shape}")
        object.__setattr__(self, "depth", d)


@dataclass(frozen=True, eq=False)
class AgentMaskFrame:
    mask: np.ndarray
    t: int

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ShapeError(f"mask must be 2D, got shape {m.shape}")
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class FusionTable:
    """Conditional probabilities P(interaction | disparity, agent) for the
    four boolean evidence combinations; `tf` means disparity true, agent
    false."""

    p_tt: float = 0.95
    p_tf: float = 0.45
    p_ft: float = 0.55
    p_ff: float = 0.05

    def __post_init__(self):
        for name in ("p_tt", "p_tf", "p_ft", "p_ff"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True, order=True)
class InteractionSegment:
    """Half-open frame interval [t_start, t_end)."""

    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValidationError(
                f"segment requires t_start < t_end, got [{self.t_start}, {self.t_end})"
            )

    @property
    def length(self) -> int:
        return self.t_end - self.t_start


def depth_edges(depth: np.ndarray, edge_thresh: float, size: int = 3) -> np.ndarray:
    """Pixels whose size x size neighborhood spans a depth discontinuity."""
    d = np.asarray(depth, dtype=float)
    valid = np.isfinite(d) & (d > 0.0)
    lo = ndimage.minimum_filter(np.where(valid, d, np.inf), size=size, mode="nearest")
    hi = ndimage.maximum_filter(np.where(valid, d, -np.inf), size=size, mode="nearest")
    return (hi - lo) > edge_thresh


def warp_depth(
    prev: DepthFrame,
    cur_pose: RigidTransform,
    intrinsics: CameraIntrinsics,
    *,
    edge_thresh: float = 0.05,
    prev_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Forward-warp a depth map into the current camera view.

    Source pixels sitting on a depth discontinuity (3x3 range above
    ``edge_thresh``) are not splatted, because their nearest-pixel targets
    would mix foreground and background depths and fake disparity on static
    scenes. Targets are filled by a z-buffer (nearest surface wins) and
    single-pixel holes are closed from depth-consistent neighbors only.
    Unobserved pixels come back as 0.
    """
    depth = prev.depth
    valid = np.isfinite(depth) & (depth > 0.0)
    source = valid & ~depth_edges(depth, edge_thresh)
    if prev_mask is not None:
        source &= ~np.asarray(prev_mask, dtype=bool)

    masked = np.where(source, depth, 0.0)
    points, src_valid = unproject(masked, intrinsics, prev.pose)
    warped = np.full(depth.shape, np.inf)
    if points.shape[0] > 0:
        uvz, ok = project(points, intrinsics, cur_pose)
        uvz = uvz[ok]
        cols = np.rint(uvz[:, 0]).astype(int)
        rows = np.rint(uvz[:, 1]).astype(int)
        flat = rows * depth.shape[1] + cols
        np.minimum.at(warped.ravel(), flat, uvz[:, 2])

    hit = np.isfinite(warped)
    if np.any(hit):
        near = ndimage.minimum_filter(warped, size=3, mode="nearest")
        far = ndimage.maximum_filter(np.where(hit, warped, -np.inf), size=3, mode="nearest")
        fillable = ~hit & np.isfinite(near) & ((far - near) <= edge_thresh)
        warped[fillable] = near[fillable]
    warped[~np.isfinite(warped)] = 0.0
    return warped


def depth_disparity(
    cur_depth: np.ndarray,
    warped: np.ndarray,
    tau: float,
    *,
    exclude: np.ndarray | None = None,
):
    """Absolute depth difference and the fraction of moved pixels.

    Returns ``(delta_map, ratio, coverage_ok)``. ``delta_map`` is NaN where
    the two maps are not jointly valid. ``ratio`` is the raw moved-pixel
    fraction before any sequence-level normalization; with zero jointly
    valid pixels it is 0 and ``coverage_ok`` is False. ``exclude`` removes
    pixels (e.g. under the agent mask) from the statistics.
    """
    cur = np.asarray(cur_depth, dtype=float)
    wrp = np.asarray(warped, dtype=float)
    if cur.shape != wrp.shape:
        raise ShapeError(f"shape mismatch {cur.shape} vs {wrp.shape}")
    if tau <= 0.0:
        raise ValidationError(f"tau must be positive, got {tau}")
    joint = np.isfinite(cur) & (cur > 0.0) & np.isfinite(wrp) & (wrp > 0.0)
    if exclude is not None:
        joint &= ~np.asarray(exclude, dtype=bool)
    delta_map = np.full(cur.shape, np.nan)
    delta_map[joint] = np.abs(cur[joint] - wrp[joint])
    n_joint = int(np.count_nonzero(joint))
    if n_joint == 0:
        return delta_map, 0.0, False
    moved = int(np.count_nonzero(delta_map[joint] > tau))
    return delta_map, moved / n_joint, True


def agent_ratio(mask: np.ndarray) -> float:
    """Fraction of image pixels covered by the agent mask."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2D, got shape {m.shape}")
    return float(np.count_nonzero(m)) / m.size


def median_filter_series(series: np.ndarray, kappa: int) -> np.ndarray:
    """Centered temporal median filter with edge replication."""
    if kappa < 1 or kappa % 2 == 0:
        raise ValidationError(f"kappa must be odd and positive, got {kappa}")
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise ShapeError(f"series must be 1D, got shape {arr.shape}")
    if kappa == 1 or arr.size == 0:
        return arr.copy()
    return ndimage.median_filter(arr, size=kappa, mode="nearest")


def normalize_series(raw: np.ndarray, percentile: float = 99.0) -> np.ndarray:
    """Divide by the series' own percentile and clamp to [0, 1].

    An (almost) all-zero series stays zero instead of dividing by zero.
    """
    arr = np.asarray(raw, dtype=float)
    scale = float(np.percentile(arr, percentile)) if arr.size else 0.0
    if scale <= 1e-12:
        return np.zeros_like(arr)
    return np.clip(arr / scale, 0.0, 1.0)


def fuse(agent: np.ndarray, delta: np.ndarray, table: FusionTable) -> np.ndarray:
    """Marginalize the conditional table over soft boolean evidence.

    Both inputs are interaction probabilities in [0, 1]; the result is
    p_tt*d*h + p_tf*d*(1-h) + p_ft*(1-d)*h + p_ff*(1-d)*(1-h).
    """
    h = np.asarray(agent, dtype=float)
    d = np.asarray(delta, dtype=float)
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValidationError("agent scores outside [0, 1]")
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise ValidationError("delta scores outside [0, 1]")
    return (
        table.p_tt * d * h
        + table.p_tf * d * (1.0 - h)
        + table.p_ft * (1.0 - d) * h
        + table.p_ff * (1.0 - d) * (1.0 - h)
    )


def parse_segments(
    prob: np.ndarray, threshold: float, t_min: int, t_max: int
) -> list[InteractionSegment]:
    """Maximal runs with prob >= threshold, gated by length in [t_min, t_max].

    Runs longer than t_max are dropped, not split.
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    if t_min < 1 or t_max < t_min:
        raise ValidationError(f"need 1 <= t_min <= t_max, got {t_min}, {t_max}")
    p = np.asarray(prob, dtype=float)
    active = p >= threshold
    segments = []
    start = None
    for t, flag in enumerate(active):
        if flag and start is None:
            start = t
        elif not flag and start is not None:
            if t_min <= t - start <= t_max:
                segments.append(InteractionSegment(start, t))
            start = None
    if start is not None and t_min <= p.size - start <= t_max:
        segments.append(InteractionSegment(start, int(p.size)))
    return segments


@dataclass(frozen=True, eq=False)
class SequenceScores:
    """Per-frame evidence series and the parsed segments."""

    agent_raw: np.ndarray
    delta_raw: np.ndarray
    agent: np.ndarray
    delta: np.ndarray
    prob: np.ndarray
    segments: list[InteractionSegment] = field(default_factory=list)
    coverage_ok: np.ndarray | None = None


def segment_sequence(
    depths: np.ndarray,
    masks: np.ndarray,
    poses: list[RigidTransform],
    intrinsics: CameraIntrinsics,
    *,
    s_h: int = 6,
    tau: float = 0.05,
    kappa: int = 11,
    table: FusionTable = FusionTable(),
    threshold: float = 0.5,
    t_min: int = 5,
    t_max: int = 1800,
    percentile: float = 99.0,
) -> SequenceScores:
    """Run the full per-sequence segmentation pipeline.

    ``depths`` is (T, H, W) with 0 marking invalid pixels, ``masks`` is
    (T, H, W) boolean. The first ``s_h`` frames have no lookback and carry a
    zero disparity ratio. Agent-mask pixels are excluded from the disparity
    statistics on both ends of the warp.
    """
    depths = np.asarray(depths, dtype=float)
    masks = np.asarray(masks, dtype=bool)
    if depths.ndim != 3 or masks.shape != depths.shape:
        raise ShapeError(
            f"need matching (T, H, W) stacks, got {depths.shape} and {masks.shape}"
        )
    n = depths.shape[0]
    if len(poses) != n:
        raise ShapeError(f"got {len(poses)} poses for {n} frames")
    if s_h < 1:
        raise ValidationError(f"s_h must be >= 1, got {s_h}")

    agent_raw = np.array([agent_ratio(masks[t]) for t in range(n)])
    delta_raw = np.zeros(n)
    coverage = np.ones(n, dtype=bool)
    for t in range(s_h, n):
        prev = DepthFrame(depths[t - s_h], poses[t - s_h], t - s_h)
        warped = warp_depth(
            prev, poses[t], intrinsics, edge_thresh=tau, prev_mask=masks[t - s_h]
        )
        # Discontinuity pixels in the current frame measure subpixel
        # rounding at silhouettes, not motion, so they sit out too. The
        # wider window absorbs splats that parallax pushed past the
        # source-side band.
        exclude = masks[t] | depth_edges(depths[t], tau, size=5)
        _, ratio, ok = depth_disparity(depths[t], warped, tau, exclude=exclude)
        delta_raw[t] = ratio
        coverage[t] = ok

    agent = median_filter_series(normalize_series(agent_raw, percentile), kappa)
    delta = median_filter_series(normalize_series(delta_raw, percentile), kappa)
    prob = fuse(agent, delta, table)
    segments = parse_segments(prob, threshold, t_min, t_max)
    return SequenceScores(
        agent_raw=agent_raw,
        delta_raw=delta_raw,
        agent=agent,
        delta=delta,
        prob=prob,
        segments=segments,
        coverage_ok=coverage,
    )
