"""Evaluation metrics: axis geometry errors, temporal segmentation scores,
3D part and child-object overlap, and the assignment solver behind them.

Everything here is pure and deterministic. Distances are meters, angles
degrees, temporal errors seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .se3 import JointKind, ScrewAxis

PARALLEL_EPS = 1e-4
CHILD_VOXEL = 0.015
PART_RECALL_THRESHOLDS = (0.25, 0.50, 0.75)
SEGMENT_IOU_GATE = 0.5


def axis_angle_error(pred: ScrewAxis, gt: ScrewAxis) -> float:
    """Angle between axis directions in degrees, folded to [0, 90].

    The sign of an axis direction carries no physical meaning here (a door
    hinge pointing up or down is the same hinge), so antiparallel
    directions score zero.
    """
    c = abs(float(np.dot(pred.direction, gt.direction)))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def axis_position_error(
    pred: ScrewAxis, gt: ScrewAxis, eps: float = PARALLEL_EPS
) -> float:
    """Minimum distance in meters between the two axis lines.

    Non-parallel lines use the mutual-perpendicular projection; parallel
    ones (cross-product norm <= eps) the point-to-line distance. Either
    way the support points may slide along their own lines freely.
    """
    n = np.cross(pred.direction, gt.direction)
    norm = np.linalg.norm(n)
    diff = pred.point - gt.point
    if norm > eps:
        return float(abs(np.dot(diff, n)) / norm)
    return float(np.linalg.norm(np.cross(diff, gt.direction)))


def type_metrics(preds, gts) -> tuple[float, float, float]:
    """(accuracy, prismatic recall, revolute recall) over aligned kind lists.

    A recall with no ground-truth instances of its kind is vacuously 1.
    Empty inputs give (1, 1, 1) by the same convention.
    """
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")

    def _recall(kind):
        idx = [i for i, g in enumerate(gts) if g is kind]
        if not idx:
            return 1.0
        return sum(preds[i] is kind for i in idx) / len(idx)

    if not gts:
        return (1.0, 1.0, 1.0)
    acc = sum(p is g for p, g in zip(preds, gts)) / len(gts)
    return (
        float(acc),
        float(_recall(JointKind.PRISMATIC)),
        float(_recall(JointKind.REVOLUTE)),
    )


def iou_1d(pred, gt) -> float:
    """Jaccard index of two equal-length binary sequences; empty/empty is 0."""
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape or p.ndim != 1:
        raise ShapeError(f"sequences must be equal-length 1D, got {p.shape}, {g.shape}")
    union = int((p | g).sum())
    if union == 0:
        return 0.0
    return float((p & g).sum() / union)


def _interval_iou(a, b) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0:
        return 0.0
    return inter / union


def hungarian(cost: np.ndarray):
    """Minimum-cost injective assignment of rows to columns, O(n^3).

    Returns ``(row_ind, col_ind)``; when rows outnumber columns the
    cheapest row subset is covered instead. For square-or-wide matrices,
    equal-cost optima are canonicalized so the column sequence (read in
    row order) is lexicographically smallest.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be 2D, got {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValidationError("cost matrix must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    if n > m:
        cols, rows = hungarian(cost.T)
        order = np.argsort(rows, kind="stable")
        return rows[order], cols[order]

    # Shortest augmenting paths with dual potentials (1-indexed buffers;
    # slot 0 is the virtual free column).
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    col_of = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            col_of[owner[j] - 1] = j - 1

    # Canonicalize ties: cost-neutral column take-overs and pairwise swaps,
    # accepted only when they shrink the sequence lexicographically.
    used_cols = set(col_of.tolist())
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for c in range(col_of[i]):
                if c not in used_cols:
                    if cost[i, c] - cost[i, col_of[i]] == 0.0:
                        used_cols.discard(col_of[i])
                        used_cols.add(c)
                        col_of[i] = c
                        changed = True
                        break
                else:
                    r = int(np.nonzero(col_of == c)[0][0])
                    if r <= i:
                        continue
                    delta = (
                        cost[i, c] + cost[r, col_of[i]]
                        - cost[i, col_of[i]] - cost[r, c]
                    )
                    if delta == 0.0:
                        col_of[i], col_of[r] = c, col_of[i]
                        changed = True
                        break
            if changed:
                break
    return np.arange(n), col_of


@dataclass(frozen=True)
class SegmentScore:
    precision: float
    recall: float
    mean_iou: float
    onset_err_s: float
    offset_err_s: float
    matches: tuple = ()


def segment_matching(preds, gts, fps: float) -> SegmentScore:
    """Score predicted against ground-truth intervals (half-open frames).

    Pairing maximizes total interval IoU; pairs under 0.5 are discarded.
    Precision counts matched predictions, recall matched ground truths,
    and the onset/offset columns are mean absolute endpoint errors of the
    matched pairs in seconds. No predictions means precision 0 by fiat.
    """
    preds = [(int(s), int(e)) for s, e in preds]
    gts = [(int(s), int(e)) for s, e in gts]
    if fps <= 0:
        raise ValidationError(f"fps must be positive, got {fps}")
    if not preds or not gts:
        return SegmentScore(0.0, 0.0, 0.0, 0.0, 0.0, ())
    iou = np.array([[_interval_iou(p, g) for g in gts] for p in preds])
    rows, cols = hungarian(1.0 - iou)
    matches = tuple(
        (int(r), int(c), float(iou[r, c]))
        for r, c in zip(rows, cols)
        if iou[r, c] >= SEGMENT_IOU_GATE
    )
    if not matches:
        return SegmentScore(0.0, 0.0, 0.0, 0.0, 0.0, ())
    onset = np.mean([abs(preds[r][0] - gts[c][0]) for r, c, _ in matches]) / fps
    offset = np.mean([abs(preds[r][1] - gts[c][1]) for r, c, _ in matches]) / fps
    return SegmentScore(
        precision=len(matches) / len(preds),
        recall=len(matches) / len(gts),
        mean_iou=float(np.mean([m[2] for m in matches])),
        onset_err_s=float(onset),
        offset_err_s=float(offset),
        matches=matches,
    )


def aabb_iou_3d(a: np.ndarray, b: np.ndarray) -> float:
    """Volume IoU of (2, 3) min/max boxes; degenerate union scores 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (2, 3) or b.shape != (2, 3):
        raise ShapeError(f"boxes must be (2, 3), got {a.shape} and {b.shape}")
    inter = np.maximum(0.0, np.minimum(a[1], b[1]) - np.maximum(a[0], b[0])).prod()
    union = (
        np.maximum(0.0, a[1] - a[0]).prod()
        + np.maximum(0.0, b[1] - b[0]).prod()
        - inter
    )
    if union <= 0.0:
        return 0.0
    return float(inter / union)


@dataclass(frozen=True)
class PartScore:
    mean_iou: float
    recall: dict


def part_segmentation_metrics(pred_boxes, gt_boxes) -> PartScore:
    """3D box overlap of predicted parts against ground truth.

    Boxes pair up by maximizing total IoU; mean IoU averages over ground
    truths (unpaired ones count 0) and recall@t is the fraction of ground
    truths paired above t (strictly).
    """
    pred_boxes = [np.asarray(b, dtype=float) for b in pred_boxes]
    gt_boxes = [np.asarray(b, dtype=float) for b in gt_boxes]
    zeros = {t: 0.0 for t in PART_RECALL_THRESHOLDS}
    if not gt_boxes:
        return PartScore(0.0, zeros)
    if not pred_boxes:
        return PartScore(0.0, zeros)
    iou = np.array([[aabb_iou_3d(p, g) for g in gt_boxes] for p in pred_boxes])
    rows, cols = hungarian(1.0 - iou)
    matched = {int(c): float(iou[r, c]) for r, c in zip(rows, cols)}
    per_gt = np.array([matched.get(j, 0.0) for j in range(len(gt_boxes))])
    recall = {
        t: float((per_gt > t).sum() / len(gt_boxes)) for t in PART_RECALL_THRESHOLDS
    }
    return PartScore(float(per_gt.mean()), recall)


def voxelize(points: np.ndarray, voxel: float = CHILD_VOXEL) -> set:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be (N, 3), got {pts.shape}")
    cells = np.floor(pts / voxel).astype(np.int64)
    return set(map(tuple, cells))


def voxel_iou(a: np.ndarray, b: np.ndarray, voxel: float = CHILD_VOXEL) -> float:
    va = voxelize(a, voxel)
    vb = voxelize(b, voxel)
    union = len(va | vb)
    if union == 0:
        return 0.0
    return len(va & vb) / union


@dataclass(frozen=True)
class ChildScore:
    mean_iou: float
    recall_at_025: float
    relation_accuracy: float


def child_metrics(pred_children, gt_children, voxel: float = CHILD_VOXEL) -> ChildScore:
    """Contained-object scores over (points, relation) lists.

    Each predicted child greedily claims its highest voxel-IoU ground
    truth. Mean IoU averages those maxima over predictions (0 with no
    predictions); recall@0.25 is the fraction of ground truths claimed
    above 0.25 (vacuously 1 with no ground truths); relation accuracy is
    scored on the claimed pairs above 0.25 (vacuously 1 when none).
    """
    if not gt_children:
        return ChildScore(0.0, 1.0, 1.0)
    if not pred_children:
        return ChildScore(0.0, 0.0, 1.0)
    gt_vox = [voxelize(pts, voxel) for pts, _ in gt_children]
    best_iou = []
    claimed = set()
    correct = 0
    gated = 0
    for pts, rel in pred_children:
        pv = voxelize(pts, voxel)
        ious = []
        for gv in gt_vox:
            union = len(pv | gv)
            ious.append(len(pv & gv) / union if union else 0.0)
        j = int(np.argmax(ious))
        best = float(ious[j])
        best_iou.append(best)
        if best > 0.25:
            claimed.add(j)
            gated += 1
            if rel == gt_children[j][1]:
                correct += 1
    rel_acc = correct / gated if gated else 1.0
    return ChildScore(
        float(np.mean(best_iou)),
        float(len(claimed) / len(gt_children)),
        float(rel_acc),
    )


RATIO_TOKENS = ("iou", "recall", "accuracy", "precision", "frac")
DISTANCE_TOKENS = ("err", "dist", "_m", "_deg", "_s")


@dataclass
class MetricReport:
    """Named scalar metrics plus per-instance breakdown rows.

    Construction enforces the reporting contract: ratio-like metrics live
    in [0, 1] and distance/error-like metrics are non-negative.
    """

    scalars: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        for name, value in self.scalars.items():
            v = float(value)
            if not np.isfinite(v):
                raise ValidationError(f"metric {name!r} is not finite: {value}")
            low = name.lower()
            if any(tok in low for tok in RATIO_TOKENS):
                if not (0.0 <= v <= 1.0):
                    raise ValidationError(f"ratio metric {name!r} outside [0, 1]: {v}")
            elif any(low.endswith(tok) or tok in low for tok in DISTANCE_TOKENS):
                if v < 0.0:
                    raise ValidationError(f"distance metric {name!r} negative: {v}")
            self.scalars[name] = v

    def to_dict(self) -> dict:
        return {"scalars": dict(self.scalars), "rows": [dict(r) for r in self.rows]}

    def render_table(self) -> str:
        lines = []
        if self.scalars:
            width = max(len(k) for k in self.scalars)
            for name in sorted(self.scalars):
                lines.append(f"{name:<{width}}  {self.scalars[name]:.4f}")
        if self.rows:
            keys = []
            for row in self.rows:
                for k in row:
                    if k not in keys:
                        keys.append(k)
            cells = [[_fmt(row.get(k, "")) for k in keys] for row in self.rows]
            widths = [
                max(len(keys[j]), max((len(c[j]) for c in cells), default=0))
                for j in range(len(keys))
            ]
            lines.append("")
            lines.append("  ".join(k.ljust(w) for k, w in zip(keys, widths)))
            for c in cells:
                lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
