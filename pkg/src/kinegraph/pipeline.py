"""End-to-end orchestration: bundle in, scene graph and metric report out.

Each stage is a pure function of (bundle, config, upstream artifact), and
the staged file formats round-trip exactly, so running stages one at a
time through their JSON artifacts produces byte-identical results to the
single-shot run. Thread counts change wall time only, never output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bundle as bundle_io
from .bundle import BundleObject, SceneBundle
from .config import PipelineConfig
from .errors import (
    ConvergenceError,
    SchemaVersionError,
    UnmatchedCostError,
    ValidationError,
)
from .estimator import (
    _opening_direction,
    cosine_prior,
    estimate_twist,
    infer_mode,
    max_open_frame,
    sample_secants,
)
from .graph import (
    Child,
    GraphArticulation,
    Match,
    MatchProblem,
    ObjectNode,
    SceneGraph,
    aabb_iou,
    classify_containment,
    hull_mask,
    knn_candidates,
    match_cost,
    solve_bip,
)
from .metrics import (
    MetricReport,
    axis_angle_error,
    axis_position_error,
    child_metrics,
    iou_1d,
    part_segmentation_metrics,
    segment_matching,
    type_metrics,
)
from .se3 import JointKind, ScrewAxis, Twist, exp_map, project
from .segmenter import FusionTable, InteractionSegment, segment_sequence
from .tracks import (
    PointTracks2D,
    PointTracks3D,
    TrackLabel,
    cluster_tracks,
    lift_tracks,
    smooth_tracks,
    split_static_dynamic,
)

SEGMENTS_VERSION = 1
ARTICULATIONS_VERSION = 1


def parallel_map(fn, items, threads: int = 1) -> list:
    """Ordered map over items; the thread count never changes the result."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(eq=False)
class ArticulationRecord:
    """One estimated articulation plus the bookkeeping matching needs."""

    id: int
    segment: tuple[int, int]
    twist: Twist
    kind: JointKind
    axis: ScrewAxis
    thetas: np.ndarray
    mode: str | None
    mode_consistent: bool | None
    residual_rms: float
    query_point: np.ndarray  # mean visible cluster position, world
    track_ids: np.ndarray  # bundle track columns in the moving cluster


def _fusion_table(cfg: PipelineConfig) -> FusionTable:
    return FusionTable(p_tt=cfg.p_tt, p_tf=cfg.p_tf, p_ft=cfg.p_ft, p_ff=cfg.p_ff)


def segment_scene(bundle: SceneBundle, cfg: PipelineConfig) -> list[InteractionSegment]:
    scores = segment_sequence(
        bundle.depths(),
        bundle.agent_masks(),
        bundle.poses,
        bundle.intrinsics,
        s_h=cfg.s_h,
        tau=cfg.tau,
        kappa=cfg.kappa,
        table=_fusion_table(cfg),
        threshold=cfg.threshold,
        t_min=cfg.t_min,
        t_max=cfg.t_max,
        percentile=cfg.percentile,
    )
    return scores.segments


def ingest_tracks(
    bundle: SceneBundle, cfg: PipelineConfig
) -> tuple[PointTracks2D, PointTracks3D]:
    """Budget-capped 2D tracks and their depth-lifted 3D counterparts."""
    tracks2d = bundle.tracks2d
    if tracks2d.n_tracks > cfg.f_max:
        tracks2d = PointTracks2D(
            tracks2d.positions[:, : cfg.f_max], tracks2d.visibility[:, : cfg.f_max]
        )
    tracks3d = lift_tracks(
        tracks2d,
        bundle.depths(),
        bundle.poses,
        bundle.intrinsics,
        max_spread=cfg.max_spread,
    )
    return tracks2d, tracks3d


def _hint_for(hints, t_start: int, t_end: int) -> str | None:
    """Mode hint with maximum time overlap with the segment, if any."""
    if not hints:
        return None
    best, best_overlap = None, 0
    for h in hints:
        overlap = min(t_end, int(h["t_end"])) - max(t_start, int(h["t_start"]))
        if overlap > best_overlap:
            best, best_overlap = h["mode"], overlap
    return best


def _segment_labels(window: PointTracks3D, cfg: PipelineConfig):
    return split_static_dynamic(
        window, motion_thresh=cfg.min_track_len, jump_thresh=cfg.jump_thresh
    )


def estimate_segments(
    bundle: SceneBundle,
    segments: list[InteractionSegment],
    cfg: PipelineConfig,
    tracks3d: PointTracks3D | None = None,
) -> list[ArticulationRecord]:
    """One screw-motion estimate per interaction segment.

    The cosine prior reads the raw cluster trajectories; only the
    optimizer sees the smoothed ones (smoothing biases chord directions
    near turning points, which is exactly what the prior keys on). The
    regularized smoothed fit settles the joint kind and the solution
    basin; the reported parameters come from a pure data refit on the raw
    tracks with that kind held fixed. The refit exists for two reasons:
    the smoother's edge windows clip the first and last frames of motion,
    and the penalty terms pull the regularized minimum away from the data
    minimum (visibly shrinking the recovered configuration range), so the
    estimate that served selection is not the one worth reporting.
    """
    if tracks3d is None:
        _, tracks3d = ingest_tracks(bundle, cfg)
    records = []
    for i, seg in enumerate(segments):
        s, e = seg.t_start, seg.t_end
        window = tracks3d.time_slice(s, e)
        labels = _segment_labels(window, cfg)
        dyn = labels.indices(TrackLabel.DYNAMIC)
        cluster_local = cluster_tracks(
            window.subset(dyn),
            eps=cfg.eps,
            min_pts=cfg.min_pts,
            min_joint_frac=cfg.min_joint_frac,
        )
        track_ids = dyn[cluster_local]
        cluster_raw = window.subset(track_ids)
        prior = cosine_prior(
            sample_secants(
                cluster_raw, stride=cfg.secant_stride, min_norm=cfg.min_secant_norm
            ),
            eta_star=cfg.eta_star,
            k=cfg.prior_gain,
        )
        coarse = estimate_twist(
            smooth_tracks(cluster_raw, cfg.smooth_window),
            prior,
            cfg.alpha,
            max_iters=cfg.max_iters,
            rel_tol=cfg.rel_tol,
            pitch_cutoff=cfg.pitch_cutoff,
        )
        try:
            est = estimate_twist(
                cluster_raw,
                prior,
                0.0,
                max_iters=cfg.max_iters,
                rel_tol=cfg.rel_tol,
                pitch_cutoff=cfg.pitch_cutoff,
                warm_start=coarse,
                kind=coarse.kind,
            )
        except ConvergenceError as err:
            # the refit only ever improves on the warm start as measured
            # on the raw data, so a stalled refit still beats discarding it
            est = err.best
        token = infer_mode(est.thetas, _hint_for(bundle.hints, s, e))
        query = cluster_raw.positions[cluster_raw.visibility].mean(axis=0)
        records.append(
            ArticulationRecord(
                id=i,
                segment=(s, e),
                twist=est.twist,
                kind=est.kind,
                axis=est.axis,
                thetas=est.thetas,
                mode=token.value.value,
                mode_consistent=token.consistent,
                residual_rms=est.residual_rms,
                query_point=query,
                track_ids=track_ids,
            )
        )
    return records


def _bundle_objects(bundle: SceneBundle) -> list[ObjectNode]:
    nodes = []
    for obj in bundle.objects:
        nodes.append(
            ObjectNode(
                id=obj.name,
                points=obj.points,
                masks=[
                    (obj.closed_frame, obj.mask_closed),
                    (obj.open_frame, obj.mask_open),
                ],
            )
        )
    return nodes


def _theta_extremes(record: ArticulationRecord) -> tuple[float, float]:
    """(most-open, most-closed) configuration values of a segment."""
    mode = record.mode if record.mode is not None else "UNKNOWN"
    open_theta = float(record.thetas[max_open_frame(record.thetas, mode)])
    sign = _opening_direction(record.thetas, mode)
    closed_theta = float(record.thetas[int(np.argmin(sign * record.thetas))])
    return open_theta, closed_theta


def _part_mask(
    record: ArticulationRecord,
    theta: float,
    obj: ObjectNode,
    bundle: SceneBundle,
    frame: int,
) -> np.ndarray:
    """Amodal silhouette of the matched part replayed to a configuration."""
    moved = exp_map(record.twist, theta).apply(obj.points)
    uvz, valid = project(moved, bundle.intrinsics, bundle.poses[frame])
    return hull_mask(
        uvz[valid][:, :2], bundle.intrinsics.width, bundle.intrinsics.height
    )


def build_graph(
    bundle: SceneBundle,
    records: list[ArticulationRecord],
    cfg: PipelineConfig,
    tracks: tuple[PointTracks2D, PointTracks3D] | None = None,
) -> SceneGraph:
    """Match articulations to objects, then classify contained children.

    Articulations with no evaluable candidate (every cost infinite) are
    dropped before the solve; the graph only carries matched ones.
    """
    objects = _bundle_objects(bundle)
    if not records:
        for node in objects:
            node.isolated = True
        return SceneGraph(objects=objects, articulations=[], matches=[], children=[])

    if tracks is None:
        tracks = ingest_tracks(bundle, cfg)
    tracks2d, tracks3d = tracks

    def cost_row(record: ArticulationRecord) -> np.ndarray:
        s, e = record.segment
        labels = _segment_labels(tracks3d.time_slice(s, e), cfg).labels
        frames = np.arange(s, e)
        row = np.full(len(objects), np.inf)
        for j in knn_candidates(record.query_point, objects, cfg.knn_k):
            try:
                row[j] = match_cost(
                    record.twist,
                    record.thetas,
                    frames,
                    tracks2d,
                    labels,
                    objects[int(j)],
                    bundle.poses,
                    bundle.intrinsics,
                )
            except UnmatchedCostError:
                pass
        return row

    rows = parallel_map(cost_row, records, cfg.threads)
    kept = [i for i, row in enumerate(rows) if np.any(np.isfinite(row))]
    if not kept:
        for node in objects:
            node.isolated = True
        return SceneGraph(objects=objects, articulations=[], matches=[], children=[])

    p = np.stack([rows[i] for i in kept])
    n_obj = len(objects)
    q = np.zeros((n_obj, n_obj))
    for a in range(n_obj):
        for b in range(a + 1, n_obj):
            q[a, b] = q[b, a] = aabb_iou(objects[a].aabb, objects[b].aabb)
    assign, _ = solve_bip(MatchProblem(p=p, q=q, lam=cfg.lam))

    articulations = []
    matches = []
    by_name: dict[str, BundleObject] = {o.name: o for o in bundle.objects}
    matched_names = set()
    for row_idx, i in enumerate(kept):
        rec = records[i]
        j = int(assign[row_idx])
        articulations.append(
            GraphArticulation(
                id=rec.id,
                segment=rec.segment,
                twist=rec.twist,
                kind=rec.kind,
                axis=rec.axis,
                thetas=rec.thetas,
                mode=rec.mode,
                residual_rms=rec.residual_rms,
            )
        )
        matches.append(
            Match(articulation=rec.id, object=objects[j].id, cost=float(p[row_idx, j]))
        )
        matched_names.add(objects[j].id)

    children = []
    child_names = set()
    for row_idx, i in enumerate(kept):
        rec = records[i]
        parent = objects[int(assign[row_idx])]
        open_theta, closed_theta = _theta_extremes(rec)
        for node in objects:
            if node.id in matched_names or node.id in child_names:
                continue
            source = by_name[node.id]
            frame = source.open_frame
            relation = classify_containment(
                source.mask_open,
                _part_mask(rec, open_theta, parent, bundle, frame),
                _part_mask(rec, closed_theta, parent, bundle, frame),
                thresh=cfg.contain_thresh,
            )
            if relation != "NONE":
                children.append(
                    Child(parent=parent.id, child=node.id, relation=relation)
                )
                child_names.add(node.id)

    for node in objects:
        node.isolated = node.id not in matched_names and node.id not in child_names
    return SceneGraph(
        objects=objects,
        articulations=articulations,
        matches=matches,
        children=children,
    )


def _mean(values, default: float = 0.0) -> float:
    values = list(values)
    if not values:
        return default
    return float(np.mean(values))


def evaluate(
    bundle: SceneBundle,
    segments: list[InteractionSegment],
    graph: SceneGraph,
    cfg: PipelineConfig,
) -> MetricReport:
    """Score predictions against the bundle's ground truth."""
    gt = bundle.gt
    if gt is None:
        raise ValidationError("bundle carries no ground truth to evaluate against")

    pred_iv = [(s.t_start, s.t_end) for s in segments]
    gt_iv = [(g["t_start"], g["t_end"]) for g in gt["segments"]]
    seg_score = segment_matching(pred_iv, gt_iv, fps=bundle.fps)

    pred_bin = np.zeros(bundle.n_frames, dtype=bool)
    for s, e in pred_iv:
        pred_bin[s:e] = True
    gt_bin = np.zeros(bundle.n_frames, dtype=bool)
    for s, e in gt_iv:
        gt_bin[s:e] = True
    scene_iou = iou_1d(pred_bin, gt_bin)

    art_by_segment = {a.segment: a for a in graph.articulations}
    gt_art_by_object = {a["object"]: a for a in gt["articulations"]}
    pairs = []
    for pi, gi, _ in seg_score.matches:
        pred_art = art_by_segment.get(tuple(pred_iv[pi]))
        gt_art = gt_art_by_object.get(gt["segments"][gi]["object"])
        if pred_art is not None and gt_art is not None:
            pairs.append((pred_art, gt_art))

    rows = []
    angle_errors = []
    position_errors = []
    theta_errors = []
    pred_kinds = []
    gt_kinds = []
    for pred_art, gt_art in pairs:
        gt_kind = JointKind(gt_art["kind"])
        direction = np.asarray(gt_art["axis"]["direction"], dtype=float)
        gt_axis = ScrewAxis(
            gt_kind,
            direction / np.linalg.norm(direction),
            np.asarray(gt_art["axis"]["point"], dtype=float),
        )
        angle = axis_angle_error(pred_art.axis, gt_axis)
        position = axis_position_error(pred_art.axis, gt_axis)
        gt_peak = float(np.max(np.abs(np.asarray(gt_art["thetas"], dtype=float))))
        pred_peak = float(np.max(np.abs(pred_art.thetas)))
        theta_err = abs(pred_peak - gt_peak) / max(gt_peak, 1e-12)
        angle_errors.append(angle)
        theta_errors.append(theta_err)
        if gt_kind is JointKind.REVOLUTE:
            position_errors.append(position)
        pred_kinds.append(pred_art.kind)
        gt_kinds.append(gt_kind)
        rows.append(
            {
                "articulation": pred_art.id,
                "gt_object": gt_art["object"],
                "kind": pred_art.kind.value,
                "gt_kind": gt_kind.value,
                "axis_err_deg": angle,
                "axis_pos_err_m": position,
                "theta_rel_err": theta_err,
            }
        )

    type_acc, pris_recall, rev_recall = type_metrics(pred_kinds, gt_kinds)

    pred_boxes = [graph.object_by_id(m.object).aabb for m in graph.matches]
    points_by_name = {o.name: o.points for o in bundle.objects}
    gt_boxes = []
    for art in gt["articulations"]:
        pts = points_by_name[art["object"]]
        gt_boxes.append(np.stack([pts.min(axis=0), pts.max(axis=0)]))
    part_score = part_segmentation_metrics(pred_boxes, gt_boxes)

    pred_children = [
        (graph.object_by_id(c.child).points, c.relation) for c in graph.children
    ]
    gt_children = [
        (points_by_name[c["child"]], c["relation"]) for c in gt["children"]
    ]
    child_score = child_metrics(pred_children, gt_children, voxel=cfg.voxel)

    scalars = {
        "seg_precision": seg_score.precision,
        "seg_recall": seg_score.recall,
        "seg_mean_iou": seg_score.mean_iou,
        "seg_onset_err_s": seg_score.onset_err_s,
        "seg_offset_err_s": seg_score.offset_err_s,
        "scene_iou": scene_iou,
        "type_accuracy": type_acc,
        "prismatic_recall": pris_recall,
        "revolute_recall": rev_recall,
        "mean_axis_err_deg": _mean(angle_errors),
        "mean_axis_pos_err_m": _mean(position_errors),
        "mean_theta_rel_err": _mean(theta_errors),
        "part_mean_iou": part_score.mean_iou,
        "part_recall_025": part_score.recall[0.25],
        "part_recall_050": part_score.recall[0.50],
        "part_recall_075": part_score.recall[0.75],
        "child_mean_iou": child_score.mean_iou,
        "child_recall_025": child_score.recall_at_025,
        "child_relation_accuracy": child_score.relation_accuracy,
        "n_pred_segments": float(len(pred_iv)),
        "n_gt_segments": float(len(gt_iv)),
        "n_matched_articulations": float(len(pairs)),
    }
    return MetricReport(scalars=scalars, rows=rows)


def write_segments(path: str, segments: list[InteractionSegment], fps: float) -> None:
    bundle_io.write_json(
        path,
        {
            "version": SEGMENTS_VERSION,
            "fps": fps,
            "segments": [
                {"t_start": s.t_start, "t_end": s.t_end} for s in segments
            ],
        },
    )


def read_segments(path: str) -> list[InteractionSegment]:
    payload = bundle_io.read_json(path)
    version = payload.get("version")
    if version != SEGMENTS_VERSION:
        raise SchemaVersionError(
            f"segments version {version!r} unsupported (expected {SEGMENTS_VERSION})"
        )
    return [
        InteractionSegment(int(s["t_start"]), int(s["t_end"]))
        for s in payload["segments"]
    ]


def write_articulations(path: str, records: list[ArticulationRecord]) -> None:
    entries = []
    for rec in records:
        entries.append(
            {
                "id": rec.id,
                "segment": [rec.segment[0], rec.segment[1]],
                "twist": {
                    "omega": rec.twist.omega.tolist(),
                    "vel": rec.twist.vel.tolist(),
                },
                "kind": rec.kind.value,
                "axis": {
                    "direction": rec.axis.direction.tolist(),
                    "point": rec.axis.point.tolist(),
                },
                "thetas": rec.thetas.tolist(),
                "mode": rec.mode,
                "mode_consistent": rec.mode_consistent,
                "residual_rms": float(rec.residual_rms),
                "query_point": rec.query_point.tolist(),
                "track_ids": rec.track_ids.tolist(),
            }
        )
    bundle_io.write_json(
        path, {"version": ARTICULATIONS_VERSION, "articulations": entries}
    )


def read_articulations(path: str) -> list[ArticulationRecord]:
    payload = bundle_io.read_json(path)
    version = payload.get("version")
    if version != ARTICULATIONS_VERSION:
        raise SchemaVersionError(
            f"articulations version {version!r} unsupported "
            f"(expected {ARTICULATIONS_VERSION})"
        )
    records = []
    for entry in payload["articulations"]:
        kind = JointKind(entry["kind"])
        records.append(
            ArticulationRecord(
                id=int(entry["id"]),
                segment=(int(entry["segment"][0]), int(entry["segment"][1])),
                twist=Twist(
                    np.asarray(entry["twist"]["omega"], dtype=float),
                    np.asarray(entry["twist"]["vel"], dtype=float),
                ),
                kind=kind,
                axis=ScrewAxis(
                    kind,
                    np.asarray(entry["axis"]["direction"], dtype=float),
                    np.asarray(entry["axis"]["point"], dtype=float),
                ),
                thetas=np.asarray(entry["thetas"], dtype=float),
                mode=entry["mode"],
                mode_consistent=entry["mode_consistent"],
                residual_rms=float(entry["residual_rms"]),
                query_point=np.asarray(entry["query_point"], dtype=float),
                track_ids=np.asarray(entry["track_ids"], dtype=int),
            )
        )
    return records


@dataclass(eq=False)
class PipelineResult:
    segments: list[InteractionSegment]
    records: list[ArticulationRecord]
    graph: SceneGraph
    report: MetricReport | None


def run_pipeline(bundle: SceneBundle, cfg: PipelineConfig) -> PipelineResult:
    """segment -> estimate -> match, plus evaluation when ground truth exists."""
    segments = segment_scene(bundle, cfg)
    tracks = ingest_tracks(bundle, cfg)
    records = estimate_segments(bundle, segments, cfg, tracks3d=tracks[1])
    graph = build_graph(bundle, records, cfg, tracks=tracks)
    report = None
    if bundle.gt is not None:
        report = evaluate(bundle, segments, graph, cfg)
    return PipelineResult(segments, records, graph, report)
