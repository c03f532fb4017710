"""Scene-graph assembly: object nodes, articulation-object matching,
containment relations, and serialization.

Matching scores an articulation against a candidate object by replaying
the object's point set under the estimated screw motion and asking, frame
by frame, whether the dynamic 2D keypoints fall inside the replayed
silhouette and the static ones stay outside. The joint assignment over all
articulations is a small binary program solved exactly by depth-first
branch and bound; a separate greedy solver exists as a sanity baseline
(its objective can never beat the exact one).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import bundle as bundle_io
from .errors import (
    InfeasibleError,
    SchemaVersionError,
    ShapeError,
    UnmatchedCostError,
    ValidationError,
)
from .se3 import (
    CameraIntrinsics,
    JointKind,
    RigidTransform,
    ScrewAxis,
    Twist,
    exp_map,
    project,
)
from .tracks import PointTracks2D, TrackLabel

GRAPH_VERSION = 1
GRAPH_POINTS_PATTERN = "graph_points_%03d.bin"

RELATIONS = ("ARTICULATED", "STATIC", "NONE")

# A replayed silhouette that collapses to (nearly) a line has no interior;
# membership then falls back to point-to-point distance in pixels.
FALLBACK_RADIUS_PX = 10.0
HULL_TOL = 1e-9


@dataclass(eq=False)
class ObjectNode:
    """Rigid object hypothesis: a world point set plus mask provenance."""

    id: str
    points: np.ndarray
    masks: list[tuple[int, np.ndarray]] = field(default_factory=list)
    isolated: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ShapeError(f"points must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"object {self.id} has non-finite points")
        self.points = pts

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def aabb(self) -> np.ndarray:
        """(2, 3) array of [min corner; max corner]."""
        return np.stack([self.points.min(axis=0), self.points.max(axis=0)])


@dataclass(eq=False)
class GraphArticulation:
    id: int
    segment: tuple[int, int]
    twist: Twist
    kind: JointKind
    axis: ScrewAxis
    thetas: np.ndarray  # one per segment frame
    mode: str | None = None
    residual_rms: float = 0.0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        s, e = self.segment
        if self.thetas.shape != (e - s,):
            raise ShapeError(
                f"articulation {self.id}: {self.thetas.shape[0]} thetas for "
                f"segment [{s}, {e})"
            )


@dataclass(eq=False)
class Match:
    articulation: int
    object: str
    cost: float


@dataclass(eq=False)
class Child:
    parent: str
    child: str
    relation: str

    def __post_init__(self):
        if self.relation not in ("ARTICULATED", "STATIC"):
            raise ValidationError(f"bad child relation {self.relation!r}")


@dataclass(eq=False)
class SceneGraph:
    objects: list[ObjectNode]
    articulations: list[GraphArticulation]
    matches: list[Match] = field(default_factory=list)
    children: list[Child] = field(default_factory=list)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValidationError("object ids must be unique")
        known = set(ids)
        art_ids = {a.id for a in self.articulations}
        matched_arts = [m.articulation for m in self.matches]
        matched_objs = [m.object for m in self.matches]
        if len(set(matched_arts)) != len(matched_arts):
            raise ValidationError("an articulation is matched more than once")
        unmatched = art_ids - set(matched_arts)
        if unmatched:
            raise ValidationError(
                f"articulations without an object: {sorted(unmatched)}"
            )
        if len(set(matched_objs)) != len(matched_objs):
            raise ValidationError("an object is matched more than once")
        for m in self.matches:
            if m.articulation not in art_ids:
                raise ValidationError(f"match names unknown articulation {m.articulation}")
            if m.object not in known:
                raise ValidationError(f"match names unknown object {m.object!r}")
        matched_obj_set = set(matched_objs)
        for c in self.children:
            if c.parent not in matched_obj_set:
                raise ValidationError(
                    f"child {c.child!r} hangs off unmatched parent {c.parent!r}"
                )
            if c.child not in known:
                raise ValidationError(f"unknown child object {c.child!r}")

    def object_by_id(self, object_id: str) -> ObjectNode:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)


def aabb_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Volume IoU of two (2, 3) axis-aligned boxes; 0 when the union is empty."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (2, 3) or b.shape != (2, 3):
        raise ShapeError(f"boxes must be (2, 3), got {a.shape} and {b.shape}")
    inter = np.maximum(
        0.0, np.minimum(a[1], b[1]) - np.maximum(a[0], b[0])
    ).prod()
    va = np.maximum(0.0, a[1] - a[0]).prod()
    vb = np.maximum(0.0, b[1] - b[0]).prod()
    union = va + vb - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)


def knn_candidates(query_point, objects: list[ObjectNode], k: int) -> np.ndarray:
    """Indices of the k objects whose centroids lie nearest the query.

    Ordered by distance; equidistant centroids keep ascending index order.
    """
    q = np.asarray(query_point, dtype=float)
    if q.shape != (3,):
        raise ShapeError(f"query point must be (3,), got {q.shape}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    dists = np.array([np.linalg.norm(obj.centroid - q) for obj in objects])
    order = np.argsort(dists, kind="stable")
    return order[: min(k, len(objects))]


def _hull_membership(replay_uv: np.ndarray, query_uv: np.ndarray) -> np.ndarray:
    """Inside test against the convex hull of replayed projections.

    A degenerate point set (all collinear, or fewer than 3 points) has no
    interior; membership falls back to nearest-replayed-point distance.
    """
    try:
        hull = ConvexHull(replay_uv)
    except (QhullError, ValueError):
        diff = query_uv[:, None, :] - replay_uv[None, :, :]
        return (
            np.sqrt((diff**2).sum(axis=2)).min(axis=1) <= FALLBACK_RADIUS_PX
        )
    eqs = hull.equations  # rows: a, b, offset; inside means a*u + b*v + offset <= 0
    vals = query_uv @ eqs[:, :2].T + eqs[:, 2]
    return np.all(vals <= HULL_TOL, axis=1)


def hull_mask(points_uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """Filled convex-hull raster of projected points over the pixel grid.

    Degenerate hulls (too few or collinear points) fall back to stamping a
    disk of the fallback radius around each point.
    """
    uv = np.asarray(points_uv, dtype=float)
    if uv.shape[0] == 0:
        return np.zeros((height, width), dtype=bool)
    grid_u, grid_v = np.meshgrid(np.arange(width), np.arange(height))
    try:
        hull = ConvexHull(uv)
    except (QhullError, ValueError):
        mask = np.zeros((height, width), dtype=bool)
        for u, v in uv:
            mask |= (grid_u - u) ** 2 + (grid_v - v) ** 2 <= FALLBACK_RADIUS_PX**2
        return mask
    eqs = hull.equations
    vals = (
        grid_u[..., None] * eqs[:, 0]
        + grid_v[..., None] * eqs[:, 1]
        + eqs[:, 2]
    )
    return np.all(vals <= HULL_TOL, axis=-1)


def match_cost(
    twist: Twist,
    thetas: np.ndarray,
    frames,
    tracks2d: PointTracks2D,
    labels,
    obj: ObjectNode,
    poses: list[RigidTransform],
    intrinsics: CameraIntrinsics,
) -> float:
    """Replay-agreement cost of pairing an articulation with an object.

    For each segment frame the object's points are displaced by
    exp(twist * theta) and projected; the score counts visible dynamic
    keypoints inside the replayed silhouette and visible static keypoints
    outside it. Cost = mean(2 - s) over evaluable frames, in [0, 2], lower
    is better. A frame is evaluable when the replay projects, at least one
    dynamic and one static keypoint are visible. With no evaluable frame
    the pairing is meaningless and ``UnmatchedCostError`` is raised.
    """
    thetas = np.asarray(thetas, dtype=float)
    frames = np.asarray(frames, dtype=int)
    if thetas.shape != frames.shape:
        raise ShapeError(
            f"{thetas.shape[0]} thetas for {frames.shape[0]} frames"
        )
    labels = np.asarray(labels, dtype=object)
    if labels.shape != (tracks2d.n_tracks,):
        raise ShapeError(
            f"{labels.shape} labels for {tracks2d.n_tracks} tracks"
        )
    dyn = np.array([l is TrackLabel.DYNAMIC for l in labels])
    stat = np.array([l is TrackLabel.STATIC for l in labels])

    scores = []
    for theta, t in zip(thetas, frames):
        moved = exp_map(twist, float(theta)).apply(obj.points)
        uvz, valid = project(moved, intrinsics, poses[t])
        replay_uv = uvz[valid][:, :2]
        if replay_uv.shape[0] == 0:
            continue
        vis = tracks2d.visibility[t]
        dyn_uv = tracks2d.positions[t][vis & dyn]
        stat_uv = tracks2d.positions[t][vis & stat]
        if dyn_uv.shape[0] == 0 or stat_uv.shape[0] == 0:
            continue
        frac_dyn_in = float(_hull_membership(replay_uv, dyn_uv).mean())
        frac_stat_out = float((~_hull_membership(replay_uv, stat_uv)).mean())
        scores.append(2.0 - (frac_dyn_in + frac_stat_out))
    if not scores:
        raise UnmatchedCostError(
            f"no evaluable frame for object {obj.id!r} in segment frames "
            f"[{frames.min()}, {frames.max()}]"
        )
    return float(np.mean(scores))


@dataclass(eq=False)
class MatchProblem:
    """Assignment of articulations (rows) to objects (columns).

    ``p`` holds pairing costs (+inf for non-candidates), ``q`` pairwise
    object-overlap penalties (AABB IoU; the diagonal is ignored), ``lam``
    the overlap weight. Objective, minimized over injective total
    assignments a: sum_i p[i, a(i)] + lam * sum_{j<k} q[j, k] z_j z_k
    where z marks objects in use.
    """

    p: np.ndarray
    q: np.ndarray
    lam: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.ndim != 2:
            raise ShapeError(f"p must be 2D, got {p.shape}")
        n_obj = p.shape[1]
        if q.shape != (n_obj, n_obj):
            raise ShapeError(f"q must be ({n_obj}, {n_obj}), got {q.shape}")
        finite = p[np.isfinite(p)]
        if finite.size and finite.min() < 0:
            raise ValidationError("p costs must be non-negative")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValidationError("q must be symmetric")
        if self.lam < 0:
            raise ValidationError(f"lam must be >= 0, got {self.lam}")
        self.p = p
        q = q.copy()
        np.fill_diagonal(q, 0.0)
        self.q = q


def _objective_of(problem: MatchProblem, assign) -> float:
    total = 0.0
    for i, j in enumerate(assign):
        total += problem.p[i, j]
    used = sorted(set(assign))
    for a in range(len(used)):
        for b in range(a + 1, len(used)):
            total += problem.lam * problem.q[used[a], used[b]]
    return float(total)


def solve_bip(problem: MatchProblem):
    """Exact assignment by depth-first branch and bound.

    Returns ``(assign, objective)`` with ``assign[i]`` the object column of
    articulation row i. The search enumerates candidates in ascending
    column order and only replaces the incumbent on strict improvement, so
    among equal-objective optima the lexicographically smallest assignment
    wins. The admissible bound (sum of remaining row minima; overlap terms
    are non-negative) makes pruning safe, and the incumbent is re-verified
    against a from-scratch objective before returning.
    """
    A, O = problem.p.shape
    if O < A:
        raise InfeasibleError(f"{A} articulations but only {O} objects")
    for i in range(A):
        if not np.any(np.isfinite(problem.p[i])):
            raise InfeasibleError(f"articulation row {i} has no finite-cost candidate")

    row_min = np.array(
        [problem.p[i][np.isfinite(problem.p[i])].min() for i in range(A)]
    )
    suffix_bound = np.concatenate([np.cumsum(row_min[::-1])[::-1], [0.0]])

    best_assign = None
    best_cost = np.inf
    assign = [-1] * A
    used: list[int] = []

    def descend(i: int, cost: float):
        nonlocal best_assign, best_cost
        if i == A:
            if cost < best_cost:
                best_cost = cost
                best_assign = list(assign)
            return
        if cost + suffix_bound[i] >= best_cost:
            return
        for j in range(O):
            pij = problem.p[i, j]
            if not np.isfinite(pij) or j in used:
                continue
            overlap = problem.lam * sum(problem.q[j, k] for k in used)
            step = pij + overlap
            if cost + step + suffix_bound[i + 1] >= best_cost:
                continue
            assign[i] = j
            used.append(j)
            descend(i + 1, cost + step)
            used.pop()
            assign[i] = -1

    descend(0, 0.0)
    if best_assign is None:
        raise InfeasibleError("no feasible assignment")

    # Certify: injective, total, and the incremental cost bookkeeping
    # agrees with a from-scratch evaluation.
    if len(set(best_assign)) != A or any(j < 0 for j in best_assign):
        raise InfeasibleError("search returned a non-injective assignment")
    check = _objective_of(problem, best_assign)
    if not np.isclose(check, best_cost, rtol=0, atol=1e-9):
        raise ValidationError(
            f"objective mismatch: incremental {best_cost}, recomputed {check}"
        )
    return np.asarray(best_assign, dtype=int), float(check)


def greedy_assign(problem: MatchProblem):
    """Row-by-row greedy baseline; objective is never below the exact one."""
    A, O = problem.p.shape
    if O < A:
        raise InfeasibleError(f"{A} articulations but only {O} objects")
    assign = []
    used: list[int] = []
    for i in range(A):
        best_j, best_step = -1, np.inf
        for j in range(O):
            if j in used or not np.isfinite(problem.p[i, j]):
                continue
            step = problem.p[i, j] + problem.lam * sum(
                problem.q[j, k] for k in used
            )
            if step < best_step:
                best_step, best_j = step, j
        if best_j < 0:
            raise InfeasibleError(f"greedy: no candidate left for row {i}")
        assign.append(best_j)
        used.append(best_j)
    return np.asarray(assign, dtype=int), _objective_of(problem, assign)


def classify_containment(
    child_mask: np.ndarray,
    open_mask: np.ndarray,
    closed_mask: np.ndarray,
    *,
    thresh: float = 0.6,
) -> str:
    """Relation of a child region to a moving part's open/closed masks.

    Containment is |child AND part| / |child|. Living inside the part at
    its most-open state means the child rides the part (ARTICULATED, which
    takes precedence); inside the closed part only means it was revealed
    (STATIC); otherwise NONE. An empty child mask has no containment and
    maps to NONE.
    """
    child = np.asarray(child_mask, dtype=bool)
    area = child.sum()
    if area == 0:
        return "NONE"
    if (child & np.asarray(open_mask, dtype=bool)).sum() / area >= thresh:
        return "ARTICULATED"
    if (child & np.asarray(closed_mask, dtype=bool)).sum() / area >= thresh:
        return "STATIC"
    return "NONE"


def serialize_graph(graph: SceneGraph, out_dir: str) -> str:
    """Write graph.json plus per-object point sidecars.

    Mask provenance on object nodes is deliberately not part of the
    schema; a loaded graph carries empty mask lists.
    """
    os.makedirs(out_dir, exist_ok=True)
    objects = []
    for idx, obj in enumerate(graph.objects):
        sidecar = GRAPH_POINTS_PATTERN % idx
        bundle_io.write_points(os.path.join(out_dir, sidecar), obj.points)
        objects.append(
            {
                "id": obj.id,
                "centroid": obj.centroid.tolist(),
                "aabb": obj.aabb.tolist(),
                "n_points": int(obj.points.shape[0]),
                "isolated": bool(obj.isolated),
                "points": sidecar,
            }
        )
    arts = []
    for art in graph.articulations:
        arts.append(
            {
                "id": art.id,
                "segment": [int(art.segment[0]), int(art.segment[1])],
                "twist": {
                    "omega": art.twist.omega.tolist(),
                    "vel": art.twist.vel.tolist(),
                },
                "kind": art.kind.value,
                "axis": {
                    "direction": art.axis.direction.tolist(),
                    "point": art.axis.point.tolist(),
                },
                "thetas": art.thetas.tolist(),
                "mode": art.mode,
                "residual_rms": float(art.residual_rms),
            }
        )
    payload = {
        "version": GRAPH_VERSION,
        "objects": objects,
        "articulations": arts,
        "matches": [
            {"articulation": m.articulation, "object": m.object, "cost": m.cost}
            for m in graph.matches
        ],
        "children": [
            {"parent": c.parent, "child": c.child, "relation": c.relation}
            for c in graph.children
        ],
    }
    bundle_io.write_json(os.path.join(out_dir, "graph.json"), payload)
    return out_dir


def load_graph(path: str) -> SceneGraph:
    payload = bundle_io.read_json(os.path.join(path, "graph.json"))
    version = payload.get("version")
    if version != GRAPH_VERSION:
        raise SchemaVersionError(
            f"graph version {version!r} unsupported (expected {GRAPH_VERSION})"
        )
    objects = []
    for entry in payload["objects"]:
        points = bundle_io.read_points(
            os.path.join(path, entry["points"]), int(entry["n_points"])
        )
        node = ObjectNode(
            id=entry["id"], points=points, isolated=bool(entry["isolated"])
        )
        objects.append(node)
    articulations = []
    for entry in payload["articulations"]:
        articulations.append(
            GraphArticulation(
                id=int(entry["id"]),
                segment=(int(entry["segment"][0]), int(entry["segment"][1])),
                twist=Twist(
                    np.asarray(entry["twist"]["omega"], dtype=float),
                    np.asarray(entry["twist"]["vel"], dtype=float),
                ),
                kind=JointKind(entry["kind"]),
                axis=ScrewAxis(
                    JointKind(entry["kind"]),
                    np.asarray(entry["axis"]["direction"], dtype=float),
                    np.asarray(entry["axis"]["point"], dtype=float),
                ),
                thetas=np.asarray(entry["thetas"], dtype=float),
                mode=entry["mode"],
                residual_rms=float(entry["residual_rms"]),
            )
        )
    matches = [
        Match(
            articulation=int(m["articulation"]),
            object=m["object"],
            cost=float(m["cost"]),
        )
        for m in payload["matches"]
    ]
    children = [
        Child(parent=c["parent"], child=c["child"], relation=c["relation"])
        for c in payload["children"]
    ]
    return SceneGraph(
        objects=objects,
        articulations=articulations,
        matches=matches,
        children=children,
    )
