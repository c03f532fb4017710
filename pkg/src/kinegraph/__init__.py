"""Articulated 3D scene graphs from point trajectories and depth/pose streams.

The usual entry points: load a :class:`SceneBundle` from disk, pick a
:class:`PipelineConfig`, and call :func:`run_pipeline`; or drive the stages
one at a time (``segment_scene`` -> ``estimate_segments`` -> ``build_graph``
-> ``evaluate``). Everything deeper lives in the stage modules.
"""

__version__ = "0.1.0"

from .bundle import SceneBundle, load_bundle
from .config import PipelineConfig
from .errors import (
    BranchAmbiguityError,
    ConvergenceError,
    DegenerateMotionError,
    EstimationError,
    InfeasibleError,
    KinegraphError,
    SchemaVersionError,
    ShapeError,
    ValidationError,
)
from .estimator import ArticulationEstimate, PriorWeights, cosine_prior, estimate_twist
from .graph import ObjectNode, SceneGraph, load_graph, serialize_graph
from .pipeline import (
    ArticulationRecord,
    PipelineResult,
    build_graph,
    estimate_segments,
    evaluate,
    run_pipeline,
    segment_scene,
)
from .se3 import (
    CameraIntrinsics,
    JointKind,
    RigidTransform,
    ScrewAxis,
    Twist,
    exp_map,
    log_map,
    project,
    replay_points,
    screw_axis_from_twist,
    unproject,
)
from .segmenter import InteractionSegment
from .tracks import PointTracks3D, PointTracks2D, lift_tracks

__all__ = [
    "ArticulationEstimate",
    "ArticulationRecord",
    "BranchAmbiguityError",
    "CameraIntrinsics",
    "ConvergenceError",
    "DegenerateMotionError",
    "EstimationError",
    "InfeasibleError",
    "InteractionSegment",
    "JointKind",
    "KinegraphError",
    "ObjectNode",
    "PipelineConfig",
    "PipelineResult",
    "PointTracks2D",
    "PointTracks3D",
    "PriorWeights",
    "RigidTransform",
    "SceneBundle",
    "SceneGraph",
    "SchemaVersionError",
    "ScrewAxis",
    "ShapeError",
    "Twist",
    "ValidationError",
    "build_graph",
    "cosine_prior",
    "estimate_segments",
    "estimate_twist",
    "evaluate",
    "exp_map",
    "lift_tracks",
    "load_bundle",
    "load_graph",
    "log_map",
    "project",
    "replay_points",
    "run_pipeline",
    "screw_axis_from_twist",
    "segment_scene",
    "serialize_graph",
    "unproject",
    "__version__",
]
