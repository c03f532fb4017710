"""Command-line driver: simulate scenes, run the pipeline end to end or one
stage at a time, and score predictions against ground truth.

Exit codes: 0 success, 2 input validation failure, 3 estimation failure.
Failures emit one machine-readable JSON record on stderr. All outputs are
written atomically, so a failed stage never leaves half-written artifacts
and earlier stage outputs stay usable for resuming.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import bundle as bundle_io
from .bundle import load_bundle
from .config import PipelineConfig
from .errors import EstimationError, ValidationError
from .graph import load_graph, serialize_graph
from .metrics import MetricReport
from .pipeline import (
    build_graph,
    estimate_segments,
    evaluate,
    ingest_tracks,
    read_articulations,
    read_segments,
    segment_scene,
    write_articulations,
    write_segments,
)
from .sim import PRESETS, gen_bundle

REPORT_VERSION = 1


def _config_of(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(seed=args.seed, threads=args.threads)


def cmd_simulate(args) -> None:
    cfg = _config_of(args)
    if args.preset not in PRESETS:
        raise ValidationError(
            f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}"
        )
    spec = PRESETS[args.preset](seed=cfg.seed)
    gen_bundle(spec, args.out)
    print(args.out)


def cmd_segment(args) -> None:
    cfg = _config_of(args)
    bundle = load_bundle(args.bundle)
    segments = segment_scene(bundle, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "segments.json")
    write_segments(path, segments, bundle.fps)
    print(path)


def cmd_estimate(args) -> None:
    cfg = _config_of(args)
    bundle = load_bundle(args.bundle)
    segments = read_segments(args.segments)
    records = estimate_segments(bundle, segments, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "articulations.json")
    write_articulations(path, records)
    print(path)


def cmd_match(args) -> None:
    cfg = _config_of(args)
    bundle = load_bundle(args.bundle)
    records = read_articulations(args.articulations)
    graph = build_graph(bundle, records, cfg)
    serialize_graph(graph, args.out)
    print(os.path.join(args.out, "graph.json"))


def _write_report(report: MetricReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    bundle_io.write_json(
        os.path.join(out_dir, "report.json"),
        {"version": REPORT_VERSION, **report.to_dict()},
    )
    bundle_io.atomic_write_bytes(
        os.path.join(out_dir, "report.txt"), report.render_table().encode()
    )


def cmd_eval(args) -> None:
    cfg = _config_of(args)
    bundle = load_bundle(args.bundle)
    segments = read_segments(os.path.join(args.predictions, "segments.json"))
    graph = load_graph(args.predictions)
    report = evaluate(bundle, segments, graph, cfg)
    _write_report(report, args.out)
    sys.stdout.write(report.render_table())


def cmd_run(args) -> None:
    cfg = _config_of(args)
    bundle = load_bundle(args.bundle)
    os.makedirs(args.out, exist_ok=True)
    segments = segment_scene(bundle, cfg)
    write_segments(os.path.join(args.out, "segments.json"), segments, bundle.fps)
    tracks = ingest_tracks(bundle, cfg)
    records = estimate_segments(bundle, segments, cfg, tracks3d=tracks[1])
    write_articulations(os.path.join(args.out, "articulations.json"), records)
    graph = build_graph(bundle, records, cfg, tracks=tracks)
    serialize_graph(graph, args.out)
    if bundle.gt is not None:
        report = evaluate(bundle, segments, graph, cfg)
        _write_report(report, args.out)
        sys.stdout.write(report.render_table())
    print(args.out)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument(
        "--threads", type=int, help="worker cap for parallel stages (default 1)"
    )
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(
        prog="kinegraph",
        description="Articulated scene graphs from depth, masks, and point tracks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "simulate", parents=[common], help="render a synthetic scene bundle"
    )
    p.add_argument("preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "segment", parents=[common], help="detect interaction segments"
    )
    p.add_argument("bundle", help="scene bundle directory")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser(
        "estimate", parents=[common], help="fit one screw motion per segment"
    )
    p.add_argument("bundle", help="scene bundle directory")
    p.add_argument("segments", help="segments.json from the segment stage")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser(
        "match", parents=[common], help="assign articulations to objects"
    )
    p.add_argument("bundle", help="scene bundle directory")
    p.add_argument("articulations", help="articulations.json from the estimate stage")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser(
        "eval", parents=[common], help="score predictions against ground truth"
    )
    p.add_argument("bundle", help="scene bundle directory with gt.json")
    p.add_argument("predictions", help="directory holding segments.json and graph.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="full pipeline on one bundle")
    p.add_argument("bundle", help="scene bundle directory")
    p.set_defaults(func=cmd_run)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError, NotADirectoryError,
            json.JSONDecodeError) as exc:
        return _fail(exc, 2)
    except EstimationError as exc:
        return _fail(exc, 3)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
