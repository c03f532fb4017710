"""Pipeline configuration: one flat record of every tunable, strict about
unknown keys so typos in config files fail loudly instead of silently
running defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ValidationError
from . import bundle as bundle_io


@dataclass(frozen=True)
class PipelineConfig:
    # interaction segmentation
    s_h: int = 6                 # frames between warped and current depth
    tau: float = 0.05            # depth disparity gate, meters
    kappa: int = 11              # temporal median window, odd
    threshold: float = 0.5       # fused probability cut
    t_min: int = 5               # segment length gates, frames
    t_max: int = 1800
    percentile: float = 99.0     # disparity normalization percentile
    p_tt: float = 0.95           # fusion table, P(interaction | agent, moved)
    p_tf: float = 0.45
    p_ft: float = 0.55
    p_ff: float = 0.05
    # track ingestion
    f_max: int = 1500            # track budget cap
    query_stride: int = 2        # upstream tracker query spacing, recorded for provenance
    max_spread: float = 0.10     # depth agreement for bilinear lifting, meters
    # static/dynamic split and clustering
    min_track_len: float = 0.10  # net displacement making a track dynamic, meters
    jump_thresh: float = 0.15    # per-frame displacement treated as a glitch, meters
    eps: float = 0.25
    min_pts: int = 5
    min_joint_frac: float = 0.30
    smooth_window: int = 5       # odd
    # twist estimation
    secant_stride: int = 3
    min_secant_norm: float = 0.03
    eta_star: float = 0.994      # cosine-median crossover
    prior_gain: float = 200.0    # sigmoid steepness around eta_star
    alpha: float = 1.0           # regularizer weight; 0 disables the prior
    pitch_cutoff: float = 1.0
    max_iters: int = 200
    rel_tol: float = 1e-10
    # matching and containment
    knn_k: int = 5
    lam: float = 1.0             # object-overlap penalty weight
    contain_thresh: float = 0.6
    # evaluation
    voxel: float = 0.015
    # run control
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        checks = [
            (self.s_h >= 1, "s_h must be >= 1"),
            (self.tau > 0, "tau must be positive"),
            (self.kappa >= 1 and self.kappa % 2 == 1, "kappa must be odd and >= 1"),
            (0 < self.threshold < 1, "threshold must lie in (0, 1)"),
            (self.t_min >= 1, "t_min must be >= 1"),
            (self.t_max >= self.t_min, "t_max must be >= t_min"),
            (0 < self.percentile <= 100, "percentile must lie in (0, 100]"),
            (
                all(0 <= p <= 1 for p in (self.p_tt, self.p_tf, self.p_ft, self.p_ff)),
                "fusion probabilities must lie in [0, 1]",
            ),
            (self.f_max >= 1, "f_max must be >= 1"),
            (self.query_stride >= 1, "query_stride must be >= 1"),
            (self.max_spread > 0, "max_spread must be positive"),
            (self.min_track_len > 0, "min_track_len must be positive"),
            (self.jump_thresh > 0, "jump_thresh must be positive"),
            (self.eps > 0, "eps must be positive"),
            (self.min_pts >= 1, "min_pts must be >= 1"),
            (0 < self.min_joint_frac <= 1, "min_joint_frac must lie in (0, 1]"),
            (
                self.smooth_window >= 1 and self.smooth_window % 2 == 1,
                "smooth_window must be odd and >= 1",
            ),
            (self.secant_stride >= 1, "secant_stride must be >= 1"),
            (self.min_secant_norm > 0, "min_secant_norm must be positive"),
            (0 < self.eta_star < 1, "eta_star must lie in (0, 1)"),
            (self.prior_gain > 0, "prior_gain must be positive"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.pitch_cutoff > 0, "pitch_cutoff must be positive"),
            (self.max_iters >= 1, "max_iters must be >= 1"),
            (self.rel_tol > 0, "rel_tol must be positive"),
            (self.knn_k >= 1, "knn_k must be >= 1"),
            (self.lam >= 0, "lam must be >= 0"),
            (0 < self.contain_thresh <= 1, "contain_thresh must lie in (0, 1]"),
            (self.voxel > 0, "voxel must be positive"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(message)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        data = bundle_io.read_json(path)
        if not isinstance(data, dict):
            raise ValidationError(f"config root must be a JSON object: {path}")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        """Apply non-None overrides (flag layer on top of file layer)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        return PipelineConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
