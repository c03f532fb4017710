import numpy as np
import pytest

from kinegraph.errors import ShapeError, ValidationError
from kinegraph.se3 import CameraIntrinsics, RigidTransform, rodrigues
from kinegraph.segmenter import (
    DepthFrame,
    FusionTable,
    InteractionSegment,
    agent_ratio,
    depth_disparity,
    fuse,
    median_filter_series,
    normalize_series,
    parse_segments,
    segment_sequence,
    warp_depth,
)

CAM = CameraIntrinsics(fx=200.0, fy=200.0, cx=79.5, cy=59.5, width=160, height=120)


def smooth_depth(rng, shape=(120, 160)):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return 2.0 + 0.3 * np.sin(xx / 40.0) + 0.2 * np.cos(yy / 30.0)


class TestWarpDepth:
    def test_identical_poses_reproduces_depth(self):
        rng = np.random.default_rng(0)
        depth = smooth_depth(rng)
        pose = RigidTransform.identity()
        warped = warp_depth(DepthFrame(depth, pose, 0), pose, CAM)
        hit = warped > 0.0
        assert np.count_nonzero(hit) > 0.9 * depth.size
        assert np.max(np.abs(warped[hit] - depth[hit])) < 1e-9

    def test_lateral_shift_on_frontoparallel_plane(self):
        # Plane at z=2: a pure lateral camera shift must not change depth.
        depth = np.full((CAM.height, CAM.width), 2.0)
        prev = DepthFrame(depth, RigidTransform.identity(), 0)
        cur_pose = RigidTransform(np.eye(3), [0.05, 0.0, 0.0])
        warped = warp_depth(prev, cur_pose, CAM)
        hit = warped > 0.0
        assert np.count_nonzero(hit) > 0.8 * depth.size
        assert np.max(np.abs(warped[hit] - 2.0)) < 1e-3

    def test_discontinuity_sources_not_splatted_or_mixed(self):
        depth = np.full((CAM.height, CAM.width), 1.0)
        depth[:, 80:] = 3.0
        pose = RigidTransform.identity()
        warped = warp_depth(DepthFrame(depth, pose, 0), pose, CAM)
        hit = warped > 0.0
        # Hits reproduce the source exactly, so no pixel mixes the two sides
        # of the discontinuity into an intermediate depth.
        assert np.max(np.abs(warped[hit] - depth[hit])) < 1e-9
        mixed = hit & (np.abs(warped - 1.0) > 1e-9) & (np.abs(warped - 3.0) > 1e-9)
        assert not np.any(mixed)

    def test_rotating_camera_static_plane_small_disparity(self):
        depth = np.full((CAM.height, CAM.width), 2.0)
        prev = DepthFrame(depth, RigidTransform.identity(), 0)
        rot, _ = rodrigues(np.array([0.0, 0.02, 0.0]))
        warped = warp_depth(prev, RigidTransform(rot, np.zeros(3)), CAM)
        # True current depth of the same plane: z = 2 in world stays a plane;
        # compute it analytically per pixel of the rotated camera.
        cols, rows = np.meshgrid(np.arange(CAM.width), np.arange(CAM.height))
        dirs = np.stack(
            [(cols - CAM.cx) / CAM.fx, (rows - CAM.cy) / CAM.fy, np.ones_like(cols, dtype=float)],
            axis=-1,
        )
        world_dirs = dirs @ rot.T
        true_depth = 2.0 / world_dirs[..., 2]
        hit = warped > 0.0
        assert np.count_nonzero(hit) > 0.5 * depth.size
        assert np.percentile(np.abs(warped[hit] - true_depth[hit]), 99) < 5e-3


class TestDepthDisparity:
    def test_quarter_of_pixels_moved(self):
        cur = np.full((20, 20), 2.0)
        warped = np.full((20, 20), 2.0)
        warped[:10, :10] = 1.5
        _, ratio, ok = depth_disparity(cur, warped, 0.05)
        assert ok
        assert ratio == pytest.approx(0.25)

    def test_zero_joint_coverage(self):
        cur = np.zeros((5, 5))
        warped = np.full((5, 5), 2.0)
        delta, ratio, ok = depth_disparity(cur, warped, 0.05)
        assert ratio == 0.0 and not ok
        assert np.all(np.isnan(delta))

    def test_exclude_mask_removes_pixels(self):
        cur = np.full((10, 10), 2.0)
        warped = np.full((10, 10), 2.0)
        warped[:5] = 1.0
        mask = np.zeros((10, 10), dtype=bool)
        mask[:5, :5] = True
        _, ratio_all, _ = depth_disparity(cur, warped, 0.05)
        _, ratio_masked, _ = depth_disparity(cur, warped, 0.05, exclude=mask)
        assert ratio_all == pytest.approx(0.5)
        assert ratio_masked == pytest.approx(25 / 75)

    def test_delta_map_nan_bookkeeping(self):
        cur = np.full((4, 4), 2.0)
        cur[0, 0] = 0.0
        warped = np.full((4, 4), 2.2)
        delta, _, _ = depth_disparity(cur, warped, 0.05)
        assert np.isnan(delta[0, 0])
        assert delta[1, 1] == pytest.approx(0.2)

    def test_bad_tau(self):
        with pytest.raises(ValidationError):
            depth_disparity(np.ones((2, 2)), np.ones((2, 2)), 0.0)


class TestAgentRatio:
    def test_empty_and_half(self):
        mask = np.zeros((10, 10), dtype=bool)
        assert agent_ratio(mask) == 0.0
        mask[:5] = True
        assert agent_ratio(mask) == pytest.approx(0.5)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            agent_ratio(np.zeros(10, dtype=bool))


class TestMedianFilter:
    def test_even_kappa_rejected(self):
        with pytest.raises(ValidationError):
            median_filter_series(np.zeros(10), 4)

    def test_step_preserved_exactly(self):
        series = np.zeros(60)
        series[25:] = 1.0
        out = median_filter_series(series, 11)
        assert np.array_equal(out, series)

    def test_idempotent_on_long_runs(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            # Piecewise-constant series whose runs are all >= kappa.
            kappa = 11
            values = rng.uniform(0, 1, size=4)
            lengths = rng.integers(kappa, 25, size=4)
            series = np.concatenate([np.full(n, v) for v, n in zip(values, lengths)])
            once = median_filter_series(series, kappa)
            twice = median_filter_series(once, kappa)
            assert np.array_equal(once, twice)

    def test_single_frame_spike_removed(self):
        series = np.zeros(30)
        series[15] = 1.0
        out = median_filter_series(series, 11)
        assert np.all(out == 0.0)


class TestFuse:
    def test_frozen_midpoint_example(self):
        table = FusionTable(p_tt=1.0, p_tf=0.5, p_ft=0.5, p_ff=0.0)
        assert fuse(0.5, 0.5, table) == pytest.approx(0.5)

    def test_pure_corners(self):
        table = FusionTable()
        assert fuse(1.0, 1.0, table) == pytest.approx(table.p_tt)
        assert fuse(0.0, 1.0, table) == pytest.approx(table.p_tf)
        assert fuse(1.0, 0.0, table) == pytest.approx(table.p_ft)
        assert fuse(0.0, 0.0, table) == pytest.approx(table.p_ff)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            vals = np.sort(rng.uniform(0, 1, size=4))
            table = FusionTable(p_tt=vals[3], p_tf=vals[1], p_ft=vals[2], p_ff=vals[0])
            h, d = rng.uniform(0, 1, size=2)
            p = fuse(h, d, table)
            assert 0.0 <= p <= 1.0

    def test_monotone_in_both_scores_for_ordered_table(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            vals = np.sort(rng.uniform(0, 1, size=4))
            table = FusionTable(p_tt=vals[3], p_tf=vals[1], p_ft=vals[2], p_ff=vals[0])
            h = rng.uniform(0, 1)
            d1, d2 = np.sort(rng.uniform(0, 1, size=2))
            assert fuse(h, d1, table) <= fuse(h, d2, table) + 1e-12
            h1, h2 = np.sort(rng.uniform(0, 1, size=2))
            d = rng.uniform(0, 1)
            assert fuse(h1, d, table) <= fuse(h2, d, table) + 1e-12

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            fuse(1.5, 0.5, FusionTable())
        with pytest.raises(ValidationError):
            FusionTable(p_tt=1.2)


class TestParseSegments:
    def test_length_gates(self):
        prob = np.zeros(40)
        prob[5:9] = 1.0  # length 4
        prob[20:25] = 1.0  # length 5
        segs = parse_segments(prob, 0.5, t_min=5, t_max=100)
        assert segs == [InteractionSegment(20, 25)]

    def test_overlong_run_dropped_not_split(self):
        prob = np.ones(50)
        assert parse_segments(prob, 0.5, t_min=5, t_max=30) == []

    def test_run_reaching_sequence_end(self):
        prob = np.zeros(30)
        prob[22:] = 0.9
        assert parse_segments(prob, 0.5, t_min=5, t_max=100) == [InteractionSegment(22, 30)]

    def test_disjoint_and_maximal_property(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            prob = rng.uniform(0, 1, size=80)
            segs = parse_segments(prob, 0.5, t_min=2, t_max=15)
            for a, b in zip(segs, segs[1:]):
                assert a.t_end <= b.t_start
            for seg in segs:
                assert 2 <= seg.length <= 15
                assert np.all(prob[seg.t_start : seg.t_end] >= 0.5)
                if seg.t_start > 0:
                    assert prob[seg.t_start - 1] < 0.5
                if seg.t_end < prob.size:
                    assert prob[seg.t_end] < 0.5

    def test_invalid_gates(self):
        with pytest.raises(ValidationError):
            parse_segments(np.zeros(5), 0.5, t_min=0, t_max=5)
        with pytest.raises(ValidationError):
            parse_segments(np.zeros(5), 1.5, t_min=1, t_max=5)

    def test_segment_requires_positive_length(self):
        with pytest.raises(ValidationError):
            InteractionSegment(5, 5)


class TestNormalize:
    def test_upper_percentile_maps_near_one(self):
        raw = np.zeros(200)
        raw[:100] = np.linspace(0.1, 0.4, 100)
        out = normalize_series(raw)
        assert out.max() == 1.0
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_all_zero_stays_zero(self):
        assert np.all(normalize_series(np.zeros(50)) == 0.0)


def build_moving_rect_sequence(n=60, start=20, end=40, speed=2):
    """Static 2 m background with a 1.5 m rectangle sliding during
    [start, end); agent mask covers a block near the rectangle then."""
    h, w = CAM.height, CAM.width
    depths = np.full((n, h, w), 2.0)
    masks = np.zeros((n, h, w), dtype=bool)
    x0, y0, rw, rh = 30, 40, 24, 30
    for t in range(n):
        shift = speed * (min(max(t, start), end) - start)
        depths[t, y0 : y0 + rh, x0 + shift : x0 + shift + rw] = 1.5
        if start <= t < end:
            masks[t, y0 - 10 : y0, x0 + shift : x0 + shift + 20] = True
    poses = [RigidTransform.identity() for _ in range(n)]
    return depths, masks, poses


class TestSegmentSequence:
    def test_recovers_interaction_window(self):
        depths, masks, poses = build_moving_rect_sequence()
        scores = segment_sequence(depths, masks, poses, CAM)
        assert scores.segments == [InteractionSegment(20, 40)]

    def test_static_sequence_is_empty(self):
        h, w = CAM.height, CAM.width
        depths = np.full((30, h, w), 2.0)
        masks = np.zeros((30, h, w), dtype=bool)
        poses = [RigidTransform.identity()] * 30
        scores = segment_sequence(depths, masks, poses, CAM)
        assert scores.segments == []
        assert np.all(scores.delta_raw == 0.0)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            segment_sequence(
                np.zeros((5, 4, 4)),
                np.zeros((5, 4, 5), dtype=bool),
                [RigidTransform.identity()] * 5,
                CAM,
            )
