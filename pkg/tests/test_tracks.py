"""Tests for track lifting, splitting, clustering, and smoothing."""

import numpy as np
import pytest

from kinegraph.errors import EmptyClusterError, ShapeError, ValidationError
from kinegraph.se3 import CameraIntrinsics, RigidTransform, project, rodrigues
from kinegraph.tracks import (
    PointTracks2D,
    PointTracks3D,
    TrackLabel,
    cluster_tracks,
    dbscan,
    lift_tracks,
    smooth_tracks,
    split_static_dynamic,
    trajectory_distance_matrix,
)

CAM = CameraIntrinsics(fx=200.0, fy=200.0, cx=80.0, cy=60.0, width=160, height=120)


def make_pose(phi, t):
    rot, _ = rodrigues(np.asarray(phi, dtype=float))
    return RigidTransform(rot, np.asarray(t, dtype=float))


def plane_depth(pose, normal, offset):
    """Exact per-pixel depth of the plane normal . p = offset."""
    rr, cc = np.meshgrid(np.arange(CAM.height), np.arange(CAM.width), indexing="ij")
    du = (cc - CAM.cx) / CAM.fx
    dv = (rr - CAM.cy) / CAM.fy
    dirs_cam = np.stack([du, dv, np.ones_like(du)], axis=-1)
    dirs_world = dirs_cam @ pose.rotation.T
    return (offset - normal @ pose.translation) / (dirs_world @ normal)


class TestLiftTracks:
    def test_planar_scene_moving_camera_exact(self):
        # Inverse depth is affine in pixel coordinates on a plane, so the
        # bilinear sampler and the pose compensation must recover the world
        # points to machine precision.
        normal = np.array([0.1, 0.2, 1.0])
        normal /= np.linalg.norm(normal)
        offset = 2.5
        poses = [
            make_pose([0, 0, 0], [0, 0, 0]),
            make_pose([0, 0.05, 0], [0.05, -0.03, 0.1]),
            make_pose([0.03, -0.02, 0.01], [-0.04, 0.02, 0.05]),
        ]
        rng = np.random.default_rng(0)
        xy = rng.uniform([-0.5, -0.4], [0.5, 0.4], size=(40, 2))
        z = (offset - xy @ normal[:2]) / normal[2]
        world = np.column_stack([xy, z])

        n_frames = len(poses)
        pos2d = np.zeros((n_frames, 40, 2))
        vis = np.zeros((n_frames, 40), dtype=bool)
        depths = np.zeros((n_frames, CAM.height, CAM.width))
        for t, pose in enumerate(poses):
            depths[t] = plane_depth(pose, normal, offset)
            uvz, valid = project(world, CAM, pose)
            pos2d[t] = uvz[:, :2]
            vis[t] = valid

        lifted = lift_tracks(PointTracks2D(pos2d, vis), depths, poses, CAM)
        assert lifted.visibility.sum() == vis.sum()
        err = np.linalg.norm(lifted.positions - world[None], axis=2)
        assert err[lifted.visibility].max() < 1e-9

    def test_static_point_is_static_under_camera_motion(self):
        normal = np.array([0.0, 0.0, 1.0])
        poses = [make_pose([0, 0.01 * t, 0], [0.02 * t, 0, 0.03 * t]) for t in range(5)]
        world = np.array([[0.1, -0.05, 2.0]])
        pos2d = np.zeros((5, 1, 2))
        vis = np.zeros((5, 1), dtype=bool)
        depths = np.zeros((5, CAM.height, CAM.width))
        for t, pose in enumerate(poses):
            depths[t] = plane_depth(pose, normal, 2.0)
            uvz, valid = project(world, CAM, pose)
            pos2d[t] = uvz[:, :2]
            vis[t] = valid
        lifted = lift_tracks(PointTracks2D(pos2d, vis), depths, poses, CAM)
        spread = lifted.positions[:, 0].max(axis=0) - lifted.positions[:, 0].min(axis=0)
        assert np.all(spread < 1e-9)

    def test_invalid_depth_clears_visibility(self):
        depths = np.full((1, CAM.height, CAM.width), 2.0)
        depths[0, 58:63, 78:83] = 0.0  # kill the whole stencil and the nearest pixel
        pos2d = np.array([[[80.3, 60.4], [20.0, 20.0]]])
        vis = np.ones((1, 2), dtype=bool)
        lifted = lift_tracks(
            PointTracks2D(pos2d, vis), depths, [make_pose([0, 0, 0], [0, 0, 0])], CAM
        )
        assert not lifted.visibility[0, 0]
        assert lifted.visibility[0, 1]

    def test_discontinuity_drops_sample(self):
        # Depth steps from 1 to 3 between columns 79 and 80. Neither surface
        # can be blamed for a sample straddling the silhouette, so it must
        # lose visibility instead of committing to either side.
        depths = np.full((1, CAM.height, CAM.width), 3.0)
        depths[0, :, :80] = 1.0
        pos2d = np.array([[[79.4, 60.0], [40.0, 60.0]]])
        vis = np.ones((1, 2), dtype=bool)
        lifted = lift_tracks(
            PointTracks2D(pos2d, vis), depths, [make_pose([0, 0, 0], [0, 0, 0])], CAM
        )
        assert not lifted.visibility[0, 0]
        assert lifted.visibility[0, 1]  # interior of the near surface survives

    def test_small_step_drops_sample(self):
        # A 2 cm step passes the coarse spread guard but is still two
        # different surfaces; the edge test must catch it.
        depths = np.full((1, CAM.height, CAM.width), 2.0)
        depths[0, :, 80:] = 2.02
        pos2d = np.array([[[79.5, 60.0], [40.0, 60.0]]])
        vis = np.ones((1, 2), dtype=bool)
        lifted = lift_tracks(
            PointTracks2D(pos2d, vis), depths, [make_pose([0, 0, 0], [0, 0, 0])], CAM
        )
        assert not lifted.visibility[0, 0]
        assert lifted.visibility[0, 1]

    def test_simulated_scene_lifts_to_ground_truth(self):
        # End-to-end oracle: on a rendered zero-noise scene every surviving
        # sample must land on the true 3D trajectory.
        from kinegraph import sim

        spec = sim.PRESETS["door"](seed=0)
        res = sim.render_scene(spec)
        lifted = lift_tracks(res.tracks2d, res.depths, spec.camera, spec.intrinsics)
        vis = lifted.visibility & res.tracks3d_clean.visibility
        err = np.linalg.norm(
            lifted.positions - res.tracks3d_clean.positions, axis=2
        )[vis]
        assert vis.sum() > 0.5 * res.tracks3d_clean.visibility.sum()
        assert err.max() < 1e-6

    def test_shape_mismatch_raises(self):
        tracks = PointTracks2D(np.zeros((2, 3, 2)), np.ones((2, 3), dtype=bool))
        with pytest.raises(ShapeError):
            lift_tracks(tracks, np.zeros((2, 10, 10)), [make_pose([0, 0, 0], [0, 0, 0])] * 2, CAM)
        with pytest.raises(ShapeError):
            lift_tracks(
                tracks,
                np.zeros((2, CAM.height, CAM.width)),
                [make_pose([0, 0, 0], [0, 0, 0])],
                CAM,
            )


class TestSplitStaticDynamic:
    def _tracks(self, trajectories, vis=None):
        pos = np.stack(trajectories, axis=1)
        if vis is None:
            vis = np.ones(pos.shape[:2], dtype=bool)
        return PointTracks3D(pos, vis)

    def test_three_way_split(self):
        n = 31
        t = np.linspace(0.0, 1.0, n)
        static = np.column_stack([0.02 * t, np.zeros(n), np.full(n, 2.0)])
        dynamic = np.column_stack([0.3 * t, np.zeros(n), np.full(n, 2.0)])
        jumpy = static.copy() + np.array([1.0, 0, 0])
        jumpy[15:] += np.array([0.0, 0.2, 0.0])  # 0.2 m in one frame step
        labels = split_static_dynamic(self._tracks([static, dynamic, jumpy]))
        assert labels.labels[0] is TrackLabel.STATIC
        assert labels.labels[1] is TrackLabel.DYNAMIC
        assert labels.labels[2] is TrackLabel.REJECTED

    def test_displacement_boundary(self):
        n = 11
        t = np.linspace(0.0, 1.0, n)
        just_under = np.column_stack([0.05 * t, np.zeros(n), np.zeros(n)])
        at_threshold = np.column_stack([0.10 * t, np.zeros(n), np.zeros(n)])
        labels = split_static_dynamic(self._tracks([just_under, at_threshold]))
        assert labels.labels[0] is TrackLabel.STATIC
        assert labels.labels[1] is TrackLabel.DYNAMIC

    def test_jump_rate_is_per_frame_stepped(self):
        # A 0.2 m hop across a 2-frame visibility gap is only 0.1 m per
        # frame step, inside the jump gate; the same hop in one step is not.
        pos = np.zeros((5, 2, 3))
        pos[3:, 0, 0] = 0.2
        pos[3:, 1, 0] = 0.2
        vis = np.ones((5, 2), dtype=bool)
        vis[2, 0] = False  # track 0 skips the middle frame
        labels = split_static_dynamic(PointTracks3D(pos, vis))
        assert labels.labels[0] is TrackLabel.DYNAMIC
        assert labels.labels[1] is TrackLabel.REJECTED

    def test_single_sample_track_is_static(self):
        pos = np.zeros((4, 1, 3))
        vis = np.zeros((4, 1), dtype=bool)
        vis[1, 0] = True
        labels = split_static_dynamic(PointTracks3D(pos, vis))
        assert labels.labels[0] is TrackLabel.STATIC

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            pos = rng.normal(scale=0.08, size=(20, 6, 3)).cumsum(axis=0) * 0.2
            vis = rng.random((20, 6)) > 0.1
            tracks = PointTracks3D(pos, vis)
            rot, _ = rodrigues(rng.normal(size=3))
            xform = RigidTransform(rot, rng.normal(size=3))
            moved = PointTracks3D(xform.apply(pos.reshape(-1, 3)).reshape(pos.shape), vis)
            a = split_static_dynamic(tracks).labels
            b = split_static_dynamic(moved).labels
            assert all(x is y for x, y in zip(a, b))


class TestClustering:
    def _two_groups(self, n_frames=40, dur_b=None):
        """Two tight rigid groups 1 m apart; group A moves and lives longer."""
        rng = np.random.default_rng(3)
        t = np.linspace(0.0, 1.0, n_frames)
        base_a = np.array([0.0, 0.0, 2.0])
        base_b = np.array([1.0, 0.0, 2.0])
        tracks = []
        for k in range(8):
            off = rng.normal(scale=0.02, size=3)
            traj = base_a + off + np.outer(t, [0.3, 0.0, 0.0])
            tracks.append(traj)
        for k in range(6):
            off = rng.normal(scale=0.02, size=3)
            tracks.append(np.tile(base_b + off, (n_frames, 1)))
        pos = np.stack(tracks, axis=1)
        vis = np.ones((n_frames, 14), dtype=bool)
        if dur_b is not None:
            vis[dur_b:, 8:] = False
        return PointTracks3D(pos, vis)

    def test_two_groups_form_two_clusters(self):
        tracks = self._two_groups()
        dist = trajectory_distance_matrix(tracks)
        labels = dbscan(dist, eps=0.20, min_pts=5)
        ids = np.unique(labels[labels >= 0])
        assert ids.size == 2
        assert set(np.nonzero(labels == labels[0])[0]) == set(range(8))

    def test_selects_longest_lived_cluster(self):
        tracks = self._two_groups(dur_b=20)
        chosen = cluster_tracks(tracks, eps=0.20, min_pts=5)
        assert list(chosen) == list(range(8))

    def test_tie_on_duration_prefers_larger(self):
        tracks = self._two_groups()  # equal durations; group A has 8 > 6
        chosen = cluster_tracks(tracks, eps=0.20, min_pts=5)
        assert list(chosen) == list(range(8))

    def test_low_joint_visibility_is_infinite_distance(self):
        pos = np.zeros((20, 2, 3))
        vis = np.zeros((20, 2), dtype=bool)
        vis[:5, 0] = True
        vis[4:9, 1] = True  # only one joint frame, 5% of 20
        dist = trajectory_distance_matrix(PointTracks3D(pos, vis))
        assert np.isinf(dist[0, 1])
        assert dist[0, 0] == 0.0

    def test_all_noise_raises(self):
        rng = np.random.default_rng(1)
        pos = np.tile(rng.uniform(-5, 5, size=(1, 6, 3)), (10, 1, 1))
        tracks = PointTracks3D(pos, np.ones((10, 6), dtype=bool))
        with pytest.raises(EmptyClusterError):
            cluster_tracks(tracks, eps=0.25, min_pts=5)

    def test_too_few_tracks_raises(self):
        tracks = PointTracks3D(np.zeros((5, 3, 3)), np.ones((5, 3), dtype=bool))
        with pytest.raises(EmptyClusterError):
            cluster_tracks(tracks, eps=0.25, min_pts=5)

    def test_deterministic_repeat(self):
        tracks = self._two_groups(dur_b=20)
        a = cluster_tracks(tracks, eps=0.20, min_pts=5)
        b = cluster_tracks(tracks, eps=0.20, min_pts=5)
        assert np.array_equal(a, b)

    def test_dbscan_validates(self):
        with pytest.raises(ShapeError):
            dbscan(np.zeros((2, 3)), 0.5, 2)
        with pytest.raises(ValidationError):
            dbscan(np.zeros((3, 3)), 0.0, 2)

    def test_rigid_transform_invariance(self):
        tracks = self._two_groups(dur_b=20)
        rng = np.random.default_rng(11)
        rot, _ = rodrigues(rng.normal(size=3))
        xform = RigidTransform(rot, rng.normal(size=3))
        pos = tracks.positions
        moved = PointTracks3D(
            xform.apply(pos.reshape(-1, 3)).reshape(pos.shape), tracks.visibility
        )
        assert np.array_equal(
            cluster_tracks(tracks, eps=0.20, min_pts=5),
            cluster_tracks(moved, eps=0.20, min_pts=5),
        )


class TestSmoothTracks:
    def test_linear_trajectory_unchanged(self):
        n = 30
        t = np.linspace(0.0, 1.0, n)
        pos = np.stack([np.column_stack([0.4 * t, -0.2 * t + 1.0, np.full(n, 2.0)])], axis=1)
        tracks = PointTracks3D(pos, np.ones((n, 1), dtype=bool))
        out = smooth_tracks(tracks, window=5)
        assert np.abs(out.positions - pos).max() < 1e-9

    def test_constant_unchanged(self):
        pos = np.tile(np.array([1.0, 2.0, 3.0]), (12, 1, 1))
        tracks = PointTracks3D(pos, np.ones((12, 1), dtype=bool))
        out = smooth_tracks(tracks, window=5)
        assert np.array_equal(out.positions, pos)

    def test_runs_smoothed_independently(self):
        # Two visible runs with wildly different affine trajectories; any
        # averaging across the gap would bend the line ends.
        n = 24
        pos = np.zeros((n, 1, 3))
        vis = np.zeros((n, 1), dtype=bool)
        t1 = np.arange(10)
        pos[:10, 0, 0] = 0.01 * t1
        vis[:10, 0] = True
        t2 = np.arange(14, 24)
        pos[14:, 0, 0] = 100.0 - 0.02 * t2
        vis[14:, 0] = True
        out = smooth_tracks(PointTracks3D(pos, vis), window=5)
        assert np.abs(out.positions[vis[:, 0], 0] - pos[vis[:, 0], 0]).max() < 1e-9

    def test_short_run_untouched(self):
        n = 8
        rng = np.random.default_rng(2)
        pos = rng.normal(size=(n, 1, 3))
        vis = np.zeros((n, 1), dtype=bool)
        vis[2:5, 0] = True  # run of 3 < window 5
        out = smooth_tracks(PointTracks3D(pos, vis), window=5)
        assert np.array_equal(out.positions[2:5], pos[2:5])

    def test_noise_rms_reduction(self):
        # Zero-mean noise with sigma 5 mm on a linear path: averaged over
        # many seeds, smoothing should cut residual RMS by at least
        # sqrt(window)/2 (interior windows achieve the full sqrt(window)).
        window = 5
        n = 200
        t = np.linspace(0.0, 1.0, n)
        clean = np.column_stack([0.3 * t, np.zeros(n), np.full(n, 2.0)])
        ratios = np.zeros(1000)
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            noisy = clean + rng.normal(scale=0.005, size=clean.shape)
            tracks = PointTracks3D(noisy[:, None, :], np.ones((n, 1), dtype=bool))
            out = smooth_tracks(tracks, window=window)
            before = np.sqrt(np.mean((noisy - clean) ** 2))
            after = np.sqrt(np.mean((out.positions[:, 0] - clean) ** 2))
            ratios[seed] = before / after
        assert ratios.mean() >= np.sqrt(window) / 2.0

    def test_even_window_rejected(self):
        tracks = PointTracks3D(np.zeros((6, 1, 3)), np.ones((6, 1), dtype=bool))
        with pytest.raises(ValidationError):
            smooth_tracks(tracks, window=4)


class TestContainers:
    def test_subset_and_time_slice(self):
        pos = np.arange(2 * 4 * 3, dtype=float).reshape(2, 4, 3)
        vis = np.ones((2, 4), dtype=bool)
        tracks = PointTracks3D(pos, vis)
        sub = tracks.subset([1, 3])
        assert sub.n_tracks == 2
        assert np.array_equal(sub.positions[:, 0], pos[:, 1])
        sl = tracks.time_slice(1, 2)
        assert sl.n_frames == 1
        assert np.array_equal(sl.positions[0], pos[1])

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            PointTracks3D(np.zeros((2, 3, 2)), np.ones((2, 3), dtype=bool))
        with pytest.raises(ShapeError):
            PointTracks2D(np.zeros((2, 3, 2)), np.ones((3, 3), dtype=bool))
