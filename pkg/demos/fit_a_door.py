"""Fit a screw joint to synthetic door tracks and inspect the classifier.

Builds a noiseless point cloud swinging on a hinge, runs the regularized
twist fit, then shows why the regularizer earns its keep: with the hinge
far from the cloud the raw pitch-ratio rule misreads the arc as a slide.
"""

import numpy as np

from kinegraph import JointKind, Twist, cosine_prior, estimate_twist, exp_map
from kinegraph.estimator import sample_secants
from kinegraph.tracks import PointTracks3D

SWEEP_DEG = 25.0
N_FRAMES = 40
N_POINTS = 120


def door_cloud(hinge_x: float, seed: int = 0) -> PointTracks3D:
    rng = np.random.default_rng(seed)
    omega = np.array([0.0, 0.0, 1.0])
    twist = Twist(omega, np.cross([hinge_x, 0.0, 0.0], omega))
    base = rng.uniform([0.2, -0.4, -0.3], [0.9, 0.4, 0.3], size=(N_POINTS, 3))
    thetas = np.linspace(0.0, np.deg2rad(SWEEP_DEG), N_FRAMES)
    pos = np.stack([exp_map(twist, t).apply(base) for t in thetas])
    return PointTracks3D(pos, np.ones((N_FRAMES, N_POINTS), dtype=bool))


def describe(tag: str, est) -> None:
    print(f"  [{tag}] kind={est.kind.name}  axis dir={np.round(est.axis.direction, 4)}")
    print(f"         axis point={np.round(est.axis.point, 4)}  "
          f"sweep={np.degrees(abs(est.thetas[-1])):.2f} deg  rms={est.residual_rms:.2e}")


def main() -> None:
    for hinge_x in (1.0, 2.5):
        tracks = door_cloud(hinge_x)
        prior = cosine_prior(sample_secants(tracks))
        print(f"hinge at x={hinge_x}: prior eta={prior.eta:.5f} "
              f"lambda_pris={prior.lambda_pris:.3f}")

        est = estimate_twist(tracks, prior)
        describe("regularized", est)

        # alpha=0 drops the prior and falls back to |omega|/|vel|; a far
        # hinge makes the arc chord-straight enough to fool that ratio.
        bare = estimate_twist(tracks, prior, alpha=0.0)
        describe("alpha=0    ", bare)

        agree = "agree" if bare.kind is est.kind else "DISAGREE"
        print(f"  -> pitch-ratio rule and alignment prior {agree}\n")

    # The refit idiom from the pipeline: keep the regularized kind, read
    # the parameters off a pure data fit so the penalty cannot shrink them.
    tracks = door_cloud(2.5)
    prior = cosine_prior(sample_secants(tracks))
    coarse = estimate_twist(tracks, prior)
    final = estimate_twist(tracks, prior, 0.0, warm_start=coarse, kind=coarse.kind)
    assert final.kind is JointKind.REVOLUTE
    print("debiased sweep:", f"{np.degrees(abs(final.thetas[-1])):.4f} deg",
          f"(truth {SWEEP_DEG})")


if __name__ == "__main__":
    main()
