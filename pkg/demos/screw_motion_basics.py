"""Tour of the SE(3) layer: twists, exponential/logarithm maps, and replay.

Run with: python demos/screw_motion_basics.py
"""

import numpy as np

from kinegraph import (
    BranchAmbiguityError,
    JointKind,
    RigidTransform,
    ScrewAxis,
    Twist,
    exp_map,
    log_map,
    replay_points,
)
from kinegraph.se3 import twist_from_axis


def main() -> None:
    # A door hinge: vertical axis through x = 0.5 m.
    axis = ScrewAxis(JointKind.REVOLUTE, (0.0, 1.0, 0.0), (0.5, 0.0, 0.0))
    twist = twist_from_axis(axis)
    print("hinge twist: omega =", twist.omega, " vel =", twist.vel)

    # Opening 40 degrees moves a handle point on a circle around the hinge.
    handle = np.array([[0.9, 0.1, 0.0]])
    g = exp_map(twist, np.deg2rad(40.0))
    moved = g.apply(handle)
    r_before = np.linalg.norm(handle[0] - [0.5, 0.1, 0.0])
    r_after = np.linalg.norm(moved[0] - [0.5, moved[0][1], 0.0])
    print(f"handle radius before/after: {r_before:.6f} / {r_after:.6f} (rigid)")

    # log_map inverts exp_map up to the canonical (unit-omega, theta) split.
    back, theta = log_map(g)
    print(f"recovered angle: {np.degrees(theta):.3f} deg")
    print("recovered axis direction:", np.round(back.omega, 12))

    # One-parameter subgroup: exp((a+b) xi) == exp(a xi) exp(b xi).
    a, b = 0.31, 0.52
    lhs = exp_map(twist, a + b).as_matrix()
    rhs = exp_map(twist, a).compose(exp_map(twist, b)).as_matrix()
    print(f"subgroup deviation: {np.abs(lhs - rhs).max():.2e}")

    # Rotations at pi are branch-ambiguous; the log refuses to guess.
    half_turn = exp_map(twist, np.pi)
    try:
        log_map(half_turn)
    except BranchAmbiguityError as err:
        print("log at pi:", err)

    # replay_points sweeps a trajectory from one twist + theta profile.
    thetas = np.linspace(0.0, np.deg2rad(40.0), 5)
    arc = np.stack([replay_points(handle, twist, t) for t in thetas])
    print("handle arc (5 frames):")
    print(np.round(arc[:, 0, :], 4))

    # Composition is plain rigid-transform algebra.
    lift = RigidTransform(np.eye(3), np.array([0.0, 0.2, 0.0]))
    print("lift-then-open handle:", np.round(g.compose(lift).apply(handle)[0], 4))


if __name__ == "__main__":
    main()
