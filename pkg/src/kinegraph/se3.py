"""Screw-motion geometry: twists, rigid transforms, and pinhole projection.

Conventions
-----------
* A twist pairs an angular part ``omega`` with a linear part ``vel``; the
  rigid motion after advancing a configuration ``theta`` is the matrix
  exponential of ``theta * [twist]``.
* Camera poses are world-from-camera: ``p_world = R @ p_cam + t``.
* Pixel coordinates are ``(u, v)`` with ``u`` along image columns and ``v``
  along rows; pixel centers sit at integer coordinates, so ``(cx, cy)`` is
  near the image center for a ``width x height`` sensor.
* Depth is the camera-frame z coordinate in meters; 0 marks invalid pixels.

Numerical policy: rotation angles below ``ROT_ZERO_EPS`` are treated as pure
translation, Taylor series replace the closed-form Rodrigues coefficients
below ``SMALL_ANGLE``, and log maps within ``PI_MARGIN`` of pi raise, because
the branch there is ambiguous.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BranchAmbiguityError, DegenerateTwistError, ShapeError

ROT_ZERO_EPS = 1e-12
SMALL_ANGLE = 1e-4
PI_MARGIN = 1e-6
DEGENERATE_EPS = 1e-6
ORTHONORMAL_TOL = 1e-8


class JointKind(enum.Enum):
    REVOLUTE = "REVOLUTE"
    PRISMATIC = "PRISMATIC"


def _as_vec3(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise ShapeError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Twist:
    """Screw velocity (omega, vel); neither part is normalized here."""

    omega: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _as_vec3(self.omega, "omega"))
        object.__setattr__(self, "vel", _as_vec3(self.vel, "vel"))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.vel])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) with an orthonormality check on construction."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation has negative determinant")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(
            self, "translation", _as_vec3(self.translation, "translation")
        )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, mat) -> "RigidTransform":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (4, 4):
            raise ShapeError(f"homogeneous matrix must be 4x4, got {mat.shape}")
        return cls(mat[:3, :3], mat[:3, 3])

    def as_matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"points must be (3,) or (N, 3), got {pts.shape}")
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class ScrewAxis:
    """Joint axis in world coordinates.

    ``point`` is meaningful for REVOLUTE axes only (a point on the rotation
    axis); prismatic axes are translation-invariant so it stays at zero.
    """

    kind: JointKind
    direction: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        direction = _as_vec3(self.direction, "direction")
        norm = np.linalg.norm(direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"axis direction must be unit length, norm={norm}")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "point", _as_vec3(self.point, "point"))


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


def skew(vec) -> np.ndarray:
    """Cross-product matrix; batched over leading axes of (..., 3) input."""
    v = np.asarray(vec, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation_coefficients(angle: np.ndarray):
    """Rodrigues coefficients (a, b, c) with Taylor fallbacks near zero.

    R = I + a K + b K^2 and V = I + b K + c K^2 for K = skew(phi),
    where a = sin(t)/t, b = (1 - cos(t))/t^2, c = (t - sin(t))/t^3.
    """
    t = np.asarray(angle, dtype=float)
    t2 = t * t
    small = t < SMALL_ANGLE
    # Avoid 0/0 warnings on the small branch; values there come from series.
    safe = np.where(small, 1.0, t)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(
        small,
        0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        (1.0 - np.cos(safe)) / (safe * safe),
    )
    c = np.where(
        small,
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        (safe - np.sin(safe)) / (safe * safe * safe),
    )
    return a, b, c


def rodrigues(phi):
    """Rotation matrix and translation factor for rotation vectors.

    Accepts (..., 3) rotation vectors; returns (R, V) of shape (..., 3, 3)
    with R = exp(skew(phi)) and V the integral factor that maps the linear
    twist component to a translation.
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1)
    a, b, c = rotation_coefficients(angle)
    k = skew(phi)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    rot = eye + a[..., None, None] * k + b[..., None, None] * k2
    vmat = eye + b[..., None, None] * k + c[..., None, None] * k2
    return rot, vmat


def exp_map(twist: Twist, theta: float) -> RigidTransform:
    """Rigid motion produced by advancing the twist by configuration theta."""
    theta = float(theta)
    phi = twist.omega * theta
    rot, vmat = rodrigues(phi)
    return RigidTransform(rot, vmat @ (twist.vel * theta))


def log_map(transform: RigidTransform):
    """Invert exp_map into a canonical (twist, theta) pair.

    Canonical gauge: unit ``omega`` with theta equal to the rotation angle
    when rotation is present; otherwise zero ``omega``, unit ``vel`` and
    theta equal to the translation length. The identity returns a zero twist
    with theta 0. Rotations within PI_MARGIN of pi raise BranchAmbiguityError.
    """
    rot = transform.rotation
    cos_angle = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle >= np.pi - PI_MARGIN:
        raise BranchAmbiguityError(
            f"rotation angle {angle:.9f} is within {PI_MARGIN} of pi"
        )
    if angle < ROT_ZERO_EPS:
        length = float(np.linalg.norm(transform.translation))
        if length < ROT_ZERO_EPS:
            return Twist(np.zeros(3), np.zeros(3)), 0.0
        return Twist(np.zeros(3), transform.translation / length), length
    axis = (
        np.array(
            [
                rot[2, 1] - rot[1, 2],
                rot[0, 2] - rot[2, 0],
                rot[1, 0] - rot[0, 1],
            ]
        )
        / (2.0 * np.sin(angle))
    )
    _, vmat = rodrigues(axis * angle)
    u = np.linalg.solve(vmat, transform.translation)
    return Twist(axis, u / angle), angle


def screw_axis_from_twist(twist: Twist) -> ScrewAxis:
    """Geometric axis of a twist.

    A significant angular part wins: direction omega/|omega| with the axis
    point (omega x vel)/|omega|^2, the point of the rotation axis closest to
    the origin. Otherwise a significant linear part gives a prismatic axis.
    """
    omega_norm = np.linalg.norm(twist.omega)
    if omega_norm > DEGENERATE_EPS:
        direction = twist.omega / omega_norm
        point = np.cross(twist.omega, twist.vel) / (omega_norm * omega_norm)
        return ScrewAxis(JointKind.REVOLUTE, direction, point)
    vel_norm = np.linalg.norm(twist.vel)
    if vel_norm > DEGENERATE_EPS:
        return ScrewAxis(JointKind.PRISMATIC, twist.vel / vel_norm, np.zeros(3))
    raise DegenerateTwistError(
        f"twist has no usable component (|omega|={omega_norm:.2e}, "
        f"|vel|={vel_norm:.2e})"
    )


def twist_from_axis(axis: ScrewAxis) -> Twist:
    """Unit-rate twist generating motion about (or along) ``axis``.

    Inverse of ``screw_axis_from_twist`` up to gauge: a REVOLUTE result
    rotates 1 rad per unit of configuration, a PRISMATIC one translates 1 m.
    """
    if axis.kind is JointKind.REVOLUTE:
        return Twist(axis.direction, np.cross(axis.point, axis.direction))
    return Twist(np.zeros(3), axis.direction)


def replay_points(points, twist: Twist, theta: float) -> np.ndarray:
    """Apply exp_map(twist, theta) to a point batch."""
    return exp_map(twist, theta).apply(points)


def project(points, intrinsics: CameraIntrinsics, pose: RigidTransform):
    """Project world points into a pinhole camera.

    Returns ``(uvz, valid)`` where uvz rows hold (u, v, depth). Points behind
    the camera or whose nearest pixel falls outside the image are flagged
    invalid rather than dropped, so indices stay aligned with the input.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be (3,) or (N, 3), got {pts.shape}")
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    valid = z > 1e-9
    safe_z = np.where(valid, z, 1.0)
    u = intrinsics.fx * cam[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / safe_z + intrinsics.cy
    valid &= (u >= -0.5) & (u < intrinsics.width - 0.5)
    valid &= (v >= -0.5) & (v < intrinsics.height - 0.5)
    uvz = np.stack([u, v, z], axis=1)
    if single:
        return uvz[0], bool(valid[0])
    return uvz, valid


def unproject(depth, intrinsics: CameraIntrinsics, pose: RigidTransform):
    """Lift a depth map to world points, one per valid pixel.

    Returns ``(points, valid)`` with ``points`` of shape (M, 3) in row-major
    scan order of the valid pixels, so ``np.nonzero(valid)`` recovers each
    point's (row, col). Pixels with depth <= 0 or non-finite depth are
    invalid.
    """
    d = np.asarray(depth, dtype=float)
    if d.shape != (intrinsics.height, intrinsics.width):
        raise ShapeError(
            f"depth shape {d.shape} disagrees with intrinsics "
            f"({intrinsics.height}, {intrinsics.width})"
        )
    valid = np.isfinite(d) & (d > 0.0)
    rows, cols = np.nonzero(valid)
    z = d[rows, cols]
    x = (cols - intrinsics.cx) * z / intrinsics.fx
    y = (rows - intrinsics.cy) * z / intrinsics.fy
    cam = np.stack([x, y, z], axis=1)
    points = cam @ pose.rotation.T + pose.translation
    return points, valid
