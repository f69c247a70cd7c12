"""Rotation and pose algebra used by every other module.

Conventions:
  - rotation matrices are 3x3 float64 arrays, right-handed, det +1
  - quaternions are length-4 arrays (w, x, y, z), unit norm, canonical
    sign w >= 0 (q and -q name the same rotation)
  - the 6D rotation code stacks the first two *columns* of the rotation
    matrix, column-major: r = (c1x, c1y, c1z, c2x, c2y, c2z)

All functions are pure; arrays held by `Pose` are copied and frozen on
construction, so values are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation6D

ORTHONORMAL_TOL = 1e-9
# Columns closer than this angle (radians) cannot span a frame.
PARALLEL_ANGLE_TOL = 1e-6
# Below this arc angle slerp falls back to normalized lerp.
SLERP_LERP_THRESHOLD = 1e-6


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def is_rotation_matrix(R: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def validate_rotation_matrix(R: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation matrix must be 3x3, got {R.shape}")
    if not is_rotation_matrix(R, tol):
        raise ValueError("matrix is not orthonormal with det +1 within tolerance")
    return R


def decode_rot6d(r: np.ndarray) -> np.ndarray:
    """Decode a 6D rotation code into a rotation matrix via Gram-Schmidt.

    Column 1 is the normalized first 3-vector, column 2 the second
    3-vector orthogonalized against it, column 3 their cross product.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (6,):
        raise DegenerateRotation6D(f"expected 6 values, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise DegenerateRotation6D("6D code contains non-finite values")
    a, b = r[:3], r[3:]
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        raise DegenerateRotation6D("6D column norm below 1e-9")
    c1 = a / na
    b_orth = b - (b @ c1) * c1
    # sin(angle between a and b) = |b_orth| / |b|
    if np.linalg.norm(b_orth) / nb < PARALLEL_ANGLE_TOL:
        raise DegenerateRotation6D("6D columns parallel within 1e-6 rad")
    c2 = b_orth / np.linalg.norm(b_orth)
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def encode_rot6d(R: np.ndarray) -> np.ndarray:
    """Return the first two columns of R, stacked column-major."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation matrix must be 3x3, got {R.shape}")
    return np.concatenate([R[:, 0], R[:, 1]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Normalize to unit length and enforce the canonical sign w >= 0."""
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got {q.shape}")
    n = np.linalg.norm(q)
    if n < 1e-12 or not np.isfinite(n):
        raise ValueError("quaternion norm is degenerate")
    q = q / n
    return -q if q[0] < 0.0 else q


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; output is canonicalized (w >= 0)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_rotation_angle(q0: np.ndarray, q1: np.ndarray) -> float:
    """Rotation angle (radians, in [0, pi]) carrying q0 onto q1."""
    rel = quat_multiply(quat_conjugate(np.asarray(q0, dtype=float)), np.asarray(q1, dtype=float))
    # atan2 form stays accurate for tiny angles where acos loses digits
    return 2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))


def slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation; angle from q0 is linear in t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    half_angle = np.arctan2(np.sqrt(max(0.0, 1.0 - dot * dot)), dot)
    if 2.0 * half_angle < SLERP_LERP_THRESHOLD:
        return quat_normalize((1.0 - t) * q0 + t * q1)
    s = np.sin(half_angle)
    out = (np.sin((1.0 - t) * half_angle) * q0 + np.sin(t * half_angle) * q1) / s
    return quat_normalize(out)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    kx, ky, kz = axis
    c, s = np.cos(angle), np.sin(angle)
    v = 1.0 - c
    return np.array(
        [
            [c + kx * kx * v, kx * ky * v - kz * s, kx * kz * v + ky * s],
            [ky * kx * v + kz * s, c + ky * ky * v, ky * kz * v - kx * s],
            [kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v],
        ]
    )


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector (axis * angle) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-9:
        return np.zeros(3)
    if theta > np.pi - 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part R + I = 2 aa^T (choose largest diagonal).
        A = (R + np.eye(3)) * 0.5
        i = int(np.argmax(np.diag(A)))
        axis = A[:, i] / np.sqrt(max(A[i, i], 1e-18))
        axis /= np.linalg.norm(axis)
        # Fix the sign using the antisymmetric residue when available.
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if w @ axis < 0:
            axis = -axis
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3) plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        object.__setattr__(self, "rotation", _freeze(R))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t: np.ndarray) -> "Pose":
        return Pose(np.eye(3), t)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -(Rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a row-stack of points (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def interpolate_pose(p0: Pose, p1: Pose, t: float) -> Pose:
    """Linear translation, slerped rotation."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    q = slerp(quat_from_matrix(p0.rotation), quat_from_matrix(p1.rotation), t)
    trans = (1.0 - t) * p0.translation + t * p1.translation
    return Pose(quat_to_matrix(q), trans)
