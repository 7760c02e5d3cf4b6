"""Small geometry toolbox: rotations, quaternions, rigid poses, oriented boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rot_z(angle: float) -> np.ndarray:
    """3x3 rotation about +z by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a: np.ndarray | float) -> np.ndarray | float:
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        r = np.sqrt(1.0 + t)
        w = 0.5 * r
        x = (m[2, 1] - m[1, 2]) / (2.0 * r)
        y = (m[0, 2] - m[2, 0]) / (2.0 * r)
        z = (m[1, 0] - m[0, 1]) / (2.0 * r)
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        q = np.empty(4)
        q[1 + i] = 0.5 * r
        q[0] = (m[k, j] - m[j, k]) / (2.0 * r)
        q[1 + j] = (m[j, i] + m[i, j]) / (2.0 * r)
        q[1 + k] = (m[k, i] + m[i, k]) / (2.0 * r)
        w, x, y, z = q
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; both (..., 4) in (w, x, y, z) order."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def normalize_quats(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normalize (..., 4) quaternions; near-zero rows become identity."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    out = np.where(n > eps, q / np.where(n > eps, n, 1.0), np.array([1.0, 0.0, 0.0, 0.0]))
    return out


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """(n, 4) unit quaternions (w, x, y, z) to (n, 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass(frozen=True)
class RigidPose:
    """World-from-local rigid transform: p_world = rotation @ p_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_heading(cls, center: np.ndarray, heading: float) -> "RigidPose":
        return cls(rot_z(heading), np.asarray(center, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def quaternion(self) -> np.ndarray:
        return quat_from_matrix(self.rotation)


@dataclass(frozen=True)
class OrientedBox:
    """Box centered at `center`, yawed by `heading` about +z, half sizes `half_extents`."""

    center: np.ndarray
    half_extents: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=np.float64))
        if not np.all(self.half_extents > 0):
            raise ValueError("half_extents must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inclusive membership test for (..., 3) world points."""
        local = (np.asarray(points, dtype=np.float64) - self.center) @ rot_z(self.heading)
        return np.all(np.abs(local) <= self.half_extents, axis=-1)

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
        )
        return (signs * self.half_extents) @ rot_z(self.heading).T + self.center


def interpolate_pose(
    times: np.ndarray, centers: np.ndarray, headings: np.ndarray, t: float
) -> tuple[np.ndarray, float]:
    """Linear position and shortest-arc heading interpolation, clamped at the ends."""
    times = np.asarray(times, dtype=np.float64)
    if t <= times[0]:
        return centers[0].copy(), float(headings[0])
    if t >= times[-1]:
        return centers[-1].copy(), float(headings[-1])
    hi = int(np.searchsorted(times, t, side="right"))
    lo = hi - 1
    u = (t - times[lo]) / (times[hi] - times[lo])
    center = (1.0 - u) * centers[lo] + u * centers[hi]
    heading = headings[lo] + u * wrap_angle(headings[hi] - headings[lo])
    return center, float(wrap_angle(heading))
