"""SO(3)/SE(3) primitives on unit quaternions.

Quaternions are stored scalar-first (w, x, y, z) and canonicalized to a
non-negative scalar part so that each rotation has a single representative.
All functions broadcast over leading dimensions: a quaternion argument is
(..., 4), a rotation vector (..., 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle the closed forms degrade; switch to series expansions.
_SMALL_ANGLE = 1e-8


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so the scalar part is non-negative (lexicographic at w=0)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    flip = (w < 0) | ((w == 0) & ((x < 0) | ((x == 0) & ((y < 0) | ((y == 0) & (z < 0))))))
    return np.where(flip[..., None], -q, q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def rot_exp(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (radians) to unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a with series fallback near zero
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    factor = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    w = np.cos(half)
    return quat_canonical(np.concatenate([w, factor * rotvec], axis=-1))


def rot_log(q: np.ndarray) -> np.ndarray:
    """Logarithm map: unit quaternion to rotation vector with |v| <= pi."""
    q = quat_canonical(q)
    w = q[..., :1]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < _SMALL_ANGLE
    safe = np.where(small, 1.0, s)
    # angle/s -> 2/w * (1 - s^2/(3 w^2)) as s -> 0 (w ~ 1 after canonicalization)
    factor = np.where(small, 2.0 / np.maximum(w, _SMALL_ANGLE) * (1.0 - s**2 / (3.0 * w**2)), angle / safe)
    return factor * xyz


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(q[..., 0]))


def rotation_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between two rotations, radians in [0, pi]."""
    return quat_angle(quat_multiply(quat_conjugate(a), b))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix (3x3) to canonical unit quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        r = np.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array([0.5 * r, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    return quat_canonical(quat_normalize(q))


def frame_from_z(z_axis: np.ndarray) -> np.ndarray:
    """Quaternion whose z-axis equals z_axis, with a deterministic x choice."""
    z = np.asarray(z_axis, dtype=float)
    z = z / np.linalg.norm(z)
    # pick the world axis least aligned with z as the seed for x
    seed = np.zeros(3)
    seed[int(np.argmin(np.abs(z)))] = 1.0
    x = seed - np.dot(seed, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return matrix_to_quat(np.column_stack([x, y, z]))


def quat_mean(quats: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Average rotation: principal eigenvector of the weighted outer-product
    accumulator (Markley), invariant to per-quaternion sign flips."""
    quats = np.asarray(quats, dtype=float)
    if weights is None:
        weights = np.ones(quats.shape[0])
    a = np.einsum("i,ij,ik->jk", weights / np.sum(weights), quats, quats)
    vals, vecs = np.linalg.eigh(a)
    return quat_canonical(quat_normalize(vecs[:, -1]))


def random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random rotations (Shoemake via normalized 4D Gaussians)."""
    q = rng.standard_normal((n, 4))
    return quat_canonical(quat_normalize(q))


def compose_qt(
    qa: np.ndarray, ta: np.ndarray, qb: np.ndarray, tb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Compose SE(3) elements given as (quat, translation) arrays: a then b."""
    return quat_canonical(quat_multiply(qa, qb)), ta + quat_rotate(qa, tb)


def invert_qt(q: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    qi = quat_conjugate(np.asarray(q, dtype=float))
    return quat_canonical(qi), -quat_rotate(qi, t)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion (w, x, y, z) + translation in meters."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_canonical(quat_normalize(np.asarray(self.q, dtype=float))))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(rot: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(matrix_to_quat(rot), t)

    def compose(self, other: "Pose") -> "Pose":
        q, t = compose_qt(self.q, self.t, other.q, other.t)
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q, t = invert_qt(self.q, self.t)
        return Pose(q, t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map points from this frame into the parent frame."""
        return quat_rotate(self.q, points) + self.t

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def z_axis(self) -> np.ndarray:
        return quat_rotate(self.q, np.array([0.0, 0.0, 1.0]))
