"""Surface pose sampling and sliding-path synthesis.

Contact poses are drawn approximately area-uniform over the mesh, with a
fixed share of the budget spent on feature edges (salient geometry), a cone
perturbation of the pressing axis, a uniform roll, and a random penetration
depth. Sliding paths chain straight steps between random waypoints, projected
back to the surface each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se3
from .mesh import MeshError, SurfaceIndex, TriMesh

# share of samples placed on feature edges when any exist
EDGE_SAMPLE_FRACTION = 0.25
NO_CONTACT_LIFT = 0.005  # meters the sensor is backed off to break contact


@dataclass
class ContactPoses:
    """Sampled sensor contact frames.

    Poses sit on the surface (translation = contact point, z-axis pressing
    in); the penetration depth to render each touch with is a separate
    per-pose scalar. No-contact poses are instead lifted off the surface and
    flagged, with penetration 0."""

    quats: np.ndarray
    trans: np.ndarray
    penetration: np.ndarray
    no_contact: np.ndarray
    surface_points: np.ndarray

    def __len__(self) -> int:
        return len(self.quats)

    def pose(self, i: int) -> se3.Pose:
        return se3.Pose(self.quats[i], self.trans[i])


def feature_edges(mesh: TriMesh, angle_thresh_deg: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Edges shared by two faces whose normals differ by more than the
    threshold. Returns (segments (E, 2, 3), mean normals (E, 3))."""
    faces = mesh.faces
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    face_ids = np.tile(np.arange(len(faces)), 3)
    edges_sorted = np.sort(edges, axis=1)
    order = np.lexsort((edges_sorted[:, 1], edges_sorted[:, 0]))
    es = edges_sorted[order]
    fs = face_ids[order]
    same = np.all(es[1:] == es[:-1], axis=1)
    idx = np.nonzero(same)[0]
    f1, f2 = fs[idx], fs[idx + 1]
    cosang = np.einsum("ij,ij->i", mesh.normals[f1], mesh.normals[f2])
    sharp = cosang < np.cos(np.radians(angle_thresh_deg))
    pairs = es[idx][sharp]
    segs = mesh.vertices[pairs]
    n = mesh.normals[f1[sharp]] + mesh.normals[f2[sharp]]
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    ok = norm[:, 0] > 1e-12  # opposed normals (knife edges) have no mean direction
    return segs[ok], n[ok] / norm[ok]


def _sample_on_faces(mesh: TriMesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    areas = mesh.face_areas()
    fidx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    uv = rng.random((n, 2))
    out = uv.sum(axis=1) > 1.0
    uv[out] = 1.0 - uv[out]
    tri = mesh.vertices[mesh.faces[fidx]]
    pts = tri[:, 0] + uv[:, :1] * (tri[:, 1] - tri[:, 0]) + uv[:, 1:] * (tri[:, 2] - tri[:, 0])
    return pts, mesh.normals[fidx]


def _sample_on_edges(segs: np.ndarray, normals: np.ndarray, n: int, rng: np.random.Generator):
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    eidx = rng.choice(len(segs), size=n, p=lengths / lengths.sum())
    t = rng.random((n, 1))
    pts = segs[eidx, 0] + t * (segs[eidx, 1] - segs[eidx, 0])
    return pts, normals[eidx]


def _orient(normals: np.ndarray, orient_sigma_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Sensor pressing frames: z-axis = -normal, rolled uniformly, then tilted
    by a N(0, sigma) cone angle in a uniform direction."""
    n = len(normals)
    roll = rng.uniform(0.0, 2 * np.pi, n)
    tilt = np.radians(rng.normal(0.0, orient_sigma_deg, n))
    qz = np.zeros((n, 3))
    qz[:, 2] = roll
    qx = np.zeros((n, 3))
    qx[:, 0] = tilt
    base = np.array([se3.frame_from_z(-nv) for nv in normals])
    return se3.quat_canonical(
        se3.quat_multiply(se3.quat_multiply(base, se3.rot_exp(qz)), se3.rot_exp(qx))
    )


def sample_contact_poses(
    mesh: TriMesh,
    count: int,
    rng: np.random.Generator,
    edge_angle_deg: float = 10.0,
    orient_sigma_deg: float = 5.0,
    pen_range: tuple[float, float] = (0.0005, 0.002),
    no_contact_frac: float = 0.02,
) -> ContactPoses:
    """Sample sensor contact poses across the mesh surface.

    Positions are area-uniform, except a fixed fraction drawn on feature
    edges (dihedral angle above edge_angle_deg). Penetration depth is uniform
    in pen_range; exactly floor(no_contact_frac * count) poses are backed off
    the surface and flagged no-contact.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(mesh.faces) == 0:
        raise MeshError(f"{mesh.name}: no faces to sample")
    segs, edge_normals = feature_edges(mesh, edge_angle_deg)
    n_edge = int(round(EDGE_SAMPLE_FRACTION * count)) if len(segs) else 0
    pts_f, normals_f = _sample_on_faces(mesh, count - n_edge, rng)
    if n_edge:
        pts_e, normals_e = _sample_on_edges(segs, edge_normals, n_edge, rng)
        pts = np.concatenate([pts_f, pts_e])
        normals = np.concatenate([normals_f, normals_e])
    else:
        pts, normals = pts_f, normals_f
    perm = rng.permutation(count)
    pts, normals = pts[perm], normals[perm]

    quats = _orient(normals, orient_sigma_deg, rng)
    pen = rng.uniform(pen_range[0], pen_range[1], count)
    no_contact = np.zeros(count, dtype=bool)
    trans = pts.copy()
    n_off = int(np.floor(no_contact_frac * count))
    if n_off:
        off = rng.choice(count, size=n_off, replace=False)
        no_contact[off] = True
        pen[off] = 0.0
        z_axis = se3.quat_rotate(quats[off], np.array([0.0, 0.0, 1.0]))
        trans[off] = pts[off] - NO_CONTACT_LIFT * z_axis
    return ContactPoses(quats, trans, pen, no_contact, pts)


@dataclass
class SurfacePath:
    """Ordered on-surface poses: z-axis into the surface, x-axis along the
    direction of travel."""

    quats: np.ndarray
    trans: np.ndarray
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.quats)

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.trans, axis=0), axis=1).sum())

    def pose(self, i: int) -> se3.Pose:
        return se3.Pose(self.quats[i], self.trans[i])


def geodesic_path(
    mesh: TriMesh,
    rng: np.random.Generator,
    length: float,
    step: float,
    waypoint_count: int = 5,
    waypoints: np.ndarray | None = None,
    index: SurfaceIndex | None = None,
    max_retries: int = 20,
) -> SurfacePath:
    """On-surface sliding path of total arc length ~length.

    Walks straight toward the next waypoint in steps of `step` and projects
    each step back to the nearest surface point. Waypoints that cannot be
    reached (disconnected components) are re-seeded up to max_retries times.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if length < step:
        raise ValueError("length must be >= step")
    if index is None:
        index = mesh.surface_index()

    def draw_waypoint() -> np.ndarray:
        p, _ = _sample_on_faces(mesh, 1, rng)
        return p[0]

    if waypoints is not None:
        queue = [np.asarray(w, dtype=float) for w in waypoints]
        start = queue.pop(0)
    else:
        queue = [draw_waypoint() for _ in range(waypoint_count)]
        start = queue.pop(0)

    pos, fid = index.project(start.reshape(1, 3))
    pos = pos[0]
    positions = [pos]
    normals = [index.mesh.normals[fid[0]]]
    tangents: list = []
    total = 0.0
    retries = 0
    target = queue.pop(0) if queue else draw_waypoint()
    stall = 0
    prev_gap = np.linalg.norm(target - pos)
    iter_budget = int(8 * length / step) + 200
    while total < length - 0.5 * step:
        iter_budget -= 1
        if iter_budget < 0:
            raise MeshError(f"{mesh.name}: path walker exceeded its iteration budget")
        gap = np.linalg.norm(target - pos)
        if gap < step:
            target = queue.pop(0) if queue else draw_waypoint()
            prev_gap = np.linalg.norm(target - pos)
            stall = 0
            continue
        direction = (target - pos) / gap
        proj, fid = index.project((pos + step * direction).reshape(1, 3))
        new_pos = proj[0]
        moved = np.linalg.norm(new_pos - pos)
        if moved < 0.25 * step:
            # stuck against a gap in the surface; nudge with a fresh waypoint
            stall += 1
            if stall > 3:
                retries += 1
                if retries > max_retries:
                    raise MeshError(f"{mesh.name}: path stalled after {max_retries} waypoint re-seeds")
                target = draw_waypoint()
                prev_gap = np.linalg.norm(target - pos)
                stall = 0
            continue
        new_gap = np.linalg.norm(target - new_pos)
        if new_gap > prev_gap - 0.05 * step:
            stall += 1
            if stall > 8:
                retries += 1
                if retries > max_retries:
                    raise MeshError(f"{mesh.name}: path stalled after {max_retries} waypoint re-seeds")
                target = draw_waypoint()
                prev_gap = np.linalg.norm(target - new_pos)
                stall = 0
        else:
            stall = 0
            prev_gap = new_gap
        total += moved
        positions.append(new_pos)
        normals.append(index.mesh.normals[fid[0]])
        tangents.append((new_pos - pos) / moved)
        pos = new_pos

    positions = np.array(positions)
    normals = np.array(normals)
    if tangents:
        tangents = [tangents[0]] + tangents  # first pose takes the outgoing direction
    else:
        tangents = [_any_tangent(normals[0])]
    quats = np.array(
        [_path_frame(n, tg) for n, tg in zip(normals, np.array(tangents))]
    )
    return SurfacePath(quats, positions, normals)


def _any_tangent(normal: np.ndarray) -> np.ndarray:
    q = se3.frame_from_z(-normal)
    return se3.quat_rotate(q, np.array([1.0, 0.0, 0.0]))


def _path_frame(normal: np.ndarray, travel: np.ndarray) -> np.ndarray:
    z = -normal / np.linalg.norm(normal)
    x = travel - np.dot(travel, z) * z
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # travel parallel to normal; fall back to a fixed tangent
        return se3.frame_from_z(z)
    x /= nx
    y = np.cross(z, x)
    return se3.matrix_to_quat(np.column_stack([x, y, z]))
