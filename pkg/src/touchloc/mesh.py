"""Triangle meshes: OBJ/STL/PLY loading, vertex spatial index, surface projection.

Distances from arbitrary points to the surface are served by a KD-tree over
mesh vertices. That is a conservative surrogate for true point-to-surface
distance (never smaller), with slack bounded by the longest edge, so meshes
are refined to a maximum edge length before the index is built.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_INDEX_EDGE = 0.002  # meters; matches the sensor's maximum penetration
_MAX_INDEX_FACES = 8_000_000


class MeshError(Exception):
    """Unreadable, empty, or otherwise unusable mesh input."""


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-face unit normals.

    vertices: (V, 3) float64, meters. faces: (F, 3) int64. Degenerate
    (zero-area) faces are dropped at construction.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    name: str = "mesh"
    _index_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def from_arrays(vertices: np.ndarray, faces: np.ndarray, name: str = "mesh") -> "TriMesh":
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(vertices) == 0 or len(faces) == 0:
            raise MeshError(f"{name}: empty mesh")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshError(f"{name}: face index out of range")
        tri = vertices[faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area2 = np.linalg.norm(cross, axis=1)
        keep = area2 > 1e-16
        if not keep.any():
            raise MeshError(f"{name}: all faces degenerate")
        faces = faces[keep]
        normals = cross[keep] / area2[keep, None]
        return TriMesh(vertices, faces, normals, name)

    @property
    def diagonal(self) -> float:
        """Axis-aligned bounding-box diagonal, meters."""
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def longest_edge(self) -> float:
        tri = self.vertices[self.faces]
        e = np.stack(
            [tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], axis=1
        )
        return float(np.linalg.norm(e, axis=2).max())

    def surface_index(self, max_edge: float | None = DEFAULT_INDEX_EDGE) -> "SurfaceIndex":
        """Vertex KD-tree index; cached per max_edge (mesh is immutable)."""
        key = max_edge
        if key not in self._index_cache:
            self._index_cache[key] = SurfaceIndex.build(self, max_edge=max_edge)
        return self._index_cache[key]

    def save_obj(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"# {self.name}\n")
            for v in self.vertices:
                f.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))
            for a, b, c in self.faces + 1:
                f.write(f"f {a} {b} {c}\n")


def load_mesh(path) -> TriMesh:
    """Load OBJ, STL (binary or ASCII), or ASCII PLY."""
    path = str(path)
    lower = path.lower()
    try:
        if lower.endswith(".obj"):
            return _load_obj(path)
        if lower.endswith(".stl"):
            return _load_stl(path)
        if lower.endswith(".ply"):
            return _load_ply(path)
    except MeshError:
        raise
    except Exception as exc:
        raise MeshError(f"{path}: parse failed ({exc})") from exc
    raise MeshError(f"{path}: unsupported extension (want .obj/.stl/.ply)")


def _load_obj(path: str) -> TriMesh:
    vertices: list = []
    faces: list = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: bad vertex line")
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face with <3 vertices")
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh.from_arrays(np.array(vertices, dtype=float), np.array(faces), name=path)


def _load_stl(path: str) -> TriMesh:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 84:
        is_binary = False
    else:
        (count,) = struct.unpack_from("<I", data, 80)
        is_binary = len(data) == 84 + 50 * count
    if is_binary:
        count = struct.unpack_from("<I", data, 80)[0]
        rec = np.frombuffer(
            data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]), count=count, offset=84
        )
        tri = rec["v"].astype(float)
    else:
        text = data.decode("ascii", errors="replace")
        coords = []
        for line in text.splitlines():
            parts = line.split()
            if parts and parts[0] == "vertex":
                coords.append([float(x) for x in parts[1:4]])
        if len(coords) == 0 or len(coords) % 3 != 0:
            raise MeshError(f"{path}: malformed ASCII STL")
        tri = np.array(coords, dtype=float).reshape(-1, 3, 3)
    if len(tri) == 0:
        raise MeshError(f"{path}: empty STL")
    flat = tri.reshape(-1, 3)
    vertices, inverse = np.unique(flat, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    return TriMesh.from_arrays(vertices, faces, name=path)


def _load_ply(path: str) -> TriMesh:
    with open(path, "rb") as f:
        lines = f.read().decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}: not a PLY file")
    n_vert = n_face = None
    vert_props: list = []
    in_vertex = False
    body_at = None
    fmt_ok = False
    for i, line in enumerate(lines[1:], 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "ascii"
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if parts[1] == "vertex":
                n_vert = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            vert_props.append(parts[-1])
        elif parts[0] == "end_header":
            body_at = i + 1
            break
    if not fmt_ok:
        raise MeshError(f"{path}: only ASCII PLY supported")
    if body_at is None or n_vert is None or n_face is None:
        raise MeshError(f"{path}: incomplete PLY header")
    try:
        ix, iy, iz = vert_props.index("x"), vert_props.index("y"), vert_props.index("z")
    except ValueError:
        raise MeshError(f"{path}: vertex element lacks x/y/z") from None
    rows = lines[body_at:]
    if len(rows) < n_vert + n_face:
        raise MeshError(f"{path}: truncated PLY body")
    vertices = np.empty((n_vert, 3))
    for i in range(n_vert):
        vals = rows[i].split()
        vertices[i] = [float(vals[ix]), float(vals[iy]), float(vals[iz])]
    faces = []
    for i in range(n_face):
        vals = [int(x) for x in rows[n_vert + i].split()]
        idx = vals[1 : 1 + vals[0]]
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh.from_arrays(vertices, np.array(faces), name=path)


def subdivide_to_edge(mesh: TriMesh, max_edge: float) -> TriMesh:
    """Midpoint 4-split of every face whose longest edge exceeds max_edge.

    Midpoints are deduplicated per edge; the refined vertex set stays on the
    original surface for planar faces (curved meshes should be generated at
    their target resolution instead).
    """
    vertices = [v for v in mesh.vertices]
    faces = mesh.faces.tolist()
    while True:
        va = np.array(vertices)
        fa = np.array(faces)
        tri = va[fa]
        edge_len = np.linalg.norm(
            np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], axis=1),
            axis=2,
        ).max(axis=1)
        split = edge_len > max_edge
        if not split.any():
            break
        if len(faces) + 3 * int(split.sum()) > _MAX_INDEX_FACES:
            raise MeshError(
                f"{mesh.name}: refinement to {max_edge} m edges exceeds {_MAX_INDEX_FACES} faces; "
                "pass a larger max_edge"
            )
        midpoint: dict = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                midpoint[key] = len(vertices)
                vertices.append(0.5 * (vertices[i] + vertices[j]))
            return midpoint[key]

        new_faces = []
        for f_idx, (a, b, c) in enumerate(faces):
            if not split[f_idx]:
                new_faces.append([a, b, c])
                continue
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        faces = new_faces
    return TriMesh.from_arrays(np.array(vertices), np.array(faces), name=mesh.name)


def closest_point_on_triangles(points: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point on each triangle to each query point.

    points: (N, 3); tri: (N, 3, 3) one triangle per point. Returns
    (closest (N, 3), squared distance (N,)). Region-based method (Ericson).
    """
    p = np.asarray(points, dtype=float)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def settle(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    settle((d1 <= 0) & (d2 <= 0), a)
    settle((d3 >= 0) & (d4 <= d3), b)
    settle((d6 >= 0) & (d5 <= d6), c)

    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)

    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)

    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
    settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
    settle(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)

    d2_out = np.einsum("ij,ij->i", p - out, p - out)
    return out, d2_out


@dataclass
class SurfaceIndex:
    """KD-tree over (refined) mesh vertices plus vertex->face incidence.

    Immutable after build; all queries are read-only and thread-safe.
    """

    mesh: TriMesh
    tree: cKDTree
    _incidence_indptr: np.ndarray
    _incidence_faces: np.ndarray

    @staticmethod
    def build(mesh: TriMesh, max_edge: float | None = DEFAULT_INDEX_EDGE) -> "SurfaceIndex":
        refined = mesh if max_edge is None or mesh.longest_edge() <= max_edge else subdivide_to_edge(mesh, max_edge)
        tree = cKDTree(refined.vertices)
        # CSR incidence: faces touching each vertex
        flat = refined.faces.ravel()
        order = np.argsort(flat, kind="stable")
        sorted_verts = flat[order]
        face_of = order // 3
        indptr = np.searchsorted(sorted_verts, np.arange(len(refined.vertices) + 1))
        return SurfaceIndex(refined, tree, indptr, face_of)

    def nearest_vertex_distance(self, points: np.ndarray, upper_bound: float = np.inf) -> np.ndarray:
        """Distance to the nearest mesh vertex; inf beyond upper_bound."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d, _ = self.tree.query(points, k=1, distance_upper_bound=upper_bound, workers=-1)
        return d

    def faces_near_vertex(self, vertex_id: int) -> np.ndarray:
        return self._incidence_faces[self._incidence_indptr[vertex_id] : self._incidence_indptr[vertex_id + 1]]

    def project(self, points: np.ndarray, k: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Project points onto the surface via faces incident to the k nearest
        vertices. Returns (projected points (N, 3), face ids (N,))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(k, len(self.mesh.vertices))
        _, nn = self.tree.query(points, k=k, workers=-1)
        nn = np.atleast_2d(nn)
        out = np.empty_like(points)
        fid = np.empty(len(points), dtype=np.int64)
        verts = self.mesh.vertices
        faces = self.mesh.faces
        for i, p in enumerate(points):
            cand = np.unique(np.concatenate([self.faces_near_vertex(v) for v in nn[i]]))
            tri = verts[faces[cand]]
            closest, d2 = closest_point_on_triangles(np.broadcast_to(p, (len(cand), 3)), tri)
            j = int(np.argmin(d2))
            out[i] = closest[j]
            fid[i] = cand[j]
        return out, fid


def surface_distance(index: SurfaceIndex, point: np.ndarray) -> float:
    """Nearest-vertex distance: conservative point-to-surface distance."""
    return float(index.nearest_vertex_distance(np.asarray(point, dtype=float).reshape(1, 3))[0])
