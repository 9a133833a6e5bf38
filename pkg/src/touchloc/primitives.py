"""Generated desk-scale test objects.

Proxies for common household items: a box (sugar-box scale), a cylinder
(soup-can scale), a sphere (baseball scale; deliberately featureless), and a
stepped L-bracket (tool proxy with salient edges and no mirror symmetry).
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

BOX_SIZE = (0.09, 0.175, 0.045)
CYLINDER_RADIUS = 0.033
CYLINDER_HEIGHT = 0.10
SPHERE_RADIUS = 0.0375


def box_mesh(size=BOX_SIZE, name: str = "box") -> TriMesh:
    """Axis-aligned box centered at the origin, 12 triangles."""
    sx, sy, sz = [0.5 * s for s in size]
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (0, 4, 7, 3),  # -x
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    return TriMesh.from_arrays(v, np.array(faces), name=name)


def plane_mesh(size=(0.1, 0.1), name: str = "plane") -> TriMesh:
    """Single rectangle in the z=0 plane with +z normal."""
    sx, sy = 0.5 * size[0], 0.5 * size[1]
    v = np.array([[-sx, -sy, 0.0], [sx, -sy, 0.0], [sx, sy, 0.0], [-sx, sy, 0.0]])
    return TriMesh.from_arrays(v, np.array([[0, 1, 2], [0, 2, 3]]), name=name)


def cylinder_mesh(
    radius: float = CYLINDER_RADIUS,
    height: float = CYLINDER_HEIGHT,
    segments: int = 128,
    max_edge: float = 0.002,
    name: str = "cylinder",
) -> TriMesh:
    """Closed cylinder about z, tessellated near max_edge everywhere."""
    n_rows = max(1, int(np.ceil(height / max_edge)))
    zs = np.linspace(-height / 2, height / 2, n_rows + 1)
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.column_stack([np.cos(ang), np.sin(ang)])

    verts = []
    for z in zs:
        verts.append(np.column_stack([radius * ring, np.full(segments, z)]))
    side = np.concatenate(verts)
    faces = []
    for r in range(n_rows):
        base = r * segments
        for s in range(segments):
            s2 = (s + 1) % segments
            a, b = base + s, base + s2
            c, d = base + segments + s, base + segments + s2
            faces += [[a, b, d], [a, d, c]]

    def cap(z: float, outward: float):
        n_rings = max(1, int(np.ceil(radius / max_edge)))
        radii = np.linspace(0.0, radius, n_rings + 1)[1:]
        start = len(all_verts)
        all_verts.append(np.array([[0.0, 0.0, z]]))
        for rr in radii:
            all_verts.append(np.column_stack([rr * ring, np.full(segments, z)]))
        center = start
        for s in range(segments):
            s2 = (s + 1) % segments
            tri = [center, start + 1 + s, start + 1 + s2]
            faces.append(tri if outward > 0 else tri[::-1])
        for k in range(n_rings - 1):
            inner = start + 1 + k * segments
            outer = inner + segments
            for s in range(segments):
                s2 = (s + 1) % segments
                q = [[inner + s, outer + s, outer + s2], [inner + s, outer + s2, inner + s2]]
                for tri in q:
                    faces.append(tri if outward > 0 else tri[::-1])

    all_verts = [side]
    cap(height / 2, +1.0)
    cap(-height / 2, -1.0)
    return TriMesh.from_arrays(np.concatenate(all_verts), np.array(faces), name=name)


def icosphere_mesh(radius: float = SPHERE_RADIUS, subdivisions: int = 5, name: str = "sphere") -> TriMesh:
    """Icosphere: subdivided icosahedron reprojected to the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    verts = [row for row in v]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                cache[key] = len(verts)
                verts.append(m / np.linalg.norm(m))
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        f = np.array(nf)
    return TriMesh.from_arrays(radius * np.array(verts), f, name=name)


def bracket_mesh(name: str = "bracket") -> TriMesh:
    """Stepped L-bracket assembled from axis-aligned cells, centered at origin.

    A vertical flange 20x100x60 mm with a horizontal 50x20x40 mm extension
    covering only part of the depth, which breaks every mirror symmetry.
    """
    xs = np.array([0.0, 0.02, 0.07])
    ys = np.array([0.0, 0.02, 0.10])
    zs = np.array([0.0, 0.04, 0.06])
    solid = np.zeros((2, 2, 2), dtype=bool)
    solid[0, :, :] = True  # vertical flange: full y and z extent
    solid[1, 0, 0] = True  # horizontal extension: low y, near z only
    mesh = _cell_complex_mesh(xs, ys, zs, solid, name=name)
    center = 0.5 * (mesh.vertices.max(axis=0) + mesh.vertices.min(axis=0))
    return TriMesh.from_arrays(mesh.vertices - center, mesh.faces, name=name)


def _cell_complex_mesh(xs, ys, zs, solid, name: str) -> TriMesh:
    """Boundary surface of a set of solid grid cells (watertight, outward)."""
    nx, ny, nz = solid.shape
    verts: list = []
    vid: dict = {}

    def vertex(i, j, k) -> int:
        key = (i, j, k)
        if key not in vid:
            vid[key] = len(verts)
            verts.append([xs[i], ys[j], zs[k]])
        return vid[key]

    faces = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not solid[i, j, k]:
                    continue
                for axis, delta in ((0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)):
                    nb = [i, j, k]
                    nb[axis] += delta
                    inside = 0 <= nb[axis] < solid.shape[axis] and solid[tuple(nb)]
                    if inside:
                        continue
                    faces += _cell_face(vertex, (i, j, k), axis, delta)
    return TriMesh.from_arrays(np.array(verts, dtype=float), np.array(faces), name=name)


def _cell_face(vertex, cell, axis, delta):
    i, j, k = cell
    lo = [i, j, k]
    face_coord = lo[axis] + (1 if delta > 0 else 0)
    u_axis, v_axis = [a for a in range(3) if a != axis]
    corners = []
    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
        c = [0, 0, 0]
        c[axis] = face_coord
        c[u_axis] = lo[u_axis] + du
        c[v_axis] = lo[v_axis] + dv
        corners.append(vertex(*c))
    # (u, v) CCW winding has normal +axis for x/z faces and -axis for y faces
    flip = (delta > 0) != (axis != 1)
    quad = corners
    tris = [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]]
    if flip:
        tris = [t[::-1] for t in tris]
    return tris


_PRIMITIVES = {
    "box": box_mesh,
    "cylinder": cylinder_mesh,
    "sphere": icosphere_mesh,
    "bracket": bracket_mesh,
}


def primitive_mesh(name: str) -> TriMesh:
    """Built-in object by name: box, cylinder, sphere, or bracket."""
    try:
        return _PRIMITIVES[name]()
    except KeyError:
        raise ValueError(f"unknown primitive {name!r}; choices: {sorted(_PRIMITIVES)}") from None
