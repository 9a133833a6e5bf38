"""Synthetic tactile sensor: depth heightmaps of the mesh patch under the gel.

A sensor pose is the on-surface contact frame: origin at the contact point,
+z pressing into the object. How hard the sensor is pressed is a separate
penetration parameter; the deformed gel plane sits at z = penetration, and a
surface point at height z below it registers depth (penetration - z), clamped
to [0, max_penetration] (0 marks no contact). Rendering casts parallel rays
along +z, implemented as an exact orthographic z-buffer rasterization of the
candidate faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se3
from .mesh import TriMesh


@dataclass(frozen=True)
class SensorConfig:
    """Gel geometry and pixel grid.

    half_extents: (x, y) in meters; the long axis is x. The heightmap array
    has shape (height, width) = (160, 120) with rows sweeping x and columns
    sweeping y, giving square 0.125 mm pixels over the 20 x 15 mm plane.
    """

    half_extents: tuple[float, float] = (0.010, 0.0075)
    resolution: tuple[int, int] = (120, 160)  # (width, height) pixels
    max_penetration: float = 0.002
    mask_threshold: float = 0.00005
    noise_sigma: float = 0.0
    perspective: bool = False  # reserved; only orthographic is implemented

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be positive")
        if min(self.resolution) < 8:
            raise ValueError("resolution must be at least 8x8")
        if self.max_penetration <= 0:
            raise ValueError("max_penetration must be positive")
        if self.perspective:
            raise NotImplementedError("perspective ray casting is reserved")

    @property
    def shape(self) -> tuple[int, int]:
        """Heightmap array shape (rows, cols) = (height, width)."""
        return (self.resolution[1], self.resolution[0])

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x centers per row, y centers per column), meters."""
        ex, ey = self.half_extents
        rows, cols = self.shape
        xs = -ex + (np.arange(rows) + 0.5) * (2 * ex / rows)
        ys = -ey + (np.arange(cols) + 0.5) * (2 * ey / cols)
        return xs, ys

    @property
    def pixel_area(self) -> float:
        ex, ey = self.half_extents
        rows, cols = self.shape
        return (2 * ex / rows) * (2 * ey / cols)


def render_touch(
    mesh: TriMesh,
    pose: se3.Pose,
    cfg: SensorConfig,
    penetration: float = 0.002,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render the heightmap at an on-surface `pose` pressed in by `penetration`.

    Deterministic for noise_sigma == 0. With noise enabled, zero-mean Gaussian
    noise (from `rng`) is added to contact pixels only.
    """
    rot = pose.rotation_matrix()
    verts = (mesh.vertices - pose.t) @ rot  # object -> sensor frame
    tri = verts[mesh.faces]

    ex, ey = cfg.half_extents
    rows, cols = cfg.shape
    margin = max(2 * ex / rows, 2 * ey / cols)
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    cand = (
        (hi[:, 0] >= -ex - margin)
        & (lo[:, 0] <= ex + margin)
        & (hi[:, 1] >= -ey - margin)
        & (lo[:, 1] <= ey + margin)
        & (lo[:, 2] <= penetration + margin)  # faces entirely beyond the gel plane cannot contact
        & (hi[:, 2] >= penetration - cfg.max_penetration - margin)  # nor faces behind full compression
    )
    zbuf = np.full((rows, cols), np.inf)
    if cand.any():
        _rasterize_min_z(tri[cand], cfg, zbuf)
    hm = np.where(np.isfinite(zbuf), np.clip(penetration - zbuf, 0.0, cfg.max_penetration), 0.0)
    if cfg.noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        contact = hm > 0.0
        noisy = np.clip(hm + rng.normal(0.0, cfg.noise_sigma, hm.shape), 0.0, cfg.max_penetration)
        hm = np.where(contact, noisy, 0.0)
    return hm


def _rasterize_min_z(tri: np.ndarray, cfg: SensorConfig, zbuf: np.ndarray) -> None:
    """Orthographic min-z rasterization of triangles (in sensor frame) into zbuf."""
    ex, ey = cfg.half_extents
    rows, cols = cfg.shape
    px = 2 * ex / rows
    py = 2 * ey / cols
    # continuous pixel coordinates: r = (x + ex)/px - 0.5
    a = tri[:, 0]
    b = tri[:, 1]
    c = tri[:, 2]
    xs, ys = cfg.pixel_centers()
    r_lo = np.clip(np.ceil((tri[..., 0].min(axis=1) + ex) / px - 0.5).astype(int), 0, rows - 1)
    r_hi = np.clip(np.floor((tri[..., 0].max(axis=1) + ex) / px - 0.5).astype(int), 0, rows - 1)
    c_lo = np.clip(np.ceil((tri[..., 1].min(axis=1) + ey) / py - 0.5).astype(int), 0, cols - 1)
    c_hi = np.clip(np.floor((tri[..., 1].max(axis=1) + ey) / py - 0.5).astype(int), 0, cols - 1)
    for i in range(len(tri)):
        if r_lo[i] > r_hi[i] or c_lo[i] > c_hi[i]:
            continue
        ax, ay, az = a[i]
        bx, by, bz = b[i]
        cx, cy, cz = c[i]
        det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(det) < 1e-18:  # edge-on in pixel space
            continue
        gx = xs[r_lo[i] : r_hi[i] + 1][:, None]
        gy = ys[c_lo[i] : c_hi[i] + 1][None, :]
        # barycentric weights: p = a + lam_b (b - a) + lam_c (c - a)
        lam_b = ((gx - ax) * (cy - ay) - (cx - ax) * (gy - ay)) / det
        lam_c = ((bx - ax) * (gy - ay) - (gx - ax) * (by - ay)) / det
        inside = (lam_b >= 0.0) & (lam_c >= 0.0) & (lam_b + lam_c <= 1.0)
        if not inside.any():
            continue
        z = az + lam_b * (bz - az) + lam_c * (cz - az)
        z = np.where(inside, z, np.inf)
        view = zbuf[r_lo[i] : r_hi[i] + 1, c_lo[i] : c_hi[i] + 1]
        np.minimum(view, z, out=view)


def extract_contact(hm: np.ndarray, cfg: SensorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Threshold the heightmap into a contact mask and unproject to 3D.

    Returns (mask (rows, cols) bool, points (K, 3) in the sensor frame with
    z = penetration depth). K equals the number of true mask pixels.
    """
    if hm.shape != cfg.shape:
        raise ValueError(f"heightmap shape {hm.shape} does not match config {cfg.shape}")
    mask = hm > cfg.mask_threshold
    r, c = np.nonzero(mask)
    xs, ys = cfg.pixel_centers()
    points = np.column_stack([xs[r], ys[c], hm[r, c]])
    return mask, points


def contact_area(mask: np.ndarray, cfg: SensorConfig) -> float:
    """Contact patch area in square meters."""
    return float(mask.sum()) * cfg.pixel_area


def write_pgm(hm: np.ndarray, path) -> None:
    """Dump a heightmap as 16-bit PGM in micrometers."""
    um = np.clip(np.round(hm * 1e6), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{hm.shape[1]} {hm.shape[0]}\n65535\n".encode())
        f.write(um.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a heightmap dumped by write_pgm, back to meters."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    um = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)
    return um.astype(float) * 1e-6


def write_ply_points(points: np.ndarray, path) -> None:
    """Dump a point cloud as ASCII PLY."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for p in points:
            f.write("%.9g %.9g %.9g\n" % (p[0], p[1], p[2]))
