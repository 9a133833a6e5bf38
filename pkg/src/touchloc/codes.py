"""Fixed-length tactile codes from local contact point clouds.

A deterministic stand-in for a learned point-cloud embedding: points are
voxelized over the sensor volume, counts are normalized so duplicated points
change nothing, and a separable triangular blur makes similarity fall off
smoothly with pose offset instead of snapping at voxel borders. Codes are
compared by cosine similarity. An external code table can be swapped in via
the binary exchange format below.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d


class NoContactError(Exception):
    """The point cloud is empty; the caller should substitute a random code."""


@dataclass(frozen=True)
class CodeConfig:
    """Voxel grid over the sensor volume and blur width.

    Grid dims are (nx, ny, nz) over x_range x y_range x z_range; the code
    length is their product (default 8*8*4 = 256).
    """

    grid: tuple[int, int, int] = (8, 8, 4)
    x_range: tuple[float, float] = (-0.010, 0.010)
    y_range: tuple[float, float] = (-0.0075, 0.0075)
    z_range: tuple[float, float] = (0.0, 0.002)
    smoothing: int = 1  # triangular kernel half-width in voxels; 0 disables

    def __post_init__(self):
        if min(self.grid) < 1:
            raise ValueError("grid dims must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")

    @property
    def dim(self) -> int:
        return int(np.prod(self.grid))


def triangular_kernel(width: int) -> np.ndarray:
    """Symmetric triangular weights of support 2*width + 1, normalized."""
    k = width + 1 - np.abs(np.arange(-width, width + 1))
    return k / k.sum()


def encode(points: np.ndarray, cfg: CodeConfig = CodeConfig()) -> np.ndarray:
    """Encode a sensor-frame point cloud into a code vector (float32, cfg.dim).

    Per-voxel point fractions, blurred along each axis, flattened in (x, y, z)
    order. Raises NoContactError on an empty cloud.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise NoContactError("empty point cloud")
    nx, ny, nz = cfg.grid
    idx = []
    for axis, (lo, hi), n in zip(range(3), (cfg.x_range, cfg.y_range, cfg.z_range), cfg.grid):
        i = np.floor((points[:, axis] - lo) / (hi - lo) * n).astype(int)
        idx.append(np.clip(i, 0, n - 1))
    flat = (idx[0] * ny + idx[1]) * nz + idx[2]
    grid = np.bincount(flat, minlength=cfg.dim).astype(float).reshape(nx, ny, nz)
    grid /= len(points)
    if cfg.smoothing > 0:
        kern = triangular_kernel(cfg.smoothing)
        for axis in range(3):
            grid = convolve1d(grid, kern, axis=axis, mode="constant", cval=0.0)
    return grid.reshape(-1).astype(np.float32)


def random_code(rng: np.random.Generator, dim: int = 256) -> np.ndarray:
    """Substitute code for no-contact frames: a random Gaussian vector."""
    return rng.standard_normal(dim).astype(np.float32)


def code_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; raises on zero vectors."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"code length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def write_code_table(codes: np.ndarray, bin_path) -> None:
    """Write an M x D code table: little-endian float32 row-major binary plus
    a JSON sidecar {M, D, checksum} at <bin_path>.json."""
    codes = np.ascontiguousarray(np.asarray(codes, dtype="<f4"))
    if codes.ndim != 2:
        raise ValueError("code table must be 2-D")
    raw = codes.tobytes()
    Path(bin_path).write_bytes(raw)
    sidecar = {
        "M": int(codes.shape[0]),
        "D": int(codes.shape[1]),
        "checksum": hashlib.sha256(raw).hexdigest(),
    }
    Path(str(bin_path) + ".json").write_text(json.dumps(sidecar, indent=1))


def read_code_table(bin_path) -> np.ndarray:
    """Read and verify a code table written by write_code_table."""
    raw = Path(bin_path).read_bytes()
    meta = json.loads(Path(str(bin_path) + ".json").read_text())
    if hashlib.sha256(raw).hexdigest() != meta["checksum"]:
        raise ValueError(f"{bin_path}: checksum mismatch")
    codes = np.frombuffer(raw, dtype="<f4")
    if len(codes) != meta["M"] * meta["D"]:
        raise ValueError(f"{bin_path}: size does not match sidecar M x D")
    return codes.reshape(meta["M"], meta["D"]).copy()
