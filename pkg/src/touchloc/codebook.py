"""Per-object tactile codebook: dense (pose, code) pairs with pose-space lookup.

Poses are indexed by a KD-tree over 6-vectors [translation, alpha * log(R)],
so a candidate pose's code is fetched by nearest-neighbor lookup instead of
rendering. Code retrieval (top-k by cosine similarity) is an exact scan: one
matrix-vector product over the M x D code table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import codes as codes_mod
from . import se3
from .codes import CodeConfig, NoContactError
from .mesh import TriMesh
from .sampling import sample_contact_poses
from .sensor import SensorConfig, extract_contact, render_touch

DEFAULT_ALPHA = 0.01  # rotation scaling factor for pose keys


def pose_keys(quats: np.ndarray, trans: np.ndarray, alpha: float) -> np.ndarray:
    """6-vector KD-tree keys: [t, alpha * log(q)] with canonical quaternions."""
    rv = se3.rot_log(se3.quat_canonical(quats))
    return np.concatenate([np.atleast_2d(trans), alpha * np.atleast_2d(rv)], axis=1)


@dataclass
class Codebook:
    """M stored sensor poses with their tactile codes and a pose-key KD-tree.

    Immutable after construction; all queries are read-only.
    """

    quats: np.ndarray  # (M, 4) canonical unit quaternions
    trans: np.ndarray  # (M, 3) meters
    codes: np.ndarray  # (M, D) float32
    alpha: float = DEFAULT_ALPHA
    object_id: str = "object"
    sensor_cfg: SensorConfig = field(default_factory=SensorConfig)
    code_cfg: CodeConfig = field(default_factory=CodeConfig)
    seed: int | None = None
    _tree: cKDTree = field(init=False, repr=False, compare=False)
    _code_norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.quats = se3.quat_canonical(np.asarray(self.quats, dtype=float).reshape(-1, 4))
        self.trans = np.asarray(self.trans, dtype=float).reshape(-1, 3)
        self.codes = np.asarray(self.codes, dtype=np.float32).reshape(len(self.quats), -1)
        if not (len(self.quats) == len(self.trans) == len(self.codes)):
            raise ValueError("pose and code counts disagree")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        self._tree = cKDTree(pose_keys(self.quats, self.trans, self.alpha))
        norms = np.linalg.norm(self.codes.astype(np.float64), axis=1)
        if (norms == 0).any():
            raise ValueError("codebook contains zero codes")
        self._code_norms = norms

    def __len__(self) -> int:
        return len(self.quats)

    def pose(self, i: int) -> se3.Pose:
        return se3.Pose(self.quats[i], self.trans[i])

    def nearest_indices(self, quats: np.ndarray, trans: np.ndarray) -> np.ndarray:
        """Nearest stored pose per query under Euclidean key distance.

        Exact ties resolve to the lowest stored index.
        """
        q = np.atleast_2d(np.asarray(quats, dtype=float))
        t = np.atleast_2d(np.asarray(trans, dtype=float))
        keys = pose_keys(q, t, self.alpha)
        k = min(2, len(self))
        d, i = self._tree.query(keys, k=k, workers=-1)
        if k == 1:
            return np.atleast_1d(i)
        tied = d[:, 0] == d[:, 1]
        out = i[:, 0].copy()
        if tied.any():
            for row in np.nonzero(tied)[0]:
                ball = self._tree.query_ball_point(keys[row], d[row, 0] * (1 + 1e-12))
                out[row] = min(ball)
        return out

    def nearest_code(self, pose: se3.Pose) -> tuple[np.ndarray, int]:
        """Code of the stored pose nearest to `pose` (memoized pose lookup)."""
        idx = int(self.nearest_indices(pose.q[None], pose.t[None])[0])
        return self.codes[idx], idx

    def similarities(self, code: np.ndarray) -> np.ndarray:
        """Cosine similarity of `code` against every stored code."""
        code = np.asarray(code, dtype=np.float64).reshape(-1)
        n = np.linalg.norm(code)
        if n == 0:
            raise ValueError("cannot match a zero code")
        return (self.codes.astype(np.float64) @ (code / n)) / self._code_norms

    def query_top_k(self, code: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact top-k stored poses by cosine similarity, descending.

        Returns (indices (k,), similarities (k,)); ties order by index.
        """
        if not 1 <= k <= len(self):
            raise ValueError(f"k={k} out of range for codebook of size {len(self)}")
        sims = self.similarities(code)
        part = np.argpartition(-sims, k - 1)[:k]
        order = np.lexsort((part, -sims[part]))
        idx = part[order]
        return idx, sims[idx]


def build_codebook(
    mesh: TriMesh,
    m: int,
    sensor_cfg: SensorConfig | None = None,
    code_cfg: CodeConfig | None = None,
    rng: np.random.Generator | None = None,
    alpha: float = DEFAULT_ALPHA,
    object_id: str | None = None,
    seed: int | None = None,
) -> Codebook:
    """Render and encode m contact poses sampled across the mesh.

    Poses whose contact comes up empty (sub-pixel grazing touches) are
    resampled so every stored code is a real contact.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    sensor_cfg = sensor_cfg or SensorConfig()
    code_cfg = code_cfg or CodeConfig()
    if rng is None:
        rng = np.random.default_rng(seed)
    sample = sample_contact_poses(mesh, m, rng, no_contact_frac=0.0)
    quats = sample.quats.copy()
    trans = sample.trans.copy()
    pens = sample.penetration.copy()
    code_rows = np.empty((m, code_cfg.dim), dtype=np.float32)
    for i in range(m):
        for _ in range(100):
            try:
                hm = render_touch(mesh, se3.Pose(quats[i], trans[i]), sensor_cfg, penetration=pens[i])
                _, cloud = extract_contact(hm, sensor_cfg)
                code_rows[i] = codes_mod.encode(cloud, code_cfg)
                break
            except NoContactError:
                redraw = sample_contact_poses(mesh, 1, rng, no_contact_frac=0.0)
                quats[i] = redraw.quats[0]
                trans[i] = redraw.trans[0]
                pens[i] = redraw.penetration[0]
        else:
            raise NoContactError(f"{mesh.name}: could not draw a contacting pose after 100 tries")
    return Codebook(
        quats, trans, code_rows, alpha=alpha, object_id=object_id or mesh.name,
        sensor_cfg=sensor_cfg, code_cfg=code_cfg, seed=seed,
    )


def combined_pose_error(
    quats: np.ndarray, trans: np.ndarray, gt: se3.Pose, mesh_diagonal: float
) -> np.ndarray:
    """Scale-free pose error: |dt| / diagonal + geodesic angle / 180 deg."""
    e_t = np.linalg.norm(np.atleast_2d(trans) - gt.t, axis=1) / mesh_diagonal
    ang = np.degrees(se3.rotation_distance(np.atleast_2d(quats), gt.q))
    return e_t + ang / 180.0


def single_touch_errors(
    cb: Codebook,
    mesh: TriMesh,
    query_quats: np.ndarray,
    query_trans: np.ndarray,
    rng: np.random.Generator,
    query_pens: np.ndarray | None = None,
    k: int = 25,
    n_baseline: int = 1000,
) -> np.ndarray:
    """Normalized single-touch localization error for a batch of queries.

    Each query is rendered (at its penetration depth), encoded, and matched
    against the codebook; the numerator is the minimum combined pose error
    over the top-k retrievals. The denominator is the same min-over-k
    statistic for uniformly random stored poses (k-sized groups from one
    seeded draw of n_baseline indices), so 1.0 means retrieval is no better
    than touching at random.
    """
    query_quats = np.atleast_2d(query_quats)
    query_trans = np.atleast_2d(query_trans)
    if query_pens is None:
        query_pens = np.full(len(query_quats), cb.sensor_cfg.max_penetration / 2)
    diag = mesh.diagonal
    n_groups = max(1, n_baseline // k)
    baseline_idx = rng.choice(len(cb), size=(n_groups, k), replace=True)
    out = np.empty(len(query_quats))
    for i in range(len(query_quats)):
        gt = se3.Pose(query_quats[i], query_trans[i])
        hm = render_touch(mesh, gt, cb.sensor_cfg, penetration=float(query_pens[i]))
        _, cloud = extract_contact(hm, cb.sensor_cfg)
        code = codes_mod.encode(cloud, cb.code_cfg)  # NoContactError propagates
        top, _ = cb.query_top_k(code, k)
        best = combined_pose_error(cb.quats[top], cb.trans[top], gt, diag).min()
        base_err = combined_pose_error(
            cb.quats[baseline_idx.ravel()], cb.trans[baseline_idx.ravel()], gt, diag
        ).reshape(n_groups, k)
        denom = base_err.min(axis=1).mean()
        out[i] = best / denom
    return out


def single_touch_error(
    cb: Codebook,
    mesh: TriMesh,
    query: se3.Pose,
    rng: np.random.Generator,
    penetration: float | None = None,
    k: int = 25,
) -> float:
    """Normalized single-touch error for one query pose."""
    pens = None if penetration is None else np.array([penetration])
    return float(
        single_touch_errors(cb, mesh, query.q[None], query.t[None], rng, query_pens=pens, k=k)[0]
    )


def save_codebook(cb: Codebook, directory) -> None:
    """Write poses.csv, codes.bin (+ sidecar), and meta.json into a directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "poses.csv", "w") as f:
        f.write("t,tx,ty,tz,qw,qx,qy,qz\n")
        for i in range(len(cb)):
            t = cb.trans[i]
            q = cb.quats[i]
            f.write(
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n"
                % (i, t[0], t[1], t[2], q[0], q[1], q[2], q[3])
            )
    codes_mod.write_code_table(cb.codes, d / "codes.bin")
    meta = {
        "object": cb.object_id,
        "M": len(cb),
        "D": int(cb.codes.shape[1]),
        "alpha": cb.alpha,
        "sensor_cfg": _dataclass_dict(cb.sensor_cfg),
        "code_cfg": _dataclass_dict(cb.code_cfg),
        "seed": cb.seed,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1))


def load_codebook(directory) -> Codebook:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    rows = np.loadtxt(d / "poses.csv", delimiter=",", skiprows=1, ndmin=2)
    trans = rows[:, 1:4]
    quats = rows[:, 4:8]
    table = codes_mod.read_code_table(d / "codes.bin")
    sensor_cfg = SensorConfig(**{k: _detuple(v) for k, v in meta["sensor_cfg"].items()})
    code_cfg = CodeConfig(**{k: _detuple(v) for k, v in meta["code_cfg"].items()})
    return Codebook(
        quats, trans, table, alpha=meta["alpha"], object_id=meta["object"],
        sensor_cfg=sensor_cfg, code_cfg=code_cfg, seed=meta["seed"],
    )


def _dataclass_dict(obj) -> dict:
    return {k: v for k, v in obj.__dict__.items() if not k.startswith("_")}


def _detuple(v):
    return tuple(v) if isinstance(v, list) else v
