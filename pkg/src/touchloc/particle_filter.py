"""Monte-Carlo localization over SE(3) sensor poses on an object surface.

Particles carry full 6D poses. Each step: propagate through the noisy relative
motion, reweight by cosine similarity between the measured tactile code and
each particle's codebook code, zero out particles that drifted off-surface,
resample systematically (every resample_interval steps), cluster surviving
particles into pose hypotheses, and adapt the particle count to the spread of
those hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import codes as codes_mod
from . import se3
from .codebook import Codebook
from .mesh import SurfaceIndex, TriMesh


class ParticleDepletionError(Exception):
    """Every particle weight hit zero; the filter cannot continue."""


@dataclass
class ParticleSet:
    """Weighted pose particles: quats (N, 4), trans (N, 3), weights (N,)."""

    quats: np.ndarray
    trans: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.quats.copy(), self.trans.copy(), self.weights.copy())


@dataclass(frozen=True)
class FilterConfig:
    """Filter knobs; defaults follow the desk-scale setup.

    dbscan_eps defaults to 2% of the mesh diagonal and dbscan_min_pts to
    max(5, 1% of the clustered point count) when left as None.
    """

    n_init: int = 50_000
    n_min: int = 1_000
    beta: float = 1.0  # prior scale: sigma_trans = beta * diag / 3, sigma_rot = beta * 60 deg
    tau: float = 0.05  # softmax temperature on cosine similarities
    sigma_trans: float = 0.0005  # motion noise, meters per axis
    sigma_rot: float = math.radians(1.0)  # motion noise, radians per axis
    prune_distance: float = 0.002
    resample_interval: int = 1
    dbscan_eps: float | None = None
    dbscan_min_pts: int | None = None
    cluster_max_points: int = 4_000

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_init:
            raise ValueError("need 1 <= n_min <= n_init")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.prune_distance <= 0:
            raise ValueError("prune_distance must be positive")
        if self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1")


@dataclass
class Hypothesis:
    """One clustered pose candidate."""

    q: np.ndarray
    t: np.ndarray
    std: np.ndarray  # per-axis positional standard deviation (3,)
    count: int


@dataclass
class HypothesisSet:
    hypotheses: list[Hypothesis]
    sigma_h: float  # average positional std across clusters (global fallback)

    def __len__(self) -> int:
        return len(self.hypotheses)


def prior_sigmas(beta: float, mesh_diagonal: float) -> tuple[float, float]:
    """Initialization prior: (sigma_trans meters, sigma_rot radians per axis).

    At beta = 1 the 3-sigma translation bound equals the mesh diagonal and the
    3-sigma rotation bound is 180 degrees.
    """
    return beta * mesh_diagonal / 3.0, beta * math.radians(60.0)


def init_particles(
    prior: se3.Pose,
    mesh_diagonal: float,
    cb: Codebook,
    cfg: FilterConfig,
    rng: np.random.Generator,
) -> ParticleSet:
    """Scatter n_init particles around the prior, then snap each to its
    nearest codebook pose (back onto the surface). Uniform weights."""
    sigma_t, sigma_r = prior_sigmas(cfg.beta, mesh_diagonal)
    n = cfg.n_init
    trans = prior.t + rng.normal(0.0, sigma_t, (n, 3)) if sigma_t > 0 else np.tile(prior.t, (n, 1))
    if sigma_r > 0:
        quats = se3.quat_multiply(prior.q, se3.rot_exp(rng.normal(0.0, sigma_r, (n, 3))))
    else:
        quats = np.tile(prior.q, (n, 1))
    idx = cb.nearest_indices(quats, trans)
    return ParticleSet(cb.quats[idx].copy(), cb.trans[idx].copy(), np.full(n, 1.0 / n))


def motion_update(
    ps: ParticleSet,
    delta: se3.Pose,
    sigma_trans: float,
    sigma_rot: float,
    rng: np.random.Generator,
) -> ParticleSet:
    """Propagate each particle by a noisy draw of the relative motion:
    x <- x (+) N(delta, diag(sigma_trans^2, sigma_rot^2)). Weights unchanged."""
    n = len(ps)
    dt = np.broadcast_to(delta.t, (n, 3))
    dq = np.broadcast_to(delta.q, (n, 4))
    if sigma_trans > 0:
        dt = dt + rng.normal(0.0, sigma_trans, (n, 3))
    if sigma_rot > 0:
        dq = se3.quat_multiply(dq, se3.rot_exp(rng.normal(0.0, sigma_rot, (n, 3))))
    q, t = se3.compose_qt(ps.quats, ps.trans, dq, dt)
    return ParticleSet(q, t, ps.weights.copy())


def measurement_update(ps: ParticleSet, code: np.ndarray, cb: Codebook, tau: float) -> ParticleSet:
    """Reweight particles by softmax(cosine similarity / tau).

    Similarities come from each particle's nearest codebook code. Particles
    already at zero weight stay at zero; the rest renormalize to sum 1.
    """
    if len(ps) == 0:
        raise ValueError("empty particle set")
    idx = cb.nearest_indices(ps.quats, ps.trans)
    sims = cb.similarities(code)[idx]
    w = _softmax(sims / tau)
    alive = ps.weights > 0
    w = np.where(alive, w, 0.0)
    total = w.sum()
    if total == 0:
        raise ParticleDepletionError("all particle weights zero after measurement update")
    return ParticleSet(ps.quats.copy(), ps.trans.copy(), w / total)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def prune_off_surface(ps: ParticleSet, index: SurfaceIndex, max_dist: float = 0.002) -> ParticleSet:
    """Zero the weight of particles farther than max_dist from the surface
    (nearest-vertex distance; exactly max_dist is kept), then renormalize."""
    d = index.nearest_vertex_distance(ps.trans, upper_bound=max_dist * (1 + 1e-12))
    w = np.where(d <= max_dist, ps.weights, 0.0)
    total = w.sum()
    if total == 0:
        raise ParticleDepletionError("all particles pruned off-surface")
    return ParticleSet(ps.quats.copy(), ps.trans.copy(), w / total)


def resample_low_variance(
    ps: ParticleSet, rng: np.random.Generator, n_out: int | None = None
) -> ParticleSet:
    """Systematic resampling with a single uniform draw; uniform output weights.

    Particle i is copied floor/ceil(n_out * w_i) times (expected n_out * w_i).
    """
    n = len(ps)
    n_out = n if n_out is None else n_out
    w = ps.weights
    total = w.sum()
    if total <= 0:
        raise ParticleDepletionError("cannot resample zero-weight particle set")
    positions = (rng.random() + np.arange(n_out)) / n_out
    cumulative = np.cumsum(w / total)
    cumulative[-1] = 1.0  # guard against round-off at the top end
    idx = np.searchsorted(cumulative, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return ParticleSet(ps.quats[idx].copy(), ps.trans[idx].copy(), np.full(n_out, 1.0 / n_out))


def adapt_count(ps: ParticleSet, sigma_prev: float, sigma_now: float, cfg: FilterConfig) -> ParticleSet:
    """Resize the particle set by the hypothesis-spread ratio.

    New count = clamp(round(N * sigma_now / sigma_prev), n_min, n_init).
    Additions replicate the highest-weight particles (splitting their weight);
    removals drop the lowest-weight particles. Ties break by index.
    """
    if sigma_prev <= 0 or sigma_now <= 0:
        raise ValueError("sigma values must be positive")
    n = len(ps)
    target = int(np.clip(round(n * sigma_now / sigma_prev), cfg.n_min, cfg.n_init))
    if target == n:
        return ps
    if target > n:
        extra = target - n
        order = np.lexsort((np.arange(n), -ps.weights))  # weight desc, index asc
        copies = np.ones(n, dtype=int)
        full, rem = divmod(extra, n)
        copies += full
        copies[order[:rem]] += 1
        idx = np.repeat(np.arange(n), copies)
        w = np.repeat(ps.weights / copies, copies)
    else:
        drop = n - target
        order = np.lexsort((np.arange(n), ps.weights))  # weight asc, index asc
        keep = np.ones(n, dtype=bool)
        keep[order[:drop]] = False
        idx = np.nonzero(keep)[0]
        w = ps.weights[idx]
    total = w.sum()
    if total == 0:
        raise ParticleDepletionError("adapt_count removed all weight")
    return ParticleSet(ps.quats[idx].copy(), ps.trans[idx].copy(), w / total)


def dbscan(points: np.ndarray, eps: float, min_pts: int, counts: np.ndarray | None = None) -> np.ndarray:
    """Density clustering; returns labels (N,), -1 for noise.

    `counts` gives a multiplicity per point (exact duplicates collapsed by
    the caller); a point is core when the multiplicity-weighted neighbor
    count (self included) reaches min_pts. Clusters are connected components
    of the core-core reachability graph; border points join the cluster of
    the lowest-index core that reaches them.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    if counts is None:
        counts = np.ones(n, dtype=np.int64)
    span = points.max(axis=0) - points.min(axis=0)
    if np.linalg.norm(span) <= eps:  # everything mutually within eps
        if counts.sum() >= min_pts:
            labels[:] = 0
        return labels
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    deg = counts.astype(np.int64).copy()  # self counts toward the density test
    if len(pairs):
        np.add.at(deg, pairs[:, 0], counts[pairs[:, 1]])
        np.add.at(deg, pairs[:, 1], counts[pairs[:, 0]])
    core = deg >= min_pts
    if not core.any():
        return labels
    core_ids = np.nonzero(core)[0]
    slot = np.full(n, -1)
    slot[core_ids] = np.arange(len(core_ids))
    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]] if len(pairs) else pairs
    graph = coo_matrix(
        (np.ones(len(cc), dtype=np.int8), (slot[cc[:, 0]], slot[cc[:, 1]])),
        shape=(len(core_ids), len(core_ids)),
    ).tocsr()
    _, comp = connected_components(graph, directed=False)
    # renumber components by first appearance so labels are order-stable
    _, first = np.unique(comp, return_index=True)
    remap = np.empty(comp.max() + 1, dtype=int)
    remap[comp[np.sort(first)]] = np.arange(len(first))
    labels[core_ids] = remap[comp]
    if len(pairs):
        one_core = core[pairs[:, 0]] ^ core[pairs[:, 1]]
        cb_pairs = pairs[one_core]
        if len(cb_pairs):
            swap = ~core[cb_pairs[:, 0]]
            cb_pairs[swap] = cb_pairs[swap][:, ::-1]  # column 0 = core, 1 = border
            order = np.lexsort((cb_pairs[:, 0], cb_pairs[:, 1]))  # lowest core index wins
            cb_pairs = cb_pairs[order]
            first = np.concatenate([[True], cb_pairs[1:, 1] != cb_pairs[:-1, 1]])
            labels[cb_pairs[first, 1]] = labels[cb_pairs[first, 0]]
    return labels


def cluster_hypotheses(
    ps: ParticleSet,
    eps: float,
    min_pts: int | None = None,
    max_points: int | None = None,
) -> HypothesisSet:
    """DBSCAN particle translations into pose hypotheses.

    Per cluster: mean position, per-axis position std, Markley quaternion
    mean, and member count. sigma_h is the mean scalar std across clusters,
    falling back to the global particle std when nothing clusters.

    For tractability on dense late-stage sets, the scan runs on a
    representative subsample: an even stride down to max_points, exact
    duplicates collapsed into multiplicities (label-equivalent), and a
    further stratified thinning when the eps-neighborhood pair count would
    explode. Cluster statistics are multiplicity-weighted and member counts
    are rescaled to the full set.
    """
    if len(ps) == 0:
        raise ValueError("empty particle set")
    n_total = len(ps)
    trans = ps.trans
    quats = ps.quats
    if max_points is not None and n_total > max_points:
        stride = np.linspace(0, n_total - 1, max_points).astype(int)
        trans = trans[stride]
        quats = quats[stride]
    if min_pts is None:
        min_pts = max(5, round(0.01 * len(trans)))
    uniq, counts = np.unique(np.hstack([trans, quats]), axis=0, return_counts=True)
    u_trans = uniq[:, :3]
    u_quats = uniq[:, 3:]
    pair_budget = 400_000
    tree = cKDTree(u_trans)
    n_pairs = (tree.count_neighbors(tree, eps) - len(u_trans)) // 2
    if n_pairs > pair_budget:
        keep_n = max(64, int(len(u_trans) * math.sqrt(pair_budget / n_pairs)))
        keep = np.linspace(0, len(u_trans) - 1, keep_n).astype(int)  # unique() sorts, so this stratifies
        u_trans, u_quats, counts = u_trans[keep], u_quats[keep], counts[keep]
        # density test should still reflect the full subsample
        min_pts = max(1, round(min_pts * counts.sum() / len(trans)))
    labels = dbscan(u_trans, eps, min_pts, counts=counts)
    scale = n_total / counts.sum()
    hyps = []
    for lab in range(labels.max() + 1):
        m = labels == lab
        w = counts[m].astype(float)
        mean = np.average(u_trans[m], axis=0, weights=w)
        var = np.average((u_trans[m] - mean) ** 2, axis=0, weights=w)
        hyps.append(
            Hypothesis(
                q=se3.quat_mean(u_quats[m], weights=w),
                t=mean,
                std=np.sqrt(var),
                count=int(np.floor(w.sum() * scale)),
            )
        )
    if hyps:
        sigma_h = float(np.mean([h.std.mean() for h in hyps]))
    else:
        gmean = np.average(u_trans, axis=0, weights=counts)
        gvar = np.average((u_trans - gmean) ** 2, axis=0, weights=counts)
        sigma_h = float(np.sqrt(gvar).mean())
    return HypothesisSet(hyps, sigma_h)


def particle_errors(ps: ParticleSet, gt: se3.Pose) -> tuple[float, float]:
    """RMS errors of the particle set against ground truth:
    (translation meters, geodesic rotation degrees)."""
    if len(ps) == 0:
        raise ValueError("empty particle set")
    e_t = math.sqrt(float(np.mean(np.sum((ps.trans - gt.t) ** 2, axis=1))))
    ang = np.degrees(se3.rotation_distance(ps.quats, gt.q))
    return e_t, math.sqrt(float(np.mean(ang**2)))


def min_cluster_errors(hyps: HypothesisSet, gt: se3.Pose) -> tuple[float, float]:
    """Error of the hypothesis closest to ground truth (translation and
    rotation minimized independently)."""
    if len(hyps) == 0:
        raise ValueError("empty hypothesis set")
    ts = np.array([h.t for h in hyps.hypotheses])
    qs = np.array([h.q for h in hyps.hypotheses])
    e_t = float(np.linalg.norm(ts - gt.t, axis=1).min())
    e_r = float(np.degrees(se3.rotation_distance(qs, gt.q)).min())
    return e_t, e_r


@dataclass
class StepResult:
    """What one filter step produced (error metrics are the harness's job)."""

    step: int
    n_particles: int
    hypotheses: HypothesisSet
    sigma_h: float
    resampled: bool
    no_contact: bool


@dataclass
class FilterState:
    """Mutable filter state owned by a single logical writer."""

    particles: ParticleSet
    cb: Codebook
    surface: SurfaceIndex
    cfg: FilterConfig
    rng: np.random.Generator
    mesh_diagonal: float
    step: int = 0
    sigma_h_prev: float | None = None


def init_filter(
    prior: se3.Pose,
    mesh: TriMesh,
    cb: Codebook,
    cfg: FilterConfig,
    rng: np.random.Generator,
) -> FilterState:
    diag = mesh.diagonal
    ps = init_particles(prior, diag, cb, cfg, rng)
    return FilterState(ps, cb, mesh.surface_index(), cfg, rng, diag)


def filter_step(
    state: FilterState,
    delta: se3.Pose,
    cloud: np.ndarray | None = None,
    code: np.ndarray | None = None,
) -> StepResult:
    """Advance the filter by one frame.

    The measurement is either a sensor-frame point cloud (encoded here) or a
    precomputed code. An empty/absent contact substitutes a seeded random
    code. Raises ParticleDepletionError (annotated with the step index) if
    every particle dies.
    """
    cfg = state.cfg
    state.step += 1
    ps = motion_update(state.particles, delta, cfg.sigma_trans, cfg.sigma_rot, state.rng)
    no_contact = False
    if code is None:
        try:
            if cloud is None:
                raise codes_mod.NoContactError("no cloud")
            code = codes_mod.encode(cloud, state.cb.code_cfg)
        except codes_mod.NoContactError:
            code = codes_mod.random_code(state.rng, state.cb.code_cfg.dim)
            no_contact = True
    try:
        ps = measurement_update(ps, code, state.cb, cfg.tau)
        ps = prune_off_surface(ps, state.surface, cfg.prune_distance)
    except ParticleDepletionError as exc:
        raise ParticleDepletionError(f"step {state.step}: {exc}") from exc
    resampled = state.step % cfg.resample_interval == 0
    if resampled:
        ps = resample_low_variance(ps, state.rng)
    eps = cfg.dbscan_eps if cfg.dbscan_eps is not None else 0.02 * state.mesh_diagonal
    hyps = cluster_hypotheses(ps, eps, cfg.dbscan_min_pts, cfg.cluster_max_points)
    if state.sigma_h_prev is not None and state.sigma_h_prev > 0 and hyps.sigma_h > 0:
        ps = adapt_count(ps, state.sigma_h_prev, hyps.sigma_h, cfg)
    state.sigma_h_prev = hyps.sigma_h
    state.particles = ps
    return StepResult(
        step=state.step,
        n_particles=len(ps),
        hypotheses=hyps,
        sigma_h=hyps.sigma_h,
        resampled=resampled,
        no_contact=no_contact,
    )
