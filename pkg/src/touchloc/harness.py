"""Trajectory synthesis, end-to-end localization runs, and ablation sweeps.

Datasets are sliding paths over a mesh with a ground-truth sensor pose, a
noise-corrupted pose (the odometry source), and a penetration depth per
frame. Heightmaps are re-rendered from ground truth at run time (rendering is
deterministic), so trajectory files stay small.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codes as codes_mod
from . import se3
from .codebook import Codebook
from .mesh import TriMesh
from .particle_filter import (
    FilterConfig,
    ParticleDepletionError,
    filter_step,
    init_filter,
    min_cluster_errors,
    particle_errors,
)
from .sampling import geodesic_path
from .sensor import contact_area, extract_contact, render_touch

PEN_RANGE = (0.0005, 0.002)  # meters; scaled by omega


@dataclass(frozen=True)
class TrajectoryConfig:
    length: float = 0.5
    step: float = 0.001
    omega: float = 1.0  # penetration scale; contact patch area knob
    sigma_trans: float = 0.0005
    sigma_rot: float = math.radians(1.0)
    waypoint_count: int = 5

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("omega must be in (0, 1]")


@dataclass
class TrajectoryLog:
    """Per-frame ground truth and corrupted odometry poses."""

    times: np.ndarray
    gt_quats: np.ndarray
    gt_trans: np.ndarray
    noisy_quats: np.ndarray
    noisy_trans: np.ndarray
    penetration: np.ndarray
    heightmap_paths: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def gt_pose(self, i: int) -> se3.Pose:
        return se3.Pose(self.gt_quats[i], self.gt_trans[i])

    def noisy_pose(self, i: int) -> se3.Pose:
        return se3.Pose(self.noisy_quats[i], self.noisy_trans[i])


def generate_dataset(mesh: TriMesh, cfg: TrajectoryConfig, rng: np.random.Generator) -> TrajectoryLog:
    """Slide along a surface path; per frame, press in by an omega-scaled
    random depth and corrupt the pose with zero-mean Gaussian noise."""
    path = geodesic_path(mesh, rng, cfg.length, cfg.step, waypoint_count=cfg.waypoint_count)
    n = len(path)
    pen = cfg.omega * rng.uniform(PEN_RANGE[0], PEN_RANGE[1], n)
    gt_trans = path.trans
    gt_quats = path.quats
    if cfg.sigma_trans > 0 or cfg.sigma_rot > 0:
        noise_t = rng.normal(0.0, cfg.sigma_trans, (n, 3)) if cfg.sigma_trans > 0 else np.zeros((n, 3))
        if cfg.sigma_rot > 0:
            noise_q = se3.rot_exp(rng.normal(0.0, cfg.sigma_rot, (n, 3)))
        else:
            noise_q = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
        noisy_quats, noisy_trans = se3.compose_qt(gt_quats, gt_trans, noise_q, noise_t)
    else:
        noisy_quats, noisy_trans = gt_quats.copy(), gt_trans.copy()
    return TrajectoryLog(
        times=np.arange(n, dtype=float),
        gt_quats=gt_quats,
        gt_trans=gt_trans,
        noisy_quats=noisy_quats,
        noisy_trans=noisy_trans,
        penetration=pen,
    )


def save_trajectory(log: TrajectoryLog, path) -> None:
    with open(path, "w") as f:
        f.write(
            "t,tx,ty,tz,qw,qx,qy,qz,"
            "noisy_tx,noisy_ty,noisy_tz,noisy_qw,noisy_qx,noisy_qy,noisy_qz,penetration\n"
        )
        for i in range(len(log)):
            row = (
                [log.times[i]]
                + list(log.gt_trans[i])
                + list(log.gt_quats[i])
                + list(log.noisy_trans[i])
                + list(log.noisy_quats[i])
                + [log.penetration[i]]
            )
            f.write(",".join("%.17g" % v for v in row) + "\n")


def load_trajectory(path) -> TrajectoryLog:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrajectoryLog(
        times=rows[:, 0],
        gt_trans=rows[:, 1:4],
        gt_quats=rows[:, 4:8],
        noisy_trans=rows[:, 8:11],
        noisy_quats=rows[:, 11:15],
        penetration=rows[:, 15],
    )


@dataclass
class TrialResult:
    trial: int
    steps: list  # per-step dict rows
    final_e_trans: float
    final_e_rot: float
    final_min_cluster_e_trans: float
    final_min_cluster_e_rot: float
    initial_e_trans: float
    initial_e_rot: float
    failed: bool = False
    hypothesis_log: list | None = None  # per-step [{q, t, std, count}] when requested


@dataclass
class RunSummary:
    trials: list
    mean_contact_area: float  # m^2, averaged over frames

    def finals(self, attr: str = "final_e_trans") -> np.ndarray:
        return np.array([getattr(t, attr) for t in self.trials])

    def median_final(self, attr: str = "final_e_trans") -> float:
        return float(np.nanmedian(self.finals(attr)))


def _precompute_measurements(mesh: TriMesh, cb: Codebook, traj: TrajectoryLog):
    """Render each frame once (identical across trials): codes and contact areas.

    Frames with an empty contact yield None and draw a random code per trial.
    """
    frame_codes: list = []
    areas = np.empty(len(traj))
    for i in range(len(traj)):
        hm = render_touch(mesh, traj.gt_pose(i), cb.sensor_cfg, penetration=float(traj.penetration[i]))
        mask, cloud = extract_contact(hm, cb.sensor_cfg)
        areas[i] = contact_area(mask, cb.sensor_cfg)
        try:
            frame_codes.append(codes_mod.encode(cloud, cb.code_cfg))
        except codes_mod.NoContactError:
            frame_codes.append(None)
    return frame_codes, areas


def run_localization(
    mesh: TriMesh,
    cb: Codebook,
    traj: TrajectoryLog,
    filter_cfg: FilterConfig,
    trials: int = 10,
    seed: int = 0,
    timing: bool = False,
    keep_hypotheses: bool = False,
) -> RunSummary:
    """Run the filter over a trajectory `trials` times with per-trial seeds.

    The prior is the ground-truth starting pose (scaled by filter_cfg.beta).
    A depleted trial is recorded as failed with maximum error (mesh diagonal,
    180 degrees) rather than aborting the run.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    frame_codes, areas = _precompute_measurements(mesh, cb, traj)
    diag = mesh.diagonal
    results = []
    seed_seq = np.random.SeedSequence(seed)
    trial_seeds = seed_seq.spawn(trials)
    for trial in range(trials):
        rng = np.random.default_rng(trial_seeds[trial])
        state = init_filter(traj.gt_pose(0), mesh, cb, filter_cfg, rng)
        e0_t, e0_r = particle_errors(state.particles, traj.gt_pose(0))
        rows = []
        hyp_log: list | None = [] if keep_hypotheses else None
        failed = False
        for i in range(1, len(traj)):
            delta = traj.noisy_pose(i - 1).inverse().compose(traj.noisy_pose(i))
            t_start = time.perf_counter() if timing else 0.0
            try:
                res = filter_step(state, delta, code=frame_codes[i])
            except ParticleDepletionError:
                failed = True
                break
            gt = traj.gt_pose(i)
            e_t, e_r = particle_errors(state.particles, gt)
            if len(res.hypotheses):
                mc_t, mc_r = min_cluster_errors(res.hypotheses, gt)
            else:
                mc_t, mc_r = float("nan"), float("nan")
            row = {
                "step": res.step,
                "n_particles": res.n_particles,
                "e_trans": e_t,
                "e_rot": e_r,
                "min_cluster_e_trans": mc_t,
                "min_cluster_e_rot": mc_r,
                "n_hypotheses": len(res.hypotheses),
                "sigma_h": res.sigma_h,
            }
            if timing:
                row["wall_ms"] = (time.perf_counter() - t_start) * 1e3
            rows.append(row)
            if hyp_log is not None:
                hyp_log.append(
                    [
                        {
                            "q": h.q.tolist(),
                            "t": h.t.tolist(),
                            "std": h.std.tolist(),
                            "count": h.count,
                        }
                        for h in res.hypotheses.hypotheses
                    ]
                )
        if failed or not rows:
            results.append(
                TrialResult(
                    trial, rows, diag, 180.0, diag, 180.0, e0_t, e0_r, failed=True,
                    hypothesis_log=hyp_log,
                )
            )
            continue
        last = rows[-1]
        results.append(
            TrialResult(
                trial,
                rows,
                last["e_trans"],
                last["e_rot"],
                last["min_cluster_e_trans"],
                last["min_cluster_e_rot"],
                e0_t,
                e0_r,
                hypothesis_log=hyp_log,
            )
        )
    return RunSummary(results, float(areas.mean()))


STEP_COLUMNS = [
    "step", "n_particles", "e_trans", "e_rot",
    "min_cluster_e_trans", "min_cluster_e_rot", "n_hypotheses", "sigma_h",
]


def write_step_csv(rows: list, path, timing: bool = False) -> None:
    cols = STEP_COLUMNS + (["wall_ms"] if timing else [])
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row.get(c)) for c in cols) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_summary_csv(summary: RunSummary, path) -> None:
    cols = [
        "trial", "failed", "initial_e_trans", "initial_e_rot",
        "final_e_trans", "final_e_rot",
        "final_min_cluster_e_trans", "final_min_cluster_e_rot",
    ]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for t in summary.trials:
            f.write(
                ",".join(
                    [str(t.trial), str(int(t.failed))]
                    + [_fmt(v) for v in (
                        t.initial_e_trans, t.initial_e_rot, t.final_e_trans, t.final_e_rot,
                        t.final_min_cluster_e_trans, t.final_min_cluster_e_rot,
                    )]
                )
                + "\n"
            )


def aggregate(summary: RunSummary) -> dict:
    """Median and quartiles of the final errors across trials."""
    out = {"trials": len(summary.trials), "failed": sum(t.failed for t in summary.trials)}
    for attr in ("final_e_trans", "final_e_rot", "final_min_cluster_e_trans", "final_min_cluster_e_rot"):
        vals = summary.finals(attr)
        vals = vals[np.isfinite(vals)]
        if len(vals):
            out[attr] = {
                "median": float(np.median(vals)),
                "q25": float(np.percentile(vals, 25)),
                "q75": float(np.percentile(vals, 75)),
            }
    out["mean_contact_area_cm2"] = summary.mean_contact_area * 1e4
    return out


def ablation_suite(
    kind: str,
    values: list,
    mesh: TriMesh,
    cb: Codebook,
    traj_cfg: TrajectoryConfig,
    filter_cfg: FilterConfig,
    trials: int = 10,
    seed: int = 0,
) -> list:
    """Sweep beta (prior scale) or omega (penetration scale).

    Beta reuses one dataset and varies the initialization; omega regenerates
    the dataset on paired seeds so paths match across values. Returns a list
    of row dicts (value, mean contact area, median final errors).
    """
    if kind not in ("beta", "omega"):
        raise ValueError("kind must be 'beta' or 'omega'")
    if len(values) < 1:
        raise ValueError("need at least one value")
    rows = []
    base_traj = None
    for value in values:
        if kind == "beta":
            if base_traj is None:
                base_traj = generate_dataset(mesh, traj_cfg, np.random.default_rng(seed))
            traj = base_traj
            fc = _replace_frozen(filter_cfg, beta=float(value))
        else:
            tc = _replace_frozen(traj_cfg, omega=float(value))
            traj = generate_dataset(mesh, tc, np.random.default_rng(seed))
            fc = filter_cfg
        summary = run_localization(mesh, cb, traj, fc, trials=trials, seed=seed + 1)
        rows.append(
            {
                "kind": kind,
                "value": float(value),
                "mean_contact_area_cm2": summary.mean_contact_area * 1e4,
                "median_final_e_trans": summary.median_final("final_e_trans"),
                "median_final_e_rot": summary.median_final("final_e_rot"),
                "median_final_min_cluster_e_trans": summary.median_final("final_min_cluster_e_trans"),
                "failed_trials": sum(t.failed for t in summary.trials),
            }
        )
    return rows


def write_ablation_csv(rows: list, path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) if not isinstance(row[c], str) else row[c] for c in cols) + "\n")


def _replace_frozen(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)
