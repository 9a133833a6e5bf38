"""Command-line interface.

Subcommands: build-codebook, gen-traj, run-filter, eval-single-touch, ablate.
Every run writes a JSON manifest (config + seed + git describe) next to its
outputs. A --config JSON file can preload any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import codebook as cb_mod
from . import harness
from .mesh import TriMesh, load_mesh
from .particle_filter import FilterConfig
from .primitives import primitive_mesh, _PRIMITIVES
from .sampling import sample_contact_poses
from .sensor import SensorConfig


def _resolve_mesh(spec: str) -> TriMesh:
    if spec in _PRIMITIVES:
        return primitive_mesh(spec)
    return load_mesh(spec)


def _git_describe() -> str:
    try:
        return subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10, check=True,
        ).stdout.strip()
    except Exception:
        return "unknown"


def _write_manifest(out_dir: Path, args: argparse.Namespace) -> None:
    manifest = {
        "command": args.command,
        "config": {k: v for k, v in vars(args).items() if k not in ("command", "func", "config")},
        "git": _git_describe(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))


def _load_config_defaults(argv: list) -> dict:
    """Pull --config JSON ahead of parsing so flags can override it."""
    if "--config" not in argv:
        return {}
    path = argv[argv.index("--config") + 1]
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise SystemExit("--config must contain a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def cmd_build_codebook(args) -> int:
    mesh = _resolve_mesh(args.mesh)
    cb = cb_mod.build_codebook(
        mesh, args.M, rng=np.random.default_rng(args.seed),
        object_id=args.object or Path(str(args.mesh)).stem, seed=args.seed,
    )
    out = Path(args.out)
    cb_mod.save_codebook(cb, out)
    mesh.save_obj(out / "mesh.obj")
    _write_manifest(out, args)
    print(f"codebook: {len(cb)} poses -> {out}")
    return 0


def _codebook_and_mesh(args) -> tuple:
    cb = cb_mod.load_codebook(args.codebook)
    if args.mesh:
        mesh = _resolve_mesh(args.mesh)
    else:
        stored = Path(args.codebook) / "mesh.obj"
        if not stored.exists():
            raise SystemExit("codebook has no mesh.obj; pass --mesh")
        mesh = load_mesh(stored)
    return cb, mesh


def cmd_gen_traj(args) -> int:
    mesh = _resolve_mesh(args.mesh)
    cfg = harness.TrajectoryConfig(
        length=args.L, step=args.step, omega=args.omega,
        sigma_trans=args.sigma_trans, sigma_rot=math.radians(args.sigma_rot_deg),
    )
    log = harness.generate_dataset(mesh, cfg, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.save_trajectory(log, out / "trajectory.csv")
    _write_manifest(out, args)
    print(f"trajectory: {len(log)} frames -> {out / 'trajectory.csv'}")
    return 0


def cmd_run_filter(args) -> int:
    cb, mesh = _codebook_and_mesh(args)
    traj = harness.load_trajectory(args.traj)
    fc = FilterConfig(
        n_init=args.n_init, n_min=args.n_min, beta=args.beta, tau=args.tau,
        resample_interval=args.resample_interval,
    )
    summary = harness.run_localization(
        mesh, cb, traj, fc, trials=args.trials, seed=args.seed, timing=args.timing,
        keep_hypotheses=args.dump_hypotheses,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for trial in summary.trials:
        harness.write_step_csv(trial.steps, out / f"trial_{trial.trial:02d}_steps.csv", timing=args.timing)
        if args.dump_hypotheses and trial.hypothesis_log is not None:
            (out / f"trial_{trial.trial:02d}_hypotheses.json").write_text(
                json.dumps(trial.hypothesis_log)
            )
    harness.write_summary_csv(summary, out / "summary.csv")
    agg = harness.aggregate(summary)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=1))
    _write_manifest(out, args)
    med = agg.get("final_e_trans", {}).get("median", float("nan"))
    print(f"run-filter: {args.trials} trials, median final e_trans = {med:.4g} m -> {out}")
    return 0


def cmd_eval_single_touch(args) -> int:
    cb, mesh = _codebook_and_mesh(args)
    rng = np.random.default_rng(args.seed)
    sample = sample_contact_poses(mesh, args.queries, rng, no_contact_frac=0.0)
    errs = cb_mod.single_touch_errors(cb, mesh, sample.quats, sample.trans, rng, k=args.k)
    med = float(np.median(errs))
    q25, q75 = (float(np.percentile(errs, p)) for p in (25, 75))
    print(f"single-touch: {args.queries} queries, k={args.k}: median {med:.4f} (q25 {q25:.4f}, q75 {q75:.4f})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "single_touch.csv", "w") as f:
            f.write("query,normalized_error\n")
            for i, e in enumerate(errs):
                f.write("%d,%.17g\n" % (i, e))
        _write_manifest(out, args)
    return 0


def cmd_ablate(args) -> int:
    cb, mesh = _codebook_and_mesh(args)
    traj_cfg = harness.TrajectoryConfig(length=args.L, step=args.step)
    fc = FilterConfig(n_init=args.n_init, n_min=args.n_min, beta=args.beta, tau=args.tau)
    rows = harness.ablation_suite(
        args.kind, [float(v) for v in args.values], mesh, cb, traj_cfg, fc,
        trials=args.trials, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_ablation_csv(rows, out / f"ablation_{args.kind}.csv")
    _write_manifest(out, args)
    for row in rows:
        print(
            f"{args.kind}={row['value']}: median e_trans {row['median_final_e_trans']:.4g} m, "
            f"area {row['mean_contact_area_cm2']:.3f} cm^2"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="touchloc", description=__doc__)
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags override")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-codebook", help="render + encode a pose codebook for an object")
    b.add_argument("--mesh", required=True, help="mesh path or primitive name (box/cylinder/sphere/bracket)")
    b.add_argument("--M", type=int, default=5000, help="number of codebook poses")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--object", default=None, help="object id stored in metadata")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_codebook)

    g = sub.add_parser("gen-traj", help="generate a sliding trajectory dataset")
    g.add_argument("--mesh", required=True)
    g.add_argument("--L", type=float, default=0.5, help="path length, meters")
    g.add_argument("--step", type=float, default=0.001, help="frame spacing, meters")
    g.add_argument("--omega", type=float, default=1.0, help="penetration scale in (0, 1]")
    g.add_argument("--sigma-trans", type=float, default=0.0005, help="pose noise, meters")
    g.add_argument("--sigma-rot-deg", type=float, default=1.0, help="pose noise, degrees")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_traj)

    r = sub.add_parser("run-filter", help="run localization trials over a trajectory")
    r.add_argument("--codebook", required=True)
    r.add_argument("--traj", required=True, help="trajectory.csv path")
    r.add_argument("--mesh", default=None, help="override mesh (default: codebook's mesh.obj)")
    r.add_argument("--beta", type=float, default=1.0)
    r.add_argument("--tau", type=float, default=0.05)
    r.add_argument("--n-init", type=int, default=50000)
    r.add_argument("--n-min", type=int, default=1000)
    r.add_argument("--resample-interval", type=int, default=1)
    r.add_argument("--trials", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--timing", action="store_true", help="add wall_ms to step CSVs (breaks byte-determinism)")
    r.add_argument("--dump-hypotheses", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run_filter)

    e = sub.add_parser("eval-single-touch", help="normalized single-touch retrieval error")
    e.add_argument("--codebook", required=True)
    e.add_argument("--mesh", default=None)
    e.add_argument("--queries", type=int, default=200)
    e.add_argument("--k", type=int, default=25)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval_single_touch)

    a = sub.add_parser("ablate", help="sweep beta (prior) or omega (contact area)")
    a.add_argument("--kind", choices=("beta", "omega"), required=True)
    a.add_argument("--values", nargs="+", required=True)
    a.add_argument("--codebook", required=True)
    a.add_argument("--mesh", default=None)
    a.add_argument("--L", type=float, default=0.25)
    a.add_argument("--step", type=float, default=0.0025)
    a.add_argument("--beta", type=float, default=0.5)
    a.add_argument("--tau", type=float, default=0.05)
    a.add_argument("--n-init", type=int, default=10000)
    a.add_argument("--n-min", type=int, default=1000)
    a.add_argument("--trials", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        defaults = _load_config_defaults(argv)
        if defaults:
            for sp in parser._subparsers._group_actions[0].choices.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
