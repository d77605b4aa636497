"""Command-line entry point: train, eval, ablate, plot-data, inspect-clip.

Run directories are named ``<name>-<confighash>-s<seed>`` under
``$MIMIC_FORGE_RUNS`` (default ``./runs``). Exit codes: 0 success, 2 invalid
config or missing input, 3 training aborted, 4 checkpoint/observation-spec
mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import nn, trainer
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .skeleton import ClipError, SkeletonError, load_clip, load_skeleton

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAIN = 3
EXIT_MISMATCH = 4


def runs_root() -> Path:
    return Path(os.environ.get("MIMIC_FORGE_RUNS", "runs"))


def _load_config_or_exit(path, overrides) -> ExperimentConfig:
    try:
        cfg = load_config(path)
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        return cfg
    except (ConfigError, SkeletonError, ClipError) as e:
        print(f"config error: {e}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _parse_seeds(args, cfg: ExperimentConfig) -> list[int]:
    if args.seeds is not None:
        lo, _, hi = args.seeds.partition("..")
        if hi:
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in args.seeds.split(",")]
    if args.seed is not None:
        return [args.seed]
    return cfg.seeds


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = list(args.set)
    if args.iters is not None:
        overrides.append(f"train.iterations={args.iters}")
    cfg = _load_config_or_exit(args.config, overrides)
    seeds = _parse_seeds(args, cfg)
    for seed in seeds:
        out_dir = runs_root() / cfg.run_dir_name(seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(cfg.to_json())
        try:
            setup = cfg.build_setup(seed)
            result = trainer.run_training(setup, out_dir, jobs=args.jobs)
        except (ConfigError, SkeletonError, ClipError) as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as e:
            print(f"training aborted: {e}", file=sys.stderr)
            return EXIT_TRAIN
        print(f"seed {seed}: {result.iterations_run} iterations -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def evaluate_checkpoint(cfg: ExperimentConfig, ckpt_path, episodes: int,
                        randomize: bool, seed: int = 0,
                        episode_seconds: float | None = None) -> dict:
    """Deterministic-policy evaluation; raises ValueError on spec mismatch."""
    setup = cfg.build_setup(seed)
    policy, value, norm, meta = load_checkpoint(ckpt_path)
    obs_spec = trainer._setup_obs_spec(setup)
    if meta.get("obs_spec_hash") != obs_spec.hash():
        raise ValueError(
            f"checkpoint observation spec {meta.get('obs_spec_hash')} does not "
            f"match config {obs_spec.hash()}")
    spec = nn.MlpSpec(goal_dim=obs_spec.goal_width,
                      rest_dim=obs_spec.width - obs_spec.goal_width,
                      action_dim=setup.agent.dof_count)
    bundle = trainer.PolicyBundle(spec=spec, policy=policy, value=value,
                                  normalizer=norm)
    rows = []
    for ep in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=(seed, ep, 17)))
        if randomize:
            params = trainer.randomize_env(
                setup.sim, setup.randomization,
                setup.randomization.backlash_ramp_iters, rng,
                setup.agent.dof_count)
        else:
            params = None
        ret, survival, reason, mean_dist = trainer.run_eval_episode(
            setup, bundle, rng, sim_params=params,
            episode_seconds=episode_seconds)
        rows.append({
            "episode": ep,
            "survival_s": survival,
            "return": ret,
            "mean_tracking_dist": mean_dist,
            "termination": reason,
        })
    survivals = np.array([r["survival_s"] for r in rows])
    dists = np.array([r["mean_tracking_dist"] for r in rows])
    return {
        "checkpoint": str(ckpt_path),
        "config_hash": cfg.hash(),
        "episodes": rows,
        "randomized": randomize,
        "mean_survival_s": float(survivals.mean()),
        "std_survival_s": float(survivals.std()),
        "mean_tracking_dist": float(dists.mean()),
        "mean_action_std": float(np.exp(policy["log_std"]).mean()),
    }


def cmd_eval(args) -> int:
    cfg = _load_config_or_exit(args.config, args.set)
    try:
        report = evaluate_checkpoint(cfg, args.checkpoint, args.episodes,
                                     args.randomize == "on", seed=args.seed or 0)
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"incompatible checkpoint: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    print(json.dumps(report, indent=1))
    print(f"\n{'ep':>3} {'survival_s':>10} {'return':>9} {'mean_dist':>9} termination")
    for r in report["episodes"]:
        print(f"{r['episode']:>3} {r['survival_s']:>10.3f} {r['return']:>9.2f} "
              f"{r['mean_tracking_dist']:>9.4f} {r['termination']}")
    print(f"mean survival {report['mean_survival_s']:.3f}s "
          f"(std {report['std_survival_s']:.3f}), "
          f"policy std {report['mean_action_std']:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

RANDOMIZATION_VARIANTS = {
    "all_disabled": {"randomization.backlash": False,
                     "randomization.friction": False,
                     "randomization.youngs": False},
    "no_backlash": {"randomization.backlash": False},
    "no_youngs": {"randomization.youngs": False},
    "no_friction": {"randomization.friction": False},
}

IMPLEMENTATION_VARIANTS = {
    "per_step_sampling": {"train.explore_prob": 1.0},
    "error_reward": {"reward_mode": "error"},
    "direct_position": {"control.mode": "direct_position"},
    "integrate_twice": {"control.mode": "integrate_twice"},
}


def ablation_variants(suite: str) -> dict[str, dict]:
    if suite == "randomization":
        return RANDOMIZATION_VARIANTS
    if suite == "implementation":
        return IMPLEMENTATION_VARIANTS
    raise ConfigError(f"unknown ablation suite {suite!r}")


def run_ablation(cfg: ExperimentConfig, suite: str, jobs: int = 1,
                 eval_episodes: int = 8, out_dir: Path | None = None) -> list[dict]:
    """Train base + variants over the config's seeds, evaluate each under the
    fully randomized environment, and return one summary row per variant."""
    variants = {"base": {}}
    variants.update(ablation_variants(suite))
    out_dir = out_dir or runs_root()
    results = []
    for name, overrides in variants.items():
        vcfg = apply_overrides(
            cfg, [f"{k}={json.dumps(v)}" for k, v in overrides.items()]
            + [f"name={cfg.name}-{suite}-{name}"])
        survivals, stds = [], []
        for seed in vcfg.seeds:
            run_dir = out_dir / vcfg.run_dir_name(seed)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "config.json").write_text(vcfg.to_json())
            setup = vcfg.build_setup(seed)
            result = trainer.run_training(setup, run_dir, jobs=jobs)
            report = evaluate_checkpoint(vcfg, result.checkpoints[-1],
                                         eval_episodes, randomize=True,
                                         seed=seed)
            survivals.append(report["mean_survival_s"])
            stds.append(report["mean_action_std"])
        results.append({
            "suite": suite,
            "variant": name,
            "seeds": len(vcfg.seeds),
            "mean_survival_s": float(np.mean(survivals)),
            "std_survival_s": float(np.std(survivals)),
            "mean_policy_std": float(np.mean(stds)),
        })
    return results


def cmd_ablate(args) -> int:
    cfg = _load_config_or_exit(args.config, args.set)
    try:
        variants = ablation_variants(args.suite)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        for name, overrides in variants.items():
            print(f"{name}: {json.dumps(overrides)}")
        return EXIT_OK
    try:
        rows = run_ablation(cfg, args.suite, jobs=args.jobs,
                            eval_episodes=args.eval_episodes)
    except Exception as e:
        print(f"ablation aborted: {e}", file=sys.stderr)
        return EXIT_TRAIN
    out = Path(args.out or f"ablation_{args.suite}.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        print(f"{r['variant']:>18}: survival {r['mean_survival_s']:.3f}s "
              f"policy std {r['mean_policy_std']:.3f}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot-data
# ---------------------------------------------------------------------------

_FIGURES = {
    "return": "return",
    "policy_loss": "policy_loss",
    "value_loss": "value_loss",
    "kl": "kl",
}


def write_plot_data(run_dirs: list[Path], out_dir: Path) -> list[Path]:
    """Tidy per-figure CSVs (iteration + one column per run directory)."""
    series = {}
    for rd in run_dirs:
        metrics = Path(rd) / "metrics.csv"
        if not metrics.exists():
            raise FileNotFoundError(f"no metrics.csv in {rd}")
        with open(metrics) as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{metrics} has no data rows")
        series[Path(rd).name] = rows
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for figure, column in _FIGURES.items():
        path = out_dir / f"{figure}.csv"
        names = list(series)
        n_rows = max(len(rows) for rows in series.values())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration"] + names)
            for i in range(n_rows):
                row = [i]
                for name in names:
                    rows = series[name]
                    row.append(rows[i][column] if i < len(rows) else "")
                writer.writerow(row)
        written.append(path)
    return written


def cmd_plot_data(args) -> int:
    try:
        written = write_plot_data([Path(d) for d in args.run_dirs],
                                  Path(args.out))
    except (FileNotFoundError, ValueError) as e:
        print(f"plot-data error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-clip
# ---------------------------------------------------------------------------


def cmd_inspect_clip(args) -> int:
    try:
        actor = load_skeleton(args.actor)
        clip = load_clip(args.clip, actor)
    except (SkeletonError, ClipError, FileNotFoundError) as e:
        print(f"inspect error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    stance = clip.ground.mean(axis=0)
    print(f"clip: {args.clip}")
    print(f"  frames: {clip.n_frames} @ {clip.frame_rate:g} Hz "
          f"({clip.duration:.2f} s), loopable: {clip.loopable}")
    print(f"  links: {', '.join(clip.link_names)}")
    for i, foot in enumerate(clip.feet):
        print(f"  {foot}: on ground {100 * stance[i]:.1f}% of frames")
    omega_max = float(np.linalg.norm(clip.omegas, axis=2).max())
    print(f"  peak link angular speed: {omega_max:.2f} rad/s")
    print(f"  foot position channel: {'yes' if clip.foot_pos is not None else 'no'}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimicforge",
                                description="motion-imitation training stack")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train policies from a config file")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--seeds", default=None,
                   help="comma list or inclusive range like 0..5")
    t.add_argument("--iters", type=int, default=None,
                   help="shortcut for --set train.iterations=N")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    e.add_argument("checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--episodes", type=int, default=8)
    e.add_argument("--randomize", choices=("on", "off"), default="off")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("config")
    a.add_argument("--suite", choices=("randomization", "implementation"),
                   required=True)
    a.add_argument("--dry-run", action="store_true")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--eval-episodes", type=int, default=8)
    a.add_argument("--out", default=None)
    a.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    a.set_defaults(fn=cmd_ablate)

    d = sub.add_parser("plot-data", help="emit per-figure CSV bundles")
    d.add_argument("run_dirs", nargs="+")
    d.add_argument("--out", default="plot_data")
    d.set_defaults(fn=cmd_plot_data)

    i = sub.add_parser("inspect-clip", help="summarize a motion clip file")
    i.add_argument("clip")
    i.add_argument("--actor", required=True)
    i.set_defaults(fn=cmd_inspect_clip)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
