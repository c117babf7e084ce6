"""Command line entry points.

    lanegate train  --config cfg.yaml --seed 7 --out runs/
    lanegate eval   --checkpoint runs/x/checkpoints/final.json --scenario cut_in
    lanegate export --run runs/x --what trajectories

Any config key can be overridden on the command line with dotted flags,
for example `--rl.gamma 0.99` or `--gate.delta=0.85`.
"""

import argparse
import json
import logging
import os
import sys

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .highway import SCENARIO_NAMES
from .training import (
    Trainer,
    eval_seed_list,
    evaluate,
    rl_action_factory,
    rule_action_factory,
    write_eval_csv,
)

__all__ = ["main"]


class CliError(Exception):
    pass


def _parse_extras(extras: list[str]) -> list[tuple[str, str]]:
    """Turn leftover argv entries into dotted config overrides."""
    overrides = []
    i = 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise CliError(f"unrecognized argument: {tok}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise CliError(f"override --{key} is missing a value")
            value = extras[i + 1]
            i += 2
        overrides.append((key, value))
    return overrides


def _fresh_dir(path: str) -> str:
    if os.path.isdir(path) and os.listdir(path):
        raise CliError(f"{path} already exists and is not empty; "
                       "output directories are never overwritten")
    os.makedirs(path, exist_ok=True)
    return path


def _allocate_run_dir(root: str, base: str) -> str:
    """First unused root/base or root/base-NNN; runs never overwrite."""
    os.makedirs(root, exist_ok=True)
    candidate = os.path.join(root, base)
    if not os.path.exists(candidate):
        return candidate
    for n in range(1, 1000):
        candidate = os.path.join(root, f"{base}-{n:03d}")
        if not os.path.exists(candidate):
            return candidate
    raise CliError(f"could not allocate a run directory under {root}")


def _load(args, overrides) -> "RunConfig":
    return load_config(args.config, overrides=overrides, seed=args.seed)


def cmd_train(args, overrides) -> int:
    cfg = _load(args, overrides)
    root = args.out or os.environ.get("LANEGATE_OUT_ROOT") or cfg["io"]["out_root"] or "runs"
    base = cfg["io"]["run_name"] or f"{cfg['env']['scenario']}_seed{cfg.seed}"
    run_dir = _allocate_run_dir(root, base)
    print(run_dir, flush=True)
    trainer = Trainer(cfg, run_dir)
    try:
        trainer.run()
    finally:
        trainer.close()
    print(f"done: {run_dir}")
    return 0


def _print_summary(summary) -> None:
    comps = summary.mean_components
    print(f"episodes:          {summary.n}")
    print(f"success_rate:      {summary.success_rate:.3f}")
    print(f"mean_return:       {summary.mean_return:.4f}")
    print(f"mean_return_norm:  {summary.mean_return_norm:.4f}")
    print(f"components:        eff={comps[0]:.4f} comf={comps[1]:.4f} "
          f"risk={comps[2]:.4f} coll={comps[3]:.4f}")
    print(f"mean_speed:        {summary.mean_speed:.2f} m/s")
    print(f"mean_lane_changes: {summary.mean_lane_changes:.2f}")
    total_dist = sum(e.distance for e in summary.episodes)
    total_lc = sum(e.lane_changes for e in summary.episodes)
    per_km = 1000.0 * total_lc / total_dist if total_dist > 0 else 0.0
    print(f"lane_changes_per_1000m: {per_km:.2f}")


def cmd_eval(args, overrides) -> int:
    cfg = _load(args, overrides)
    if args.policy == "rule":
        factory = rule_action_factory(cfg.idm_params(), cfg.mobil_params(),
                                      cfg.road_config().speed_limit)
    else:
        if not args.checkpoint:
            raise CliError("--checkpoint is required unless --policy rule is given")
        doc = load_checkpoint(args.checkpoint)
        if doc["config_digest"] != cfg.digest():
            print(f"warning: checkpoint was trained under config digest "
                  f"{doc['config_digest']}, evaluating under {cfg.digest()}",
                  file=sys.stderr)
        factory = rl_action_factory(doc["actor"])
    episodes = args.episodes or cfg["trainer"]["eval_episodes"]
    seeds = eval_seed_list(cfg.seed, episodes)
    record_dir = None
    if args.out:
        out_dir = _fresh_dir(args.out)
        record_dir = os.path.join(out_dir, "trajectories")
    summary = evaluate(factory, cfg, seeds, scenario=args.scenario,
                       record_dir=record_dir)
    scenario = args.scenario or cfg["env"]["scenario"]
    print(f"policy: {args.policy}   scenario: {scenario}   seed: {cfg.seed}")
    _print_summary(summary)
    if args.out:
        write_eval_csv(os.path.join(out_dir, f"eval_{scenario}.csv"), summary)
        print(f"wrote {out_dir}")
    return 0


def cmd_export(args) -> int:
    run = args.run
    if not os.path.isdir(run):
        raise CliError(f"{run} is not a run directory")
    if args.what == "learning-curve":
        return _export_learning_curve(run, args.out)
    return _export_trajectories(run, args.out)


def _export_learning_curve(run: str, out: str | None) -> int:
    metrics_path = os.path.join(run, "metrics.csv")
    if not os.path.isfile(metrics_path):
        raise CliError(f"{run} has no metrics.csv")
    with open(metrics_path) as fh:
        header = fh.readline().strip().split(",")
        idx = {name: k for k, name in enumerate(header)}
        rows = [line.strip().split(",") for line in fh if line.strip()]
    wanted = ["cycle", "m_env", "policy_return", "policy_r_eff", "policy_r_comf",
              "policy_r_risk", "policy_r_coll"]
    missing = [w for w in wanted if w not in idx]
    if missing:
        raise CliError(f"metrics.csv is missing columns: {', '.join(missing)}")
    out_path = out or os.path.join(run, "learning_curve.csv")
    with open(out_path, "w", newline="\n") as fh:
        fh.write("cycle,m_env,return,r_eff,r_comf,r_risk,r_coll\n")
        for row in rows:
            fh.write(",".join(row[idx[w]] for w in wanted) + "\n")
    print(out_path)
    return 0


def _export_trajectories(run: str, out: str | None) -> int:
    manifest_path = os.path.join(run, "trajectories", "manifest.json")
    config_path = os.path.join(run, "config.resolved")
    for p in (manifest_path, config_path):
        if not os.path.isfile(p):
            raise CliError(f"{run} is missing {os.path.relpath(p, run)}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg = load_config(config_path)
    if manifest["policy"] == "rule":
        factory = rule_action_factory(cfg.idm_params(), cfg.mobil_params(),
                                      cfg.road_config().speed_limit)
    else:
        doc = load_checkpoint(os.path.join(run, manifest["checkpoint"]))
        if doc["config_digest"] != cfg.digest():
            raise CliError("checkpoint digest does not match the run's resolved config")
        factory = rl_action_factory(doc["actor"])
    out_dir = _fresh_dir(out or os.path.join(run, "export", "trajectories"))
    evaluate(factory, cfg, manifest["eval_seeds"], scenario=manifest["scenario"],
             record_dir=out_dir)
    print(out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegate",
        description="Confidence-gated policy training on a highway simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the full training loop")
    p_train.add_argument("--config", help="YAML config file")
    p_train.add_argument("--seed", type=int, help="master seed (required here or in config)")
    p_train.add_argument("--out", help="output root (default $LANEGATE_OUT_ROOT or ./runs)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or the rule planner")
    p_eval.add_argument("--config", help="YAML config file")
    p_eval.add_argument("--seed", type=int, help="master seed for episode generation")
    p_eval.add_argument("--checkpoint", help="checkpoint JSON file to evaluate")
    p_eval.add_argument("--policy", choices=("rl", "rule"), default="rl")
    p_eval.add_argument("--scenario", choices=SCENARIO_NAMES,
                        help="override the configured scenario")
    p_eval.add_argument("--episodes", type=int, help="number of evaluation episodes")
    p_eval.add_argument("--out", help="directory for CSV results and trajectories")

    p_export = sub.add_parser("export", help="re-derive artifacts from a finished run")
    p_export.add_argument("--run", required=True, help="run directory")
    p_export.add_argument("--what", required=True,
                          choices=("trajectories", "learning-curve"))
    p_export.add_argument("--out", help="output path (defaults inside the run directory)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        if args.command == "export":
            if extras:
                raise CliError(f"unrecognized argument: {extras[0]}")
            return cmd_export(args)
        overrides = _parse_extras(extras)
        if args.command == "train":
            return cmd_train(args, overrides)
        return cmd_eval(args, overrides)
    except (CliError, ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
