"""``safegain`` command line: certify, train, eval, rollout.

All outputs go under ``--out DIR`` together with ``config.json``, the fully
resolved configuration (file values overridden by flags) and the tool version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .certify import GainTable, build_gain_table, read_table, routh_reason, write_table
from .config import ExperimentConfig, config_to_dict, load_config
from .dqn import checkpoint_dict, net_from_checkpoint, stream, train, train_config_dict
from .errors import ConfigError, SafeGainError, TableMismatch
from .evaluation import PolicyKind, default_policies, emit_report, evaluate, rollout, \
    write_figure_data, write_trajectory_csv
from .mdp import GainSchedulingEnv, default_z_norm_delta
from .reference import snap_bound

logger = logging.getLogger("safegain")

TABLE_FILE = "gain_table.json"
CHECKPOINT_FILE = "checkpoint.json"


def table_for(cfg: ExperimentConfig) -> GainTable:
    return build_gain_table(cfg.gains.axis_levels, cfg.gains.yaw_levels, snap_bound(cfg.reference),
                            cfg.gains.epsilon, cfg.gains.rho_margin)


def _write_echo(cfg: ExperimentConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo = {"tool": "safegain", "version": __version__, "command": command, "config": config_to_dict(cfg)}
    (out / "config.json").write_text(json.dumps(echo, indent=2) + "\n", encoding="utf-8")


def _load_table(cfg: ExperimentConfig, path: Path) -> GainTable:
    if not path.exists():
        raise ConfigError(f"gain table {path} not found; run `safegain certify` first")
    table = read_table(path)
    if table.hash() != table_for(cfg).hash():
        raise TableMismatch(f"gain table {path} does not match the configured gain levels")
    return table


def _load_checkpoint(path: Path):
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run `safegain train` first")
    data = json.loads(path.read_text(encoding="utf-8"))
    return net_from_checkpoint(data), data["table_hash"]


def cmd_certify(cfg: ExperimentConfig, out: Path) -> GainTable:
    _write_echo(cfg, out, "certify")
    table = table_for(cfg)
    write_table(table, out / TABLE_FILE)
    delta = default_z_norm_delta(table, cfg.env_config())
    with open(out / "certification_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["action", "level_x", "level_y", "level_z", "level_yaw", "status", "reason",
                    "alpha", "beta", "rho", "ultimate_bound", "residual", "P_eig_min", "P_eig_max"])
        for i, e in enumerate(table.entries):
            c = e.certificate
            w.writerow([i, *e.levels, "certified", "", repr(c.alpha), repr(c.beta), repr(c.rho),
                        repr(c.ultimate_bound), repr(c.residual), repr(c.eig_min), repr(c.eig_max)])
        for idx, why in table.rejected:
            w.writerow(["", *idx, "rejected", why, "", "", "", "", "", "", ""])
    print(f"certified {len(table)} actions, rejected {len(table.rejected)}; "
          f"snap bound {table.snap_bound:.6g} m/s^4; default z-norm delta {delta:.6g}")
    for idx, why in table.rejected:
        print(f"  rejected levels {idx}: {why}")
    return table


def cmd_train(cfg: ExperimentConfig, out: Path, table_path: Path):
    table = _load_table(cfg, table_path)
    _write_echo(cfg, out, "train")
    env_cfg = cfg.env_config()
    tcfg = cfg.train_config()
    table_hash = table.hash()
    ckpt_dir = out / "checkpoints"

    def save(path: Path, net):
        path.write_text(json.dumps(checkpoint_dict(net, table_hash, train_config_dict(tcfg))) + "\n",
                        encoding="utf-8")

    def on_episode(ep, net):
        if tcfg.checkpoint_every and (ep + 1) % tcfg.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            save(ckpt_dir / f"episode_{ep + 1:05d}.json", net)

    net, curve = train(lambda: GainSchedulingEnv(table, env_cfg), tcfg, on_episode)
    save(out / CHECKPOINT_FILE, net)
    with open(out / "training_curve.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "cumulative_reward", "epsilon", "loss_mean"])
        for rec in curve:
            w.writerow([rec.episode, repr(rec.cumulative_reward), repr(rec.epsilon), repr(rec.loss_mean)])
    if curve:
        print(f"trained {len(curve)} episodes; last reward {curve[-1].cumulative_reward:.3f}")
    return net, curve


def _policies(cfg: ExperimentConfig) -> list[PolicyKind]:
    if cfg.eval.policies:
        return [PolicyKind.parse(p) for p in cfg.eval.policies]
    return default_policies(cfg.eval.epsilons)


def _base_seed(cfg: ExperimentConfig) -> int:
    if cfg.eval.base_seed is not None:
        return cfg.eval.base_seed
    return int(stream(cfg.seed, "eval").integers(0, 2**31))


def cmd_eval(cfg: ExperimentConfig, out: Path, table_path: Path, checkpoint: Path, threads: int):
    table = _load_table(cfg, table_path)
    net, table_hash = _load_checkpoint(checkpoint)
    _write_echo(cfg, out, "eval")
    env_cfg = cfg.env_config()
    base = _base_seed(cfg)
    reports = []
    for pol in _policies(cfg):
        rep = evaluate(pol, net, lambda: GainSchedulingEnv(table, env_cfg), cfg.eval.rollouts, base,
                       threads, table_hash)
        reports.append(rep)
        print(f"{rep.policy:>18}: reward {rep.mean_reward:9.3f} +- {rep.std_reward:7.3f}  "
              f"switches {rep.mean_switches:7.2f}  peak|theta| {rep.mean_peak_theta:.3f} "
              f"(worst {rep.worst_peak_theta:.3f})  unsafe {rep.unsafe_count}/{rep.n}")
    emit_report(reports, out)
    return reports


def cmd_rollout(cfg: ExperimentConfig, out: Path, table_path: Path, checkpoint: Path, seed: int):
    table = _load_table(cfg, table_path)
    net, table_hash = _load_checkpoint(checkpoint)
    _write_echo(cfg, out, "rollout")
    env = GainSchedulingEnv(table, cfg.env_config())
    stats, traj = rollout(PolicyKind.greedy(), net, env, seed, table_hash)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_figure_data("greedy", traj, out)
    (out / "episode.json").write_text(json.dumps(dataclasses.asdict(stats), indent=2) + "\n", encoding="utf-8")
    print(f"seed {seed}: reward {stats.cumulative_reward:.3f}, switches {stats.switches}, "
          f"final |e_r| {stats.final_pos_err:.4g} m, peak |theta| {stats.peak_abs_theta:.3f} rad, "
          f"violation {stats.violation or 'none'}")
    return stats, traj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safegain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"safegain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
        p.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("-v", "--verbose", action="store_true")

    def table_arg(p):
        p.add_argument("--table", type=Path, help=f"gain table file (default OUT/{TABLE_FILE})")

    def ckpt_arg(p):
        p.add_argument("--checkpoint", type=Path, help=f"checkpoint file (default OUT/{CHECKPOINT_FILE})")

    p = sub.add_parser("certify", help="build and certify the gain table")
    common(p)

    p = sub.add_parser("train", help="train the DQN gain scheduler")
    common(p)
    table_arg(p)
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("eval", help="run the multi-policy evaluation protocol")
    common(p)
    table_arg(p)
    ckpt_arg(p)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--policies", help="comma list, e.g. greedy,eps0.10,eps0.30,random_safe")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("rollout", help="one greedy episode with full per-step logs")
    common(p)
    table_arg(p)
    ckpt_arg(p)
    p.add_argument("--rollout-seed", type=int, default=0, help="episode seed")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, episodes=args.episodes))
    ev = cfg.eval
    if getattr(args, "rollouts", None) is not None:
        ev = dataclasses.replace(ev, rollouts=args.rollouts)
    if getattr(args, "policies", None):
        names = tuple(s.strip() for s in args.policies.split(",") if s.strip())
        for name in names:
            PolicyKind.parse(name)
        ev = dataclasses.replace(ev, policies=names)
    return dataclasses.replace(cfg, eval=ev)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = args.out
        table_path = getattr(args, "table", None) or out / TABLE_FILE
        ckpt = getattr(args, "checkpoint", None) or out / CHECKPOINT_FILE
        if args.command == "certify":
            cmd_certify(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out, table_path)
        elif args.command == "eval":
            cmd_eval(cfg, out, table_path, ckpt, max(1, args.threads))
        elif args.command == "rollout":
            cmd_rollout(cfg, out, table_path, ckpt, args.rollout_seed)
    except (SafeGainError, ValueError, OSError) as exc:
        print(f"safegain {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
