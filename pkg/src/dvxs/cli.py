"""Command-line entry points.

Exit codes: 0 success, 1 usage, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .environment import EnvironmentError_, PERTURBATION_MODES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    p = _Parser(prog="dvxs", description="Latent world-model exploration agent")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    t = sub.add_parser("train", parents=[], help="train an agent", add_help=True)
    t.add_argument("--config", help="key=value configuration file")
    t.add_argument("--env", help="environment name or file")
    t.add_argument("--steps", type=int, help="override total environment steps")
    t.add_argument("--seed", type=int, help="root seed (environment/init/sampling streams)")
    t.add_argument("--preset", choices=["desk", "paper"], help="configuration overlay")
    t.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", help="environment name (default: the checkpoint's)")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--perturb", choices=list(PERTURBATION_MODES))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write report CSV, trajectory, and figures here")

    a = sub.add_parser("ablate", help="train and compare agent variants")
    a.add_argument("--config", help="base configuration file")
    a.add_argument("--preset", choices=["desk", "paper"])
    a.add_argument("--steps", type=int, help="training steps per variant run")
    a.add_argument("--env", help="environment for all variants")
    a.add_argument("--seeds", type=int, default=2, help="number of seeds per variant")
    a.add_argument("--episodes", type=int, default=5, help="evaluation episodes")
    a.add_argument("--out", required=True)

    r = sub.add_parser("robust", help="perturbation sensitivity of a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--env", help="environment name (default: the checkpoint's)")
    r.add_argument("--episodes", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)

    i = sub.add_parser("inspect", help="print checkpoint config and parameter shapes")
    i.add_argument("--checkpoint", required=True)

    c = sub.add_parser("env-check", help="run the simulator invariant audit")
    c.add_argument("--env", required=True)
    c.add_argument("--steps", type=int, default=300)
    c.add_argument("--seed", type=int, default=0)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {}
    if args.env is not None:
        overrides["train.env_name"] = args.env
    if args.steps is not None:
        overrides["train.total_steps"] = args.steps
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    cfg = load_config(args.config, args.preset, overrides)
    from .trainer import Trainer
    summary = Trainer(cfg, out_dir=args.out).run()
    print(f"trained {summary['steps']} steps, {summary['episodes']} episodes "
          f"({summary['model_updates']} model / {summary['behavior_updates']} behavior updates)")
    print(f"metrics: {summary.get('metrics')}")
    print(f"checkpoint: {summary.get('checkpoint')}")
    for fig in summary.get("figures", []):
        print(f"figure: {fig}")
    return EXIT_OK


def _load_checkpoint(path):
    from .trainer import Trainer
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return Trainer.checkpoint_load(path)


def cmd_eval(args) -> int:
    from .evaluation import evaluate, format_report, write_rows_csv, write_trajectory
    trainer = _load_checkpoint(args.checkpoint)
    env_name = args.env or trainer.config.env_name
    report, records = evaluate(trainer.model, trainer.actor, env_name, args.episodes,
                               args.perturb, seed=args.seed, record=bool(args.out))
    print(format_report(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        row = {"environment": report.environment, "perturbation": report.perturbation,
               "episodes": report.episodes, "return": report.mean_return,
               "eqs": report.eqs, "ees": report.ees, "collision_rate": report.collision_rate}
        print(f"report: {write_rows_csv(os.path.join(args.out, 'eval_report.csv'), [row])}")
        traj_path = os.path.join(args.out, "trajectory_ep0.csv")
        write_trajectory(traj_path, records[0])
        print(f"trajectory: {traj_path}")
        from .environment import load_environment
        from .report import save_trajectory_figure
        rows = records[0].rows
        fig = save_trajectory_figure(load_environment(env_name),
                                     [r[1] for r in rows], [r[2] for r in rows],
                                     os.path.join(args.out, "trajectory_ep0.png"),
                                     title=f"{env_name} (return {report.mean_return:.1f})")
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluation import ablation_suite, write_rows_csv
    from .report import save_comparison_figure
    overrides = {}
    if args.env is not None:
        overrides["train.env_name"] = args.env
    if args.steps is not None:
        overrides["train.total_steps"] = args.steps
    cfg = load_config(args.config, args.preset, overrides)
    rows = ablation_suite(cfg, seeds=list(range(args.seeds)), eval_episodes=args.episodes)
    os.makedirs(args.out, exist_ok=True)
    out_csv = write_rows_csv(os.path.join(args.out, "ablation.csv"), rows)
    fig = save_comparison_figure(
        [r["variant"] for r in rows],
        {"return": [r["return"] for r in rows], "eqs": [r["eqs"] for r in rows]},
        os.path.join(args.out, "ablation.png"), title=f"ablations on {cfg.env_name}")
    header = f"{'variant':<20}{'return':>10}{'eqs':>10}{'ees':>8}{'coll%':>8}"
    print(header)
    for r in rows:
        print(f"{r['variant']:<20}{r['return']:>10.2f}{r['eqs']:>10.2f}"
              f"{r['ees']:>8.3f}{r['collision_rate']:>8.2%}")
    print(f"table: {out_csv}")
    print(f"figure: {fig}")
    return EXIT_OK


def cmd_robust(args) -> int:
    from .evaluation import robustness_suite, write_rows_csv
    from .report import save_comparison_figure
    trainer = _load_checkpoint(args.checkpoint)
    env_name = args.env or trainer.config.env_name
    rows = robustness_suite(trainer.model, trainer.actor, env_name,
                            episodes=args.episodes, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    out_csv = write_rows_csv(os.path.join(args.out, "robustness.csv"), rows)
    fig = save_comparison_figure(
        [r["mode"] for r in rows],
        {"return": [r["return"] for r in rows]},
        os.path.join(args.out, "robustness.png"), title=f"perturbations on {env_name}")
    print(f"{'mode':<16}{'return':>10}{'eqs':>10}{'degradation':>13}")
    for r in rows:
        print(f"{r['mode']:<16}{r['return']:>10.2f}{r['eqs']:>10.2f}{r['degradation']:>13.2%}")
    print(f"table: {out_csv}")
    print(f"figure: {fig}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .params import read_arrays
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    arrays, meta = read_arrays(args.checkpoint)
    if meta is None or meta.get("kind") != "trainer-checkpoint":
        raise ConfigError(f"{args.checkpoint}: not a trainer checkpoint")
    print(f"step {meta['step']}, episode {meta['episode']}")
    print("config:")
    print(json.dumps(meta["config"], indent=2, sort_keys=True))
    print("parameters:")
    total = 0
    for name in sorted(arrays):
        if name.endswith((".m", ".v")) or not name.startswith(("model/", "actor/", "critic/")):
            continue
        arr = arrays[name]
        total += arr.size
        print(f"  {name:<32} {str(tuple(arr.shape)):>16}")
    print(f"total parameter values: {total}")
    return EXIT_OK


def cmd_env_check(args) -> int:
    from .environment import (
        ROBOT_RADIUS,
        Action,
        ExplorationEnv,
        cast_rays,
        compute_reward,
        load_environment,
    )

    spec = load_environment(args.env)
    failures = []

    def check(name, ok):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        if not ok:
            failures.append(name)

    # ray casting agrees with an exhaustive per-segment check at random poses
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(0.5, spec.width - 0.5)
        y = rng.uniform(0.5, spec.height - 0.5)
        heading = rng.uniform(-np.pi, np.pi)
        got = cast_rays(x, y, heading, spec.walls)
        per_seg = np.full(360, np.inf)
        for seg in spec.walls:
            per_seg = np.minimum(per_seg, cast_rays(x, y, heading, seg.reshape(1, 4)))
        worst = max(worst, float(np.abs(got - np.minimum(per_seg, 5.0)).max()))
    check(f"ray casting self-consistent (worst {worst:.2e} m)", worst < 1e-9)

    env = ExplorationEnv(spec, np.random.default_rng(args.seed))
    env.reset()
    act_rng = np.random.default_rng(args.seed + 1)
    clear_ok = True
    explored_ok = True
    reward_ok = True
    prev_cells = env.tracker.explored_cells
    for _ in range(args.steps):
        r = env.step(Action(act_rng.uniform(-0.5, 0.5), act_rng.uniform(-1, 1)))
        clear_ok &= env.clearance(env.robot.x, env.robot.y) >= ROBOT_RADIUS - 1e-6
        cells = env.tracker.explored_cells
        explored_ok &= cells >= prev_cells
        prev_cells = cells
        expect = compute_reward(r.explored_delta, float(r.observation.min()), r.collided)
        reward_ok &= abs(r.reward - expect) < 1e-9
        if r.done:
            env.reset()
            prev_cells = env.tracker.explored_cells
    check("robot clearance never below radius", clear_ok)
    check("explored cell count nondecreasing", explored_ok)
    check("reward decomposes into its terms", reward_ok)

    def rollout(seed):
        e = ExplorationEnv(spec, np.random.default_rng(seed))
        rr = np.random.default_rng(seed + 1)
        e.reset()
        out = []
        for _ in range(60):
            s = e.step(Action(rr.uniform(-0.5, 0.5), rr.uniform(-1, 1)))
            out.append((s.reward, tuple(s.observation[:4])))
            if s.done:
                e.reset()
        return out

    check("deterministic under fixed seed", rollout(args.seed) == rollout(args.seed))
    if failures:
        print(f"{len(failures)} invariant check(s) failed")
        return EXIT_RUNTIME
    print("all simulator invariants hold")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "robust": cmd_robust,
    "inspect": cmd_inspect,
    "env-check": cmd_env_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, EnvironmentError_) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
