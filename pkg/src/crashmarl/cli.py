"""Command-line entry point: ``crashmarl {train,eval,render,sweep}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import metrics_io
from .config import RunConfig, parse_config
from .env_core import CrashBehavior, CrashMask, check_probability
from .errors import CrashMarlError
from .gridworld import GridButtonsEnv


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_config(path):
    return parse_config(path) if path else RunConfig()


def cmd_train(args, out):
    from .trainer import run_training

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(trainer__seed=args.seed)
    out_dir = Path(args.out) if args.out else Path(cfg.trainer.out_dir)
    result = run_training(cfg, out_dir=out_dir)
    last = result.log_rows[-1] if result.log_rows else None
    summary = f"wrote {result.checkpoint_path} and {result.log_path}"
    if last is not None:
        summary += f" (rounds {last.round}, final alpha {last.alpha:.4g}, e {last.e:.4g})"
    print(summary, file=out)
    return 0


def cmd_eval(args, out):
    from .trainer import test_matrix

    for r in args.rates:
        check_probability(r, "rate")
    rows = test_matrix(args.checkpoint, args.rates, args.episodes, seed=args.seed,
                       behavior=CrashBehavior.parse(args.behavior))
    if args.out:
        metrics_io.write_test_matrix_csv(rows, args.out)
    else:
        out.write(metrics_io.format_test_matrix(rows))
    return 0


def cmd_render(args, out):
    if args.checkpoint:
        from .trainer import _load, rollout

        params, env_config = _load(args.checkpoint)
        n = env_config.n_agents
        bits = [False] * n
        for i in args.crashed:
            if not 0 <= i < n:
                raise CrashMarlError(f"agent {i} does not exist (n_agents = {n})")
            bits[i] = True
        mask = CrashMask(tuple(bits))
        behavior = CrashBehavior.parse(args.behavior)
        ep, _ = rollout(GridButtonsEnv(env_config), params.agent, mask, behavior, 0.0, None, None)
        dump = metrics_io.TrajectoryDump.from_episode(env_config, ep, label=f"crashed {list(mask.crashed_indices())}")
        metrics_io.save_trajectory(dump, args.path)
    else:
        dump = metrics_io.load_trajectory(args.path)
    print(metrics_io.render_trajectory_ascii(dump), file=out)
    return 0


def cmd_sweep(args, out):
    from .trainer import sweep

    cfg = _load_config(args.config)
    out_dir = Path(args.out) if args.out else Path(cfg.trainer.out_dir) / "sweep"
    table = sweep(args.betas, args.rhos, cfg, seeds=args.seeds, rates=args.rates,
                  episodes=args.episodes, out_dir=out_dir)
    print(f"wrote {out_dir / 'sweep.csv'} ({len(table)} rows)", file=out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="crashmarl", description="Crash-robust cooperative MARL toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="{train,eval,render,sweep}")
    sub.required = True

    p = sub.add_parser("train", help="train one run from a config file")
    p.add_argument("--config", help="run config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override trainer.seed")
    p.add_argument("--out", help="output directory (default: trainer.out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-matrix evaluation of one or more checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True, help="checkpoint file(s), one per training seed")
    p.add_argument("--rates", type=_float_list, default=[0.01, 0.05, 0.10])
    p.add_argument("--episodes", type=int, default=128)
    p.add_argument("--behavior", choices=[b.value for b in CrashBehavior], default="freeze")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="print an ASCII rendering of a trajectory dump")
    p.add_argument("path", help="trajectory JSON; written first when --checkpoint is given")
    p.add_argument("--checkpoint", help="roll out this checkpoint greedily and save the dump to PATH")
    p.add_argument("--crashed", type=_int_list, default=[], help="comma-separated crashed agent ids")
    p.add_argument("--behavior", choices=[b.value for b in CrashBehavior], default="freeze")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="adaptive (beta, rho) grid search")
    p.add_argument("--config", help="base run config file")
    p.add_argument("--betas", type=_float_list, required=True)
    p.add_argument("--rhos", type=_float_list, required=True)
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--rates", type=_float_list, default=[0.01, 0.05, 0.10])
    p.add_argument("--episodes", type=int, default=128)
    p.add_argument("--out", help="sweep root directory")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: usage text already printed, code 2 (0 for --help)
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except (CrashMarlError, OSError, ValueError) as exc:
        print(f"crashmarl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
