"""Command line entry point: ``navsafe <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, mlp
from .algos.train import AGENT_KINDS
from .env import TASK_NAMES, EnvConfig, NavEnv, make_task, write_trace
from .properties import dump_properties, navigation_property_set
from .verify import BOUND_METHODS, DEFAULT_GAP, DEFAULT_MAX_BOXES, write_rows


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _manifest_for(out: Path, command: str, args: argparse.Namespace):
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    harness.write_manifest(out.with_name(out.stem + ".manifest.json"), command, cfg)


# ----------------------------------------------------------------- commands
def cmd_train(args) -> int:
    overrides = {
        "task": args.task, "agent": args.agent, "penalty": args.penalty, "seeds": args.seeds,
        "total_steps": args.steps, "samples": args.samples, "epsilon": args.epsilon,
        "omega": args.omega, "out_dir": args.out, "name": args.name,
        "checkpoint_every": args.checkpoint_every, "lppo_threshold": args.lppo_threshold,
        "jobs": args.jobs, "plots": True if args.plots else None,
        "online_properties": False if args.no_online else None,
    }
    if args.config:
        cfg = harness.RunConfig.load(args.config, overrides)
    else:
        if args.task is None:
            raise _UsageError("train needs --task (or --config)")
        cfg = harness.RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    report = harness.run_training(cfg, log=lambda s: print(s, file=sys.stderr))
    agg = report["aggregate"]
    print(f"{cfg.run_name}: {report['completed_seeds']} seed(s) -> {cfg.run_dir}")
    for m in harness.REPORT_METRICS:
        s = agg.get(f"final_{m}", {})
        if s.get("mean") is not None:
            print(f"  final {m}: {s['mean']:.4f} +- {s['std']:.4f}")
    return 0


def cmd_eval(args) -> int:
    props = harness.resolve_properties(args.properties)
    rows = []
    for path in args.checkpoints:
        net = mlp.load(path)
        r = harness.evaluate_policy(net, args.task, args.episodes, args.seed, props, args.samples)
        rows.append({"checkpoint": str(path), **r})
    summary = harness.summarize_rows([{**r, "group": "all"} for r in rows], "group",
                                     ["success_rate", "cost_per_episode", "violation"])
    for r in rows:
        print(f"{r['checkpoint']}: success {r['success_rate']:.3f}  cost/ep {r['cost_per_episode']:.2f}"
              f"  violation {r['violation']:.4f}")
    if args.out:
        out = Path(args.out)
        write_rows(rows, out)
        write_rows(summary, out.with_name(out.stem + "_summary.csv"))
        _manifest_for(out, "eval", args)
    return 0


def cmd_verify(args) -> int:
    props = harness.resolve_properties(args.properties)
    rows = harness.verify_checkpoints(args.checkpoints, props, args.gap, args.max_boxes, args.bounds)
    for r in rows:
        flag = "  (budget exhausted)" if r["budget_exhausted"] else ""
        print(f"{r['checkpoint']} {r['property']}: [{r['lower']:.4f}, {r['upper']:.4f}]"
              f" in {r['seconds']:.1f}s{flag}")
    if args.out:
        out = Path(args.out)
        write_rows(rows, out)
        write_rows(harness.summarize_rows(rows, "property", ["lower", "upper", "midpoint", "seconds"]),
                   out.with_name(out.stem + "_summary.csv"))
        _manifest_for(out, "verify", args)
    return 0


def cmd_compare(args) -> int:
    props = harness.resolve_properties(args.properties)
    rows, summary = harness.compare_checkpoints(args.checkpoints, props, args.m, args.gap,
                                                args.max_boxes, args.seed, args.bounds)
    for s in summary:
        parts = [f"formal {s['formal_mid_mean']:.4f}"]
        parts += [f"m={m}: {s[f'estimate_{m}_mean']:.4f}" for m in args.m]
        print(f"{s['property']}: " + "  ".join(parts))
    if args.out:
        out = Path(args.out)
        write_rows(rows, out)
        write_rows(summary, out.with_name(out.stem + "_summary.csv"))
        _manifest_for(out, "compare", args)
    return 0


def cmd_env_demo(args) -> int:
    cfg = EnvConfig.load(args.config) if args.config else make_task(args.task, args.seed)
    env = NavEnv(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        net = mlp.load(args.checkpoint)
        policy = lambda obs: int(np.argmax(net(obs)))  # noqa: E731
    else:
        policy = lambda obs: int(rng.integers(0, 5))  # noqa: E731
    out = write_trace(env, policy, args.steps, args.out, args.seed)
    _manifest_for(out, "env-demo", args)
    print(f"wrote {args.steps} steps of {cfg.name or 'custom env'} to {out}")
    return 0


def cmd_props(args) -> int:
    out = dump_properties(navigation_property_set(), args.out)
    print(f"wrote {len(navigation_property_set())} properties to {out}")
    return 0


# ------------------------------------------------------------------- parser
class _UsageError(Exception):
    pass


def _verify_opts(p: argparse.ArgumentParser):
    p.add_argument("--checkpoints", nargs="+", required=True, help="policy checkpoint files")
    p.add_argument("--properties", help="property file (JSON lines); default: navigation set")
    p.add_argument("--gap", type=float, default=DEFAULT_GAP, help="target bracket width")
    p.add_argument("--max-boxes", type=int, default=DEFAULT_MAX_BOXES)
    p.add_argument("--bounds", choices=sorted(BOUND_METHODS), default="ibp",
                   help="bounding method inside branch and bound")
    p.add_argument("--out", help="CSV output path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="navsafe", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent over one or more seeds")
    p.add_argument("--config", help="JSON run config; flags override its entries")
    p.add_argument("--task", choices=TASK_NAMES)
    p.add_argument("--agent", choices=AGENT_KINDS)
    p.add_argument("--penalty", choices=["none", "cost", "violation"])
    p.add_argument("--seeds", help="e.g. 0..2 or 0,3,5")
    p.add_argument("--steps", type=int, help="environment steps per seed")
    p.add_argument("--samples", type=int, help="samples per property for the per-step estimate")
    p.add_argument("--epsilon", type=float, help="half-width of online property boxes")
    p.add_argument("--omega", type=float, help="penalty weight")
    p.add_argument("--lppo-threshold", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--no-online", action="store_true", help="disable online property generation")
    p.add_argument("--jobs", type=int, help="parallel seed workers")
    p.add_argument("--plots", action="store_true", help="write SVG learning curves")
    p.add_argument("--out", help="output root directory (default: runs)")
    p.add_argument("--name", help="run directory name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy rollouts of trained policies")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--task", choices=TASK_NAMES, default="Evaluation_NT")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--properties")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="branch-and-bound violation bounds per property")
    _verify_opts(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="sampled estimates against formal bounds")
    _verify_opts(p)
    p.add_argument("--m", type=_int_list, default=[100, 1000, 10_000], help="sample counts, e.g. 100,1000")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("env-demo", help="roll a random or checkpoint policy and dump a trace")
    p.add_argument("--task", choices=TASK_NAMES, default="Fixed_obs_NT")
    p.add_argument("--config", help="environment config JSON (overrides --task)")
    p.add_argument("--checkpoint", help="greedy policy checkpoint (default: random actions)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="env_trace.csv")
    p.set_defaults(func=cmd_env_demo)

    p = sub.add_parser("props", help="write the navigation property file")
    p.add_argument("--out", default="properties.jsonl")
    p.set_defaults(func=cmd_props)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"navsafe {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
