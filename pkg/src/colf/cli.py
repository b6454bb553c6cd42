"""``colf`` command line: train, eval, export, scenarios."""

from __future__ import annotations

import argparse
import json
import sys

from . import experiment as ex
from .env import list_scenarios, load_scenario
from .grounding import MisalignmentModel
from .nn import ContractError


def _seeds(text: str) -> list[int]:
    """``0,1,2`` or ``0-2``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colf", description="Leader-follower cooperative transport experiments")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seed from a TOML run config")
    t.add_argument("--config", required=True, help="run config (TOML)")
    t.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    t.add_argument("--out", default=None, help="run directory (overrides config)")
    t.add_argument("--iterations", type=int, default=None, help="override the iteration count")

    e = sub.add_parser("eval", help="evaluate checkpoints on a scenario")
    e.add_argument("--ckpt", required=True, action="append",
                   help="checkpoint file; repeat to pair checkpoints with seeds")
    e.add_argument("--scenario", required=True, help="packaged scenario name or TOML path")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seeds", type=_seeds, default=[0, 1, 2], help="e.g. 0,1,2 or 0-2")
    e.add_argument("--perception", choices=("vector", "grounded"), default="vector")
    e.add_argument("--p-wrong", type=float, default=0.0, help="follower wrong-landmark probability")
    e.add_argument("--noise-std", type=float, default=0.0, help="follower estimate noise (m)")
    e.add_argument("--sample", action="store_true", help="sample actions instead of using the mean")
    e.add_argument("--depth-mode", choices=("center", "surface"), default="center")
    e.add_argument("--out", default=None, help="write report.json and trajectory logs here")
    e.add_argument("--json", action="store_true", help="print the report as JSON")

    x = sub.add_parser("export", help="write one evaluated trial as line-delimited JSON")
    x.add_argument("--run", required=True, help="eval output or training run directory")
    x.add_argument("--trial", type=int, required=True)
    x.add_argument("--seed", type=int, default=None, help="which seed's logs (default: lowest)")
    x.add_argument("--dest", default=None, help="output file")

    sub.add_parser("scenarios", help="list packaged scenarios")
    return p


def cmd_train(args) -> int:
    run = ex.RunConfig.from_toml(args.config)
    if args.iterations is not None:
        run.iterations = args.iterations
    res = ex.train(run, seed=args.seed, out=args.out)
    last = res.rows[-1] if res.rows else {}
    print(f"final checkpoint: {res.final_checkpoint}")
    print(f"metrics: {res.metrics_path} ({len(res.rows)} iterations"
          + (f", last mean r_obj {last['mean_r_obj']:.3f})" if last else ")"))
    if res.report is not None:
        print(res.report.summary())
    return 0


def cmd_eval(args) -> int:
    scenario = load_scenario(args.scenario)
    mis = MisalignmentModel(p_wrong=args.p_wrong, noise_std=args.noise_std)
    report = ex.evaluate(args.ckpt, scenario, args.trials, args.seeds, args.perception, mis,
                         action_mode="sample" if args.sample else "mean", depth_mode=args.depth_mode,
                         out=args.out)
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.summary())
    return 0


def cmd_export(args) -> int:
    path = ex.export(args.run, args.trial, seed=args.seed, dest=args.dest)
    print(path)
    return 0


def main(argv=None) -> int:
    ex.configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "scenarios":
        for name in list_scenarios():
            print(name)
        return 0
    handler = {"train": cmd_train, "eval": cmd_eval, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except ex.TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: not found: {exc}", file=sys.stderr)
        return 2
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
