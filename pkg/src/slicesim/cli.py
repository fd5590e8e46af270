"""Command-line entry point.

Exit status: 0 on success, 1 for a bad invocation, 2 when the run itself fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from slicesim.encoding import encode_levels, to_bitstring
from slicesim.harness import (
    PHASE_EVAL,
    POLICIES,
    SCHEMA_VERSION,
    episode_streams,
    generate_report,
    load_config,
    run_evaluation,
    run_experiment,
    run_training,
)
from slicesim.policy.agents import NEURAL, AcceptAll
from slicesim.simulator import run_episode
from slicesim.workload import generate_arrivals

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slicesim", description="Slice admission control simulator and policy trainer.")
    parser.add_argument("--version", action="version", version=f"config schema {SCHEMA_VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, out: bool = True) -> None:
        p.add_argument("--config", type=Path, required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        p.add_argument("--policy", choices=POLICIES, help="policy (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes for rollouts")
        if out:
            p.add_argument("--out", type=Path, help="output directory (overrides the config)")

    p = sub.add_parser("train", help="train a neural policy and write its checkpoint")
    common(p)

    p = sub.add_parser("eval", help="evaluate one policy and write episodes.csv")
    common(p)
    p.add_argument("--checkpoint", type=Path, help="checkpoint of a trained neural policy")
    p.add_argument("--argmax", action="store_true", help="act greedily instead of sampling")

    p = sub.add_parser("report", help="aggregate every episodes.csv under --out")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("experiment", help="train and evaluate all policies over several seeds, then report")
    common(p)
    p.add_argument("--seeds", type=int, default=5, help="run master seeds 0..N-1")

    p = sub.add_parser("encode-dump", help="print the encoded state one arrival sees, as a 0/1 string")
    common(p, out=False)
    p.add_argument("--index", type=int, default=0, help="arrival index within evaluation episode 0")
    return parser


def _config(args: argparse.Namespace):
    return load_config(
        args.config,
        seed=args.seed,
        policy=args.policy,
        out=getattr(args, "out", None),
        workers=args.workers,
        argmax=getattr(args, "argmax", None) or None,
    )


def _encode_dump(args: argparse.Namespace) -> str:
    cfg = _config(args)
    policy = cfg.policy if cfg.policy in NEURAL else "prop"
    topo = cfg.load_topology()
    spec = cfg.encoding(topo, policy)
    sched_rng, noise_rng, policy_rng = episode_streams(cfg.seed, PHASE_EVAL, 0, 0)
    schedule = generate_arrivals(sched_rng, cfg.workload, len(topo.cos))
    if not 0 <= args.index < len(schedule.requests):
        raise UsageError(f"--index must lie in [0, {len(schedule.requests)})")

    captured: list[str] = []

    class Probe(AcceptAll):
        def decide(self, ctx, rng):
            if ctx.request.id == args.index:
                captured.append(to_bitstring(spec.expand(encode_levels(ctx.state, ctx.request, spec, ctx.path))))
            return super().decide(ctx, rng)

    run_episode(topo, schedule, Probe(), cfg.sim, noise_rng, policy_rng)
    return captured[0]


def run(args: argparse.Namespace) -> None:
    if args.command == "report":
        generate_report(args.out)
        return
    if args.command == "eval":
        policy = args.policy or load_config(args.config).policy
        if policy in NEURAL and args.checkpoint is None:
            raise UsageError(f"eval --policy {policy} needs --checkpoint")
    if args.command == "train":
        cfg = _config(args)
        if cfg.policy not in NEURAL:
            raise UsageError(f"policy not trainable: {cfg.policy!r}")
        print(run_training(cfg).checkpoint)
    elif args.command == "eval":
        cfg = _config(args)
        run_evaluation(cfg, args.checkpoint)
        print(cfg.out / "episodes.csv")
    elif args.command == "experiment":
        cfg = _config(args)
        run_experiment(cfg, range(args.seeds))
        print(cfg.out)
    elif args.command == "encode-dump":
        print(_encode_dump(args))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"slicesim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"slicesim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
