"""Command-line entry point: ``gridinvest train|evaluate|sweep|baseline|export-figures``.

Exit codes: 0 success, 1 usage error, 2 configuration or scenario error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from . import __version__
from .errors import CheckpointError, GridInvestError, ScenarioError
from .harness import PRESETS, RunConfig, baseline, evaluate, export_figures, sweep, train

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {text}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _override(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def _grid(text):
    try:
        grid = [tuple(int(w) for w in part.split(",")) for part in text.split(";") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like '400,300;256,256', got {text!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("grid must not be empty")
    return grid


def build_parser():
    parser = _Parser(prog="gridinvest", description="DDPG investment agent for a UK/Ireland power-system simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, out_default):
        p.add_argument("--scenario", default="uk_ie", help="scenario file or bundled name (default: uk_ie)")
        p.add_argument("--seed", type=_u64, default=0)
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--end-year", type=int, default=None, help="truncate the control horizon")

    def training(p):
        p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
        p.add_argument("--iterations", type=_positive, default=None)
        p.add_argument("--checkpoint-every", type=int, default=None, help="iterations between checkpoints (0: off)")
        p.add_argument(
            "--set", dest="overrides", type=_override, action="append", default=[], metavar="KEY=VALUE",
            help="agent setting override, e.g. --set actor_lr=3e-4 (repeatable)",
        )

    p = sub.add_parser("train", help="train an agent")
    common(p, "runs/train")
    training(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("evaluate", help="noise-free rollout of a checkpoint against a random baseline")
    common(p, "runs/eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=_positive, default=20, help="random-baseline episodes (default: 20)")

    p = sub.add_parser("sweep", help="train each hidden-layer configuration of a grid")
    common(p, "runs/sweep")
    training(p)
    p.set_defaults(preset="sweep")
    p.add_argument("--grid", type=_grid, default=None, help="e.g. '400,300;300,500;256,256'")
    p.add_argument("--workers", type=_positive, default=None, help="parallel processes (default: $GRIDINVEST_THREADS or 1)")

    p = sub.add_parser("baseline", help="simulate without RL control")
    common(p, "runs/baseline")
    p.add_argument("--continuation", choices=("zero", "diffusion"), default="zero")

    p = sub.add_parser("export-figures", help="write figure data CSVs for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--svg", action="store_true", help="also write SVG plots (needs matplotlib)")
    return parser


def _run_config(args, **extra):
    kwargs = dict(
        scenario=args.scenario,
        preset=args.preset,
        seed=args.seed,
        iterations=args.iterations,
        out=args.out,
        checkpoint_every=args.checkpoint_every,
        end_year=args.end_year,
        agent=dict(args.overrides),
    )
    kwargs.update(extra)
    cfg = RunConfig(**kwargs)
    cfg.resolved().agent_config()  # validate overrides before any work
    return cfg


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "train":
        out = train(_run_config(args), resume=args.resume)
        print(f"run written to {out}")
    elif args.command == "evaluate":
        report = evaluate(args.checkpoint, args.scenario, args.episodes, args.seed, args.out, args.end_year)
        print(json.dumps({k: report[k] for k in ("co2_ratio_vs_random", "reward_improvement_vs_random")}, indent=2))
        print(f"evaluation written to {args.out}")
    elif args.command == "sweep":
        extra = {"sweep_grid": args.grid} if args.grid else {}
        results = sweep(_run_config(args, **extra), workers=args.workers)
        for r in results:
            print(f"{r['label']:>12}  {r['status']:6}  {r['final_mean_reward']}  {r['error']}")
        if all(r["status"] != "ok" for r in results):
            return EXIT_RUNTIME
    elif args.command == "baseline":
        out = baseline(args.scenario, args.continuation, args.out, args.end_year)
        print(f"baseline written to {out}")
    elif args.command == "export-figures":
        for name in export_figures(args.run_dir, svg=args.svg):
            print(name)
    return EXIT_OK


def main(argv=None):
    try:
        code = run(argv)
    except (ScenarioError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        code = EXIT_CONFIG
    except GridInvestError as err:
        print(f"error: {err}", file=sys.stderr)
        code = EXIT_RUNTIME
    except KeyboardInterrupt:
        code = EXIT_RUNTIME
    sys.exit(code)


if __name__ == "__main__":
    main()
