"""Command line entry point: train, eval, encode, bench, report."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .compressor import CompressorConfig, ContractError, Dictionary, drsc_encode
from .environment import EnvError, read_image


def _train(args) -> int:
    from .harness import RunConfig, train

    cfg = RunConfig.from_file(args.config, seed=args.seed, generations=args.generations) if args.config \
        else RunConfig(**{k: v for k, v in (("seed", args.seed), ("generations", args.generations)) if v is not None})
    state = train(cfg, args.out, resume=args.resume, plots=not args.no_plots)
    print(f"generation {state.gen}: dictionary {len(state.dictionary)}, parameters {state.dist.dim}")
    print(f"metrics: {Path(args.out) / 'metrics.csv'}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint.ckpt'}")
    return 0


def _eval(args) -> int:
    from .harness import evaluate_checkpoint

    report = evaluate_checkpoint(args.checkpoint, args.episodes, args.seed)
    print("episode,score")
    for i, score in enumerate(report["episodes"]):
        print(f"{i},{score!r}")
    print(f"mean,{report['mean']!r}")
    return 0


def _encode(args) -> int:
    d = Dictionary.load(args.dict)
    x = read_image(args.image)
    cfg = CompressorConfig(epsilon=args.epsilon, omega=args.omega)
    print("".join(str(int(b)) for b in drsc_encode(x, d, cfg)))
    return 0


def _bench(args) -> int:
    from .bench import run_suite

    result = run_suite(args.suite, args.out, plots=not args.no_plots)
    for row in result["rows"]:
        print(",".join(str(v) for v in row))
    if "r2" in result:
        print(f"linear fit R^2 = {result['r2']:.4f}")
    return 0


def _report(args) -> int:
    from .report import plot_metrics

    for path in plot_metrics(args.metrics, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixelevo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="evolve a controller")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--out", default="run")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="replay a checkpoint's mean genome")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_eval)

    p = sub.add_parser("encode", help="print the binary code of an image")
    p.add_argument("--dict", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--epsilon", type=float, default=CompressorConfig.epsilon)
    p.add_argument("--omega", type=int, default=CompressorConfig.omega)
    p.set_defaults(func=_encode)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=["xnes", "drsc"], required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_bench)

    p = sub.add_parser("report", help="plot a metrics.csv")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractError, EnvError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
