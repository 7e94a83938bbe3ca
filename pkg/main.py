import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from app.config import load_run_config, parse_assignments, settings
from app.core.selftest import run_selftest
from app.core.synthesis import synthesize
from app.core.workflow import REPORT_TEXT_FILE, PipelineWorkflow
from app.errors import ConfigError, GSMFlowError
from app.logging_config import logger
from app.models import BenchmarkSpec, EvalReport
from app.utils.benchmark import generate_benchmark
from app.utils.checkpoint import load_checkpoint
from app.utils.data_io import save_dataset, write_features

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

SYNTHETIC_FILE = "synthetic.bin"


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems with the validation exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _overrides(args) -> Dict[str, str]:
    values = parse_assignments(args.set or [], "--set")
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return values


def _require_dir(path: str, flag: str) -> None:
    if not Path(path).is_dir():
        raise ConfigError(f"{flag}: directory not found: {path}")


def _print_report(report: EvalReport) -> None:
    for line in report.to_text().splitlines():
        key, _, value = line.partition("=")
        print(f"{key:<22} {value}")


def cmd_gen_bench(args) -> int:
    spec = BenchmarkSpec(
        n_seen=args.n_seen,
        n_unseen=args.n_unseen,
        d=args.dim,
        a=args.attr_dim,
        samples_per_class=args.samples_per_class,
        map_scale=args.map_scale,
        seed=args.seed if args.seed is not None else settings.DEFAULT_SEED,
    )
    dataset, truth = generate_benchmark(spec)
    save_dataset(dataset, args.out, truth)
    print(f"benchmark written to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require_dir(args.data_dir, "--data-dir")
    config = load_run_config(args.config, _overrides(args))
    state = PipelineWorkflow().run(config, args.data_dir, args.out, evaluate=False)
    history = state["train_state"].history
    if history:
        print(f"final epoch {history[-1].epoch}: nll={history[-1].nll:.6f} total={history[-1].total:.6f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    _require_dir(args.data_dir, "--data-dir")
    config = load_run_config(args.config, _overrides(args))
    state = PipelineWorkflow().run(config, args.data_dir, args.out, evaluate=True)
    _print_report(state["report"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require_dir(args.data_dir, "--data-dir")
    config = load_run_config(args.config, _overrides(args))
    out_dir = args.out or str(Path(args.checkpoint).parent)
    state = PipelineWorkflow().run(config, args.data_dir, out_dir, checkpoint_path=args.checkpoint)
    _print_report(state["report"])
    print(f"report written to {Path(out_dir) / REPORT_TEXT_FILE}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    checkpoint = load_checkpoint(args.checkpoint)
    checkpoint.table.require_gzsl()
    synthetic = synthesize(checkpoint.flow, checkpoint.embedder, checkpoint.table, config.synth)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_features(out_dir / SYNTHETIC_FILE, synthetic.features, synthetic.labels)
    print(f"{len(synthetic.labels)} synthetic features written to {out_dir / SYNTHETIC_FILE}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed if args.seed is not None else settings.DEFAULT_SEED)
    for r in results:
        print(f"{r.name:<10} {'ok' if r.passed else 'FAILED':<7} {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gsmflow", description=f"{settings.APP_NAME} {settings.APP_VERSION}: zero-shot feature synthesis with conditional flows")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def common(p, config: bool = True):
        p.add_argument("--seed", type=int, default=None, help="Master seed")
        if config:
            p.add_argument("--config", default=None, help="Flat key=value config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key (repeatable)")

    p = sub.add_parser("gen-bench", help="Write a synthetic benchmark data directory")
    p.add_argument("--n-seen", type=int, default=15)
    p.add_argument("--n-unseen", type=int, default=5)
    p.add_argument("--dim", type=int, default=32, help="Feature dimension d")
    p.add_argument("--attr-dim", type=int, default=16, help="Attribute dimension a")
    p.add_argument("--samples-per-class", type=int, default=300)
    p.add_argument("--map-scale", type=float, default=3.0)
    p.add_argument("--out", required=True, help="Output data directory")
    common(p, config=False)
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("train", help="Train flow and embedder, write checkpoint and training log")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="Write synthetic unseen-class features (GSMX)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="Evaluate a checkpoint under CZSL/GZSL protocols")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", default=None, help="Report directory (defaults to the checkpoint's)")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="Train, synthesize and evaluate in one process")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("selftest", help="Gradient, roundtrip and log-determinant checks")
    common(p, config=False)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GSMFlowError as e:
        logger.error(f"{args.command} failed: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command} rejected input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"{args.command} crashed: {e}")
        print(f"error: unexpected failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
