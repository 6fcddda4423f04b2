"""Command-line entry point: train, sweep, oracle-check, report.

Exit codes: 0 success, 1 usage or config error, 2 check failure,
3 runtime failure. ``FGAN_OUT`` sets the default output root.
"""
import argparse
import sys
from pathlib import Path

from . import checks
from .config import ConfigError, load_experiment, load_sweep
from .report import ReportError, report
from .runner import default_out_root, run_sweep, run_train, summary_line

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="factorgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one configured run")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="run directory (default: $FGAN_OUT/<config name>)")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("sweep", help="train every (n_paired, model_kind, seed) cell and aggregate")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="sweep directory (default: $FGAN_OUT/<config name>)")
    p.add_argument("--seed", type=int, help="override the first seed")
    p.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("oracle-check", help="run the analytic-oracle identity checks")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="plots and summary.md for a run or sweep directory")
    p.add_argument("path", type=Path)
    return parser


def _load(loader, path, **kw):
    try:
        return loader(path, **kw)
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror or exc})", source=str(path)) from exc


def _out_dir(args, config_path):
    return args.out if args.out is not None else default_out_root() / Path(config_path).stem


def cmd_train(args):
    cfg = _load(load_experiment, args.config)
    if args.seed is not None:
        cfg = cfg.with_changes(seed=args.seed)
    run_dir = _out_dir(args, args.config) if args.out or not cfg.out_dir else Path(cfg.out_dir)
    summary = run_train(cfg, run_dir)
    print(summary_line(run_dir, summary))
    return EXIT_OK


def cmd_sweep(args):
    if args.parallel < 1:
        raise ConfigError("must be at least 1", "--parallel")
    spec = _load(load_sweep, args.config, seed=args.seed)
    out = _out_dir(args, args.config)

    def on_cell(res):
        msg = f"{res['run_dir']}: {res['status']}"
        if "error" in res:
            msg += f" ({res['error']})"
        print(msg, flush=True)

    outcomes = run_sweep(spec, out, args.parallel, on_cell)
    failed = sum(o["status"] != "complete" for o in outcomes)
    print(f"{out}: {len(outcomes)} cells, {failed} failed; aggregate at {out / 'aggregate.csv'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_oracle_check(args):
    results = checks.run_all(seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status} {r.name}: max error {r.max_error:.3e} (tolerance {r.tolerance:.0e})"
        if r.detail:
            line += f" [{r.detail}]"
        print(line)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_report(args):
    out = report(args.path)
    if isinstance(out, dict):
        print(f"{args.path}: {len(out)} metric plots in {args.path / 'plots'}")
    else:
        print(f"{args.path}: wrote {', '.join(p.name for p in out)}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "oracle-check": cmd_oracle_check, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"factorgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReportError as exc:
        print(f"factorgan: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a failed run
        print(f"factorgan: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
