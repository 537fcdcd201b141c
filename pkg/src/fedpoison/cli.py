"""Command line entry point: ``fedpoison run|sweep|defend|report``.

Exit codes: 0 success, 2 configuration error, 3 data or file error,
4 failure while running.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .data import DataError
from .defense import DefenseSweep, balanced_accuracy, evaluate_updates
from .federation import ConfigError
from .harness import (ExperimentConfig, ExperimentError, export_report, find_runs, list_presets,
                      load_preset, load_recorded, parse_config, read_blacklist, run_experiment,
                      run_single, write_defense)
from .harness.config import parse_window

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("fedpoison")


def _load_config(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    if args.preset:
        config = load_preset(args.preset, seed=args.seed)
    else:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        config = parse_config(text, seed=args.seed)
    if args.blacklist:
        extra = read_blacklist(args.blacklist)
        fed = dataclasses.replace(config.federation,
                                  blacklist=tuple(config.federation.blacklist) + extra)
        config = dataclasses.replace(config, federation=fed)
    return config


def cmd_run(args) -> int:
    config = _load_config(args)
    if config.sweep:
        log.warning("run ignores the [sweep] section; use 'sweep' to run the grid")
        config = dataclasses.replace(config, sweep=())
    outcome = run_single(config, args.out, with_baseline=not args.no_baseline)
    series = outcome.result.series
    src = config.federation.source_class
    print(f"final accuracy {series.accuracy[-1]:.4f}, source recall {series.recall[-1][src]:.4f}")
    if outcome.defense is not None:
        print(f"defense: attack detected = {outcome.defense.attack_detected}, "
              f"flagged = {sorted(outcome.defense.flagged)}")
    print(f"wrote {Path(args.out) / 'run'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args)
    runs, tables = run_experiment(config, args.out, workers=args.workers)
    print(f"{len(runs)} runs; tables: {', '.join(str(p) for p in tables.values())}")
    return EXIT_OK


def _parse_rounds(text: str | None, rounds: int, start: int) -> tuple[int, int]:
    if text is None:
        return (min(start, rounds), rounds)
    window = parse_window(text, rounds, max(rounds // 2, 1))
    if window is None or not 1 <= window[0] <= window[1] <= rounds:
        raise ConfigError(f"defense rounds {text!r} not within [1, {rounds}]")
    return window


def cmd_defend(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "updates.csv").exists():
        raise DataError(f"{run_dir} is not a run directory (no updates.csv)")
    config = parse_config((run_dir / "config.ini").read_text())
    rec = load_recorded(run_dir)
    rounds = _parse_rounds(args.rounds, len(rec.history) - 1, config.defense_start)
    if args.source is None:
        source = config.federation.source_class
    elif args.source == "all":
        source = None
    else:
        try:
            source = int(args.source)
        except ValueError:
            raise ConfigError(f"--source must be a class id or 'all', got {args.source!r}") from None
    reference = args.reference or config.defense_reference
    tau = args.tau if args.tau is not None else config.tau_sep
    result = evaluate_updates(rounds, rec, source, tau_sep=tau, reference=reference)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    ids = range(rec.n_participants)
    if isinstance(result, DefenseSweep):
        flagged = set()
        for c, rep in sorted(result.reports.items()):
            write_defense(rep, out, suffix=f"_class{c}")
            flagged |= rep.flagged
            print(f"class {c}: attack detected = {rep.attack_detected}, "
                  f"flagged = {sorted(rep.flagged)}")
        (out / "blacklist.txt").write_text("".join(f"{p}\n" for p in sorted(flagged)))
    else:
        write_defense(result, out)
        flagged = result.flagged
        print(f"attack detected = {result.attack_detected}, flagged = {sorted(flagged)}, "
              f"separation = {result.separation:.3f}")
    if rec.malicious or rec.n_participants:
        print(f"balanced accuracy vs designated malicious: "
              f"{balanced_accuracy(flagged, rec.malicious, ids):.3f}")
    print(f"wrote {out / 'blacklist.txt'}")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = find_runs(args.root)
    if not runs:
        raise DataError(f"no attacked runs found under {args.root}")
    out = Path(args.out) if args.out else Path(args.root)
    config = None
    if (Path(args.root) / "experiment.ini").exists():
        config = parse_config((Path(args.root) / "experiment.ini").read_text())
    tables = export_report(runs, out, config)
    print(f"{len(runs)} runs; tables: {', '.join(str(p) for p in tables.values())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpoison", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", choices=list_presets(), help="built-in preset")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--blacklist", help="file of participant ids to exclude from selection")

    p = sub.add_parser("run", help="train one configuration (plus its clean baseline)")
    config_flags(p)
    p.add_argument("--no-baseline", action="store_true", help="skip the unpoisoned twin run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep grid with repeats and write summary tables")
    config_flags(p)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defend", help="run the detection pipeline on a recorded run")
    p.add_argument("run", help="run directory")
    p.add_argument("--source", default=None,
                   help="suspected source class, or 'all' to try every class (default: config)")
    p.add_argument("--rounds", help="round range 'first-last' (default: defense_start to R)")
    p.add_argument("--reference", choices=("current", "previous"),
                   help="global parameters the uploads are compared with")
    p.add_argument("--tau", type=float, help="separation threshold")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report", help="re-derive summary tables from run directories")
    p.add_argument("root", help="directory containing run directories")
    p.add_argument("--out", help="output directory (default: root)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedpoison: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"fedpoison: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ExperimentError, ValueError, ArithmeticError) as exc:
        print(f"fedpoison: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
