"""Command-line entry point: ``qospredict {predict,simulate,bench,plot-data}``."""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import sys
from typing import Iterator, TextIO

from .events import EventParseError, OutOfOrderError, format_event, read_events
from .pipeline import (
    ConfigError,
    Predictor,
    bench,
    default_qcs,
    load_config,
    plot_data,
    scenario_snapshot,
    write_bench,
    write_plot_data,
    write_records,
)
from .qc import QcSyntaxError, parse_qc_file
from .scenarios import generate

log = logging.getLogger("qospredict")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _open_out(path: str | None) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


@contextlib.contextmanager
def _open_in(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fh:
            yield fh


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def cmd_predict(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.qc:
        try:
            with open(args.qc, encoding="utf-8") as fh:
                qcs = parse_qc_file(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read QC file {args.qc}: {exc}") from None
    else:
        qcs = default_qcs(config)

    predictor = Predictor(config, qcs)
    with _open_in(args.events) as src, _open_out(args.out) as out:
        def records():
            for event in read_events(src, config.out_of_order):
                record = predictor.push(event)
                if record is not None:
                    yield record
        write_records(records(), out, timings=config.timings)
    if args.derived:
        with _open_out(args.derived) as fh:
            for event in predictor.derived:
                fh.write(format_event(event) + "\n")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    scen = config.scenario(args.scenario)
    overrides = {"seed": args.seed, "duration_min": args.duration,
                 "sample_period_min": args.period, "noise_std_mw": args.noise,
                 "production_drift_mw_per_min": args.drift}
    try:
        scen = dataclasses.replace(scen, **{k: v for k, v in overrides.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with _open_out(args.out) as out:
        for event in generate(scen):
            out.write(format_event(event) + "\n")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    try:
        lengths = [int(x) for x in _csv_list(args.lengths)]
    except ValueError:
        raise ConfigError(f"bad --lengths {args.lengths!r}") from None
    rows = bench(lengths, rate=args.rate, horizon=args.horizon or config.horizon, config=config)
    with _open_out(args.out) as out:
        write_bench(rows, out)
    for r in rows:
        log.info("length %d: %d states, %d transitions, %.3f s", r.queue_length, r.states,
                 r.transitions, r.total_time_s)
    return EXIT_OK


def cmd_plot_data(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    scenarios = _csv_list(args.scenarios)
    for name in scenarios:
        if name not in ("A", "B", "C"):
            raise ConfigError(f"unknown scenario {name!r}")
    snapshots = {name: scenario_snapshot(config, name) for name in scenarios}
    rows = plot_data(config.partition, snapshots, config.horizon, config.violation_label)
    with _open_out(args.out) as out:
        write_plot_data(rows, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qospredict", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("predict", help="run the prediction loop over an event stream")
    p.add_argument("--config")
    p.add_argument("--events", required=True, help="event file, or - for stdin")
    p.add_argument("--qc", help="Quality Constraint file (default: the alarm constraint)")
    p.add_argument("--out", help="prediction CSV (default: stdout)")
    p.add_argument("--derived", help="write derived balance/range/critical events here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="generate a synthetic smart-meter stream")
    p.add_argument("--config")
    p.add_argument("--scenario", required=True, choices=["A", "B", "C"])
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="minutes")
    p.add_argument("--period", type=float, help="sampling period, minutes")
    p.add_argument("--noise", type=float, help="noise standard deviation, MW")
    p.add_argument("--drift", type=float, help="production drift, MW per minute")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="model size and checking time of the 3-queue network")
    p.add_argument("--config")
    p.add_argument("--lengths", default="20,40,60,80,100")
    p.add_argument("--rate", type=float, default=0.1, help="per-queue rate, 1/minute")
    p.add_argument("--horizon", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot-data", help="violation probability for every start state")
    p.add_argument("--config")
    p.add_argument("--scenarios", default="A,B,C")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, QcSyntaxError) as exc:
        print(f"qospredict: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EventParseError, OutOfOrderError, OSError, ValueError, RuntimeError) as exc:
        print(f"qospredict: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
