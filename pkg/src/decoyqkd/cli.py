"""Command line: simulate, analyze, reproduce and calibrate.

Exit status: 0 completed (the key may be zero), 2 validation or parse error,
3 I/O error, 4 analysis or calibration failure.
"""
from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager

from . import fileio, published
from .analysis import analyze
from .channel import ChannelModel, calibrate_channel, write_detection_dump
from .errors import EXIT_IO, EXIT_OK, AnalysisError, QKDError
from .params import ProtocolParams, validate_params
from .simulate import PER_PULSE_CAP, aggregate_tally, run_aggregate, run_per_pulse
from .source import SourceStream, generate_block, write_pulse_dump


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _load_config(path: str | None) -> ProtocolParams:
    params = fileio.load_params(path) if path else ProtocolParams()
    return validate_params(params)


def cmd_simulate(args) -> int:
    params = _load_config(args.config)
    n = params.total_pulses if args.pulses is None else args.pulses
    channel = ChannelModel.from_params(params)
    if args.mode == "perpulse":
        result = run_per_pulse(params, channel, n, args.seed, cap=args.cap)
        tally = result.to_tally()
        if args.dump_detections:
            with _output(args.dump_detections) as fh:
                write_detection_dump(result.detections, fh)
        if args.dump_pulses:
            stream = SourceStream(args.seed, min(n, 1 << 20), params)
            with _output(args.dump_pulses) as fh:
                written = 0
                block = 0
                while written < n:
                    plans = generate_block(stream, block)[: n - written]
                    write_pulse_dump(plans, fh)
                    written += len(plans)
                    block += 1
    else:
        if args.dump_detections or args.dump_pulses:
            raise ValueError("event dumps need --mode perpulse")
        counts = run_aggregate(params, channel, n, args.seed)
        tally = aggregate_tally(params, counts, args.seed)
    with _output(args.tally) as fh:
        fh.write(fileio.tally_to_text(tally, params))
    return EXIT_OK


def cmd_analyze(args) -> int:
    base = _load_config(args.config)
    if not args.tally:
        raise ValueError("analyze needs --tally PATH")
    tally, params = fileio.load_tally(args.tally, base)
    validate_params(params)
    result = analyze(tally, params)
    with _output(args.report) as fh:
        fh.write(fileio.report_to_text(result))
    return EXIT_OK


def reproduce_rows(params: ProtocolParams | None = None):
    """``[(row, computed value, passed)]`` for every published analysis quantity."""
    params = params or published.published_params()
    result = analyze(published.published_tally(), params)
    return [(row, row.get(result), row.passes(row.get(result))) for row in published.ROWS]


def format_reproduction(rows) -> str:
    head = f"{'quantity':<14} {'published':>12} {'computed':>14} {'deviation':>11}  tol        result"
    lines = [head, "-" * len(head)]
    for row, value, ok in rows:
        kind = "rel" if row.relative else "abs"
        lines.append(
            f"{row.name:<14} {row.published:>12.6g} {value:>14.6g} {row.deviation(value):>11.3e}  "
            f"{kind} {row.tol:<6.0e} {'PASS' if ok else 'FAIL'}"
        )
    passed = sum(ok for _, _, ok in rows)
    lines.append(f"{passed}/{len(rows)} rows within tolerance")
    return "\n".join(lines) + "\n"


def cmd_reproduce(args) -> int:
    overrides = {}
    if args.n_sigma is not None:
        overrides["n_sigma"] = args.n_sigma
    if args.ec_efficiency is not None:
        overrides["ec_efficiency"] = args.ec_efficiency
    params = validate_params(published.published_params(**overrides))
    with _output(args.report) as fh:
        fh.write(format_reproduction(reproduce_rows(params)))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    base = _load_config(args.config)
    if not args.tally:
        raise ValueError("calibrate needs --tally PATH")
    tally, params = fileio.load_tally(args.tally, base)
    cal = calibrate_channel(tally, params)
    fitted = validate_params(cal.apply(params))
    header = [
        "fitted channel",
        f"transmittance = {cal.channel.transmittance!r}",
        f"eta_sys = {cal.eta_sys!r}",
    ]
    header += [f"{k} = {v!r}" for k, v in cal.residuals.items()]
    with _output(args.report) as fh:
        fh.write(fileio.params_to_text(fitted, header="\n".join(header)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decoyqkd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value parameter file")
        p.add_argument("--tally", help="tally file (output of simulate, input otherwise)")
        p.add_argument("--report", help="report / output file (default stdout)")

    p = sub.add_parser("simulate", help="simulate a run and write its tally")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("perpulse", "aggregate"), default="aggregate")
    p.add_argument("--pulses", type=int, help="override total_pulses")
    p.add_argument("--cap", type=int, default=PER_PULSE_CAP, help="per-pulse mode size limit")
    p.add_argument("--dump-detections", metavar="PATH")
    p.add_argument("--dump-pulses", metavar="PATH")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="compute key rates from a tally")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", help="compare the analysis with the published 200 km table")
    p.add_argument("--report", help="output file (default stdout)")
    p.add_argument("--n-sigma", type=float)
    p.add_argument("--ec-efficiency", type=float)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("calibrate", help="fit unknown channel losses to a tally")
    common(p)
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AnalysisError as exc:
        print(f"error: {type(exc).__name__} in {exc.operation}: {exc}", file=sys.stderr)
        return exc.exit_code
    except QKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
