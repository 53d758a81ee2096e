"""Command-line entry point.

Exit codes: 0 ok, 1 usage or config error, 2 runtime failure, 3 alarm raised
with ``--halt-on-alarm``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, SpectrumParseError
from .harness import ConfigError, benchmark, calibrate, load_config
from .ks_core import WindowedKSDetector
from .spectrum_io import read_spectrum

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_ALARM = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqks", description="Windowed KS change detection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="compute alarm thresholds")
    c.add_argument("--config", required=True, type=Path)
    c.add_argument("--seed", type=_u64)
    c.add_argument("--out", type=Path, help="write the thresholds as JSON")

    b = sub.add_parser("benchmark", help="run detection-delay experiments")
    b.add_argument("--config", required=True, type=Path)
    b.add_argument("--seed", type=_u64)
    b.add_argument("--out", type=Path, help="results CSV (default: the config's output)")

    m = sub.add_parser("monitor", help="run the windowed KS detector over a count stream")
    m.add_argument("--spectrum", required=True, type=Path, help="background spectrum CSV")
    m.add_argument("--input", type=Path, help="stream CSV of t,x_1..x_D rows (default stdin)")
    m.add_argument("--out", type=Path, help="JSON-lines output (default stdout)")
    m.add_argument("--window", type=_positive_int, default=50)
    m.add_argument("--threshold", type=float)
    m.add_argument("--horizon", type=_positive_int, default=1000)
    m.add_argument("--alpha", type=float, default=1.0)
    m.add_argument("--winsorize-at", type=_positive_int)
    m.add_argument("--halt-on-alarm", action="store_true")

    i = sub.add_parser("ingest-check", help="validate a spectrum file")
    i.add_argument("spectrum", type=Path)
    i.add_argument("--winsorize-at", type=_positive_int)
    i.add_argument("--out", type=Path, help="write the normalised spectrum as CSV")
    return p


def _cmd_calibrate(args) -> int:
    cfg = load_config(args.config, args.seed)
    report = {"seed": cfg.seed, "scenarios": []}
    lines = []
    targets = cfg.scenarios or (None,)
    for sc in targets:
        th = calibrate(cfg, sc)
        sid = sc.id if sc is not None else None
        entry = {"scenario_id": sid, "thresholds": []}
        lines.append(f"scenario {sid}" if sid else "thresholds")
        for spec in cfg.detectors:
            t = th[spec.id]
            if t.method == "monte-carlo" and t.reps == 1:
                print(f"warning: detector {spec.id!r} calibrated on a single replicate; "
                      "the threshold has high variance", file=sys.stderr)
            entry["thresholds"].append({
                "detector_id": spec.id, "type": spec.type, "threshold": t.value,
                "method": t.method, "label": t.label, "horizon": t.horizon,
                "target": t.target, "reps": t.reps, "params": spec.params,
            })
            lines.append(f"  {spec.id:<12} {t.value:.6f}  {t.label} "
                         f"(T={t.horizon}, target={t.target:g}"
                         + (f", reps={t.reps})" if t.reps else ")"))
        report["scenarios"].append(entry)
    print("\n".join(lines))
    if args.out:
        args.out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    cfg = load_config(args.config, args.seed)
    table = benchmark(cfg)
    print(table.format())
    out = args.out or (Path(args.config).parent / cfg.output if cfg.output else None)
    if out:
        table.to_csv(out)
    return EXIT_OK


def _parse_row(line: str, n_bins: int):
    cells = [c.strip() for c in line.split(",")]
    try:
        t = int(cells[0])
        x = np.array([int(c) for c in cells[1:]], dtype=np.int64)
    except ValueError:
        raise ValueError("non-integer cell") from None
    if x.size != n_bins:
        raise DimensionError(f"expected {n_bins} bins, got {x.size}")
    if np.any(x < 0):
        raise ValueError("negative count")
    return t, x


def _cmd_monitor(args) -> int:
    cdf, _ = read_spectrum(args.spectrum, args.winsorize_at)
    det = WindowedKSDetector(cdf, window=args.window, threshold=args.threshold,
                             horizon=max(args.horizon, args.window), alpha=args.alpha,
                             halt_on_alarm=args.halt_on_alarm).fit()
    src = args.input.open(encoding="utf-8") if args.input else sys.stdin
    dst = args.out.open("w", encoding="utf-8") if args.out else sys.stdout
    try:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            try:
                t, x = _parse_row(line, cdf.bin_count)
            except DimensionError as exc:
                print(f"line {lineno}: fatal: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            except ValueError as exc:
                # a header or a glitched row: report it and keep monitoring
                print(json.dumps({"line": lineno, "error": str(exc)}), file=sys.stderr)
                continue
            out = det.update(x)
            dst.write(json.dumps({"t": t, "w_stat": out.w_stat, "alarm": out.alarm,
                                  "argmax_start": out.argmax_start}) + "\n")
            dst.flush()
            if out.alarm and args.halt_on_alarm:
                return EXIT_ALARM
    finally:
        if args.input:
            src.close()
        if args.out:
            dst.close()
    return EXIT_OK


def _cmd_ingest(args) -> int:
    cdf, density = read_spectrum(args.spectrum, args.winsorize_at)
    w = density.weights
    print(f"bins: {cdf.bin_count}")
    print(f"cdf[last]: {float(cdf.values[-1])!r}")
    print(f"nonzero bins: {int(np.count_nonzero(w))}")
    print(f"max weight: {w.max():.6g} (bin {int(np.argmax(w)) + 1})")
    if args.out:
        from .spectrum_io import write_spectrum

        write_spectrum(args.out, w)
    return EXIT_OK


_COMMANDS = {"calibrate": _cmd_calibrate, "benchmark": _cmd_benchmark,
             "monitor": _cmd_monitor, "ingest-check": _cmd_ingest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "monitor" and args.threshold is not None and not (
            math.isfinite(args.threshold) and args.threshold > 0):
        print("seqks monitor: --threshold must be a positive number", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, SpectrumParseError, FileNotFoundError) as exc:
        print(f"seqks {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"seqks {args.command}: runtime failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
