"""Command-line entry point: ``fadecast <subcommand> ...``.

Every CSV written carries ``#`` comment lines with the tool version, the
full configuration, the seed and (where a model is involved) the model
fingerprint. Bodies are deterministic for a given configuration and seed.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 model/LUT
fingerprint mismatch, 5 invalid input data or configuration, 6 training
diverged, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import (
    DEFAULT_D_GRID,
    DEFAULT_N_GRID,
    DEFAULT_SNR_GRID,
    FingerprintMismatch,
    MseLookupTable,
    build_lut,
)
from .baseline import run_ar2_receiver, run_lmmse_li_receiver
from .cpsc import run_cpsc
from .fading import PROFILES, TapProfile, generate_fading, generate_multipath, read_trace_csv
from .modem import parse_modulation
from .nn import TrainingDivergence
from .predictor import PredictorNet, TrainingConfig, parse_config_value, predict, train
from .receiver import run_adaptive, run_data_driven, run_fixed

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FINGERPRINT = 4
EXIT_INVALID = 5
EXIT_DIVERGED = 6

SCHEMES = ("fixed", "adaptive", "datadriven", "perfect", "ar2", "lmmse-li")
BER_COLUMNS = ["ebn0_db", "scheme", "fd_hz", "mod", "n_c_mean", "efficiency", "ber", "mse", "trials"]
CPSC_COLUMNS = ["snr_db", "csi", "n_p", "fd_hz", "mod", "ber", "mse", "trials"]

log = logging.getLogger("fadecast")


class UsageError(Exception):
    pass


def parse_sweep(text: str) -> list[float]:
    """``"0:2:40"`` (inclusive start:step:stop), ``"5,10,20"`` or ``"7"``."""
    text = str(text).strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[1] <= 0:
            raise UsageError(f"bad sweep {text!r}: expected start:step:stop with step > 0")
        start, step, stop = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(max(count, 0))]
    return [float(p) for p in text.split(",") if p.strip()]


def resolve_seed(flag: int | None, config_seed: int = 0) -> int:
    """Explicit ``--seed`` wins, then ``FADECAST_SEED``, then the config."""
    if flag is not None:
        return flag
    env = os.environ.get("FADECAST_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FADECAST_SEED must be an integer, got {env!r}") from None
    return config_seed


def header(command: str, config: dict, seed: int, fingerprint: str | None = None) -> list[str]:
    lines = [f"fadecast {__version__}", f"command={command}", f"seed={seed}"]
    if fingerprint:
        lines.append(f"model_fingerprint={fingerprint}")
    lines += [f"config.{k}={config[k]}" for k in sorted(config)]
    return lines


def write_csv(path, columns, rows, header_lines) -> None:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no header row")
    reader = list(csv.reader(lines))
    return reader[0], reader[1:]


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _load_model(path) -> PredictorNet:
    return PredictorNet.load(path)


# --- subcommands -------------------------------------------------------------


def cmd_gen_channel(args) -> int:
    seed = resolve_seed(args.seed)
    config = {"fd": args.fd, "ts": args.ts, "n": args.n, "method": args.method,
              "profile": args.profile or "", "taps": args.taps or ""}
    if args.profile or args.taps:
        profile = TapProfile.from_file(args.taps) if args.taps else PROFILES[args.profile]
        taps = generate_multipath(profile, args.fd, args.ts, args.n, seed)
        rows = [[i, t, _fmt(g.real), _fmt(g.imag)]
                for t, tap in enumerate(taps) for i, g in enumerate(tap.gains)]
        write_csv(args.out, ["idx", "tap", "re", "im"], rows, header("gen-channel", config, seed))
    else:
        proc = generate_fading(args.n, args.fd, args.ts, seed, method=args.method)
        rows = [[i, _fmt(g.real), _fmt(g.imag)] for i, g in enumerate(proc.gains)]
        write_csv(args.out, ["idx", "re", "im"], rows, header("gen-channel", config, seed))
    return EXIT_OK


def _training_config(args) -> TrainingConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.config:
        cfg = TrainingConfig.from_file(args.config, preset=args.preset)
    else:
        cfg = TrainingConfig.preset(args.preset)
    values = cfg.to_dict()
    types = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
    for key, val in overrides.items():
        if key not in types:
            raise ValueError(f"unknown training config key {key!r}")
        values[key] = parse_config_value(val, types[key])
    cfg = TrainingConfig.from_dict(values)
    seed = resolve_seed(args.seed, cfg.seed)
    values = cfg.to_dict()
    values["seed"] = seed
    return TrainingConfig.from_dict(values)


def cmd_train(args) -> int:
    cfg = _training_config(args)

    def progress(epoch, report, _net):
        log.info("epoch %d train %.4e val %.4e lr %.1e", epoch, report.train_loss[-1],
                 report.val_loss[-1], report.lr[-1])

    try:
        net, report = train(cfg, progress=progress)
    except TrainingDivergence as exc:
        partial = getattr(exc, "report", None)
        if partial is not None and args.report:
            Path(args.report).write_text(partial.to_csv())
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    net.save(args.out)
    report_path = args.report or str(Path(args.out).with_suffix(".train.csv"))
    lines = header("train", cfg.to_dict(), cfg.seed, net.fingerprint())
    lines.append(f"stop_reason={report.stop_reason}")
    body = report.to_csv()
    Path(report_path).write_text("".join(f"# {h}\n" for h in lines) + body)
    print(f"model {args.out} fingerprint {net.fingerprint()} epochs {report.epochs} "
          f"({report.stop_reason})")
    return EXIT_OK


def cmd_predict(args) -> int:
    net = _load_model(args.model)
    values = read_trace_csv(args.estimates)
    window = values[args.start:args.start + net.window_n]
    if len(window) != net.window_n:
        raise ValueError(f"{args.estimates}: need {net.window_n} estimates from index {args.start}, "
                         f"found {len(window)}")
    preds = predict(net, window, args.n_preds)
    config = {"estimates": args.estimates, "start": args.start, "n_preds": args.n_preds}
    rows = [[i, _fmt(p.real), _fmt(p.imag)] for i, p in enumerate(preds)]
    write_csv(args.out, ["idx", "re", "im"], rows, header("predict", config, 0, net.fingerprint()))
    return EXIT_OK


def cmd_build_lut(args) -> int:
    net = _load_model(args.model)
    seed = resolve_seed(args.seed)
    n_grid = [int(v) for v in parse_sweep(args.n_grid)]
    d_grid = parse_sweep(args.d_grid)
    snr_grid = parse_sweep(args.snr_grid)
    lut = build_lut(net, n_grid, d_grid, snr_grid, trials=args.trials, seed=seed)
    config = {"n_grid": args.n_grid, "d_grid": args.d_grid, "snr_grid": args.snr_grid,
              "trials": args.trials}
    lut.to_csv(args.out, header_lines=header("build-lut", config, seed))
    return EXIT_OK


def cmd_run_ber(args) -> int:
    seed = resolve_seed(args.seed)
    mod = parse_modulation(args.mod)
    net = _load_model(args.model) if args.model else None
    lut = MseLookupTable.from_csv(args.lut) if args.lut else None
    if lut is not None and net is not None and lut.fingerprint != net.fingerprint():
        raise FingerprintMismatch(
            f"lookup table {args.lut} was built for model {lut.fingerprint}, "
            f"not {net.fingerprint()}"
        )
    needs_net = {"fixed", "adaptive", "datadriven"}
    if args.scheme in needs_net and net is None:
        raise UsageError(f"scheme {args.scheme} needs --model")
    if args.scheme in ("adaptive", "datadriven") and lut is None:
        raise UsageError(f"scheme {args.scheme} needs --lut")
    if args.scheme in ("fixed", "perfect", "lmmse-li") and args.n_preds is None:
        raise UsageError(f"scheme {args.scheme} needs --n-preds")
    if args.scheme == "ar2" and args.n_preds is None and lut is None:
        raise UsageError("scheme ar2 needs --n-preds or --lut")
    kw = dict(min_errors=args.min_errors if args.min_errors > 0 else None, jobs=args.jobs)
    rows = []
    for point, ebn0 in enumerate(parse_sweep(args.ebn0)):
        s = np.random.SeedSequence(seed, spawn_key=(point,))
        if args.scheme == "fixed":
            r = run_fixed(net, mod, args.fd, ebn0, args.n_preds, args.trials, s, **kw)
        elif args.scheme == "perfect":
            r = run_fixed(net, mod, args.fd, ebn0, args.n_preds, args.trials, s, csi="perfect",
                          timing=net.timing if net else None, **kw)
        elif args.scheme == "adaptive":
            r = run_adaptive(net, lut, mod, args.fd, ebn0, args.trials, s, **kw)
        elif args.scheme == "datadriven":
            r = run_data_driven(net, lut, mod, args.fd, ebn0, args.k, args.trials, s, **kw)
        elif args.scheme == "ar2":
            r = run_ar2_receiver(mod, args.fd, ebn0, lut, args.trials, s, net=net,
                                 n_preds=args.n_preds, **kw)
        else:
            r = run_lmmse_li_receiver(mod, args.fd, ebn0, 10, args.n_preds, args.trials, s,
                                      timing=net.timing if net else None, **kw)
        rows.append([_fmt(ebn0), args.scheme, _fmt(args.fd), args.mod, _fmt(r.n_c_mean),
                     _fmt(r.efficiency), _fmt(r.ber), _fmt(r.prediction_mse), r.trials])
    config = {"scheme": args.scheme, "mod": args.mod, "fd": args.fd, "ebn0": args.ebn0,
              "n_preds": args.n_preds, "k": args.k, "trials": args.trials,
              "min_errors": args.min_errors, "lut": args.lut or ""}
    write_csv(args.out, BER_COLUMNS, rows,
              header("run-ber", config, seed, net.fingerprint() if net else None))
    return EXIT_OK


def cmd_run_cpsc(args) -> int:
    seed = resolve_seed(args.seed)
    mod = parse_modulation(args.mod)
    net = _load_model(args.model) if args.model else None
    if args.csi == "predicted" and net is None:
        raise UsageError("predicted CSI needs --model")
    rows = []
    for point, snr in enumerate(parse_sweep(args.snr)):
        s = np.random.SeedSequence(seed, spawn_key=(point,))
        r = run_cpsc(net, mod, args.fd, snr, args.np, args.trials, s, n=args.n, l_taps=args.l,
                     csi=args.csi, min_errors=args.min_errors if args.min_errors > 0 else None,
                     jobs=args.jobs)
        rows.append([_fmt(snr), args.csi, args.np, _fmt(args.fd), args.mod, _fmt(r.ber),
                     _fmt(r.prediction_mse), r.trials])
    config = {"n": args.n, "l": args.l, "np": args.np, "fd": args.fd, "snr": args.snr,
              "mod": args.mod, "csi": args.csi, "trials": args.trials, "min_errors": args.min_errors}
    write_csv(args.out, CPSC_COLUMNS, rows,
              header("run-cpsc", config, seed, net.fingerprint() if net else None))
    return EXIT_OK


def merge_tables(paths) -> tuple[list[str], list[list[str]]]:
    """Concatenate CSV bodies that share one header, sorted stably."""
    if not paths:
        raise ValueError("report needs at least one CSV file")
    columns = None
    rows = []
    for path in paths:
        cols, body = read_csv(path)
        if columns is None:
            columns = cols
        elif cols != columns:
            missing = [c for c in columns if c not in cols]
            extra = [c for c in cols if c not in columns]
            raise ValueError(f"{path}: columns differ from {paths[0]} "
                             f"(missing {missing}, unexpected {extra})")
        rows.extend(body)

    def key(row):
        out = []
        for v in row:
            try:
                out.append((0, float(v), ""))
            except ValueError:
                out.append((1, 0.0, v))
        return out

    rows.sort(key=key)
    return columns, rows


def pivot(columns, rows, value: str, series: str):
    """Wide table: first column as index, one column per ``series`` value."""
    if value not in columns or series not in columns:
        raise ValueError(f"pivot needs columns {value!r} and {series!r}; have {columns}")
    x_col = columns[0]
    xi, vi, si = columns.index(x_col), columns.index(value), columns.index(series)
    names = sorted({r[si] for r in rows})
    xs = sorted({r[xi] for r in rows}, key=float)
    table = {(r[xi], r[si]): r[vi] for r in rows}
    out = [[x] + [table.get((x, s), "nan") for s in names] for x in xs]
    return [x_col] + [f"{value}[{s}]" for s in names], out


def cmd_report(args) -> int:
    columns, rows = merge_tables(args.csv)
    if args.pivot:
        columns, rows = pivot(columns, rows, args.pivot, args.series)
    lines = [f"fadecast {__version__}", "command=report"] + [f"source={p}" for p in args.csv]
    if args.out:
        write_csv(args.out, columns, rows, lines)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $FADECAST_SEED, else the config seed or 0)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker processes for Monte-Carlo runs")
    common.add_argument("--log-level", default="WARNING")

    p = argparse.ArgumentParser(prog="fadecast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fadecast {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-channel", parents=[common], help="generate a fading trace")
    g.add_argument("--fd", type=float, required=True, help="maximum Doppler (Hz)")
    g.add_argument("--ts", type=float, default=1e-4, help="sample period (s)")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--method", choices=("phase", "gaussian"), default="phase")
    g.add_argument("--profile", choices=sorted(PROFILES), help="3GPP multipath profile")
    g.add_argument("--taps", help="tap profile file (delay_ns,power_db per line)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_channel)

    t = sub.add_parser("train", parents=[common], help="train the predictor")
    t.add_argument("--config", help="key = value training config file")
    t.add_argument("--preset", choices=("paper", "desk"), default="paper")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    t.add_argument("--out", required=True, help="model file (.fcp)")
    t.add_argument("--report", help="training report CSV (default: <out>.train.csv)")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("predict", parents=[common], help="predict from an estimate file")
    q.add_argument("--model", required=True)
    q.add_argument("--estimates", required=True, help="CSV with idx,re,im rows")
    q.add_argument("--start", type=int, default=0, help="first estimate row used")
    q.add_argument("--n-preds", type=int, required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_predict)

    b = sub.add_parser("build-lut", parents=[common], help="build the MSE lookup table")
    b.add_argument("--model", required=True)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--n-grid", default=f"{DEFAULT_N_GRID[0]}:5:{DEFAULT_N_GRID[-1]}")
    b.add_argument("--d-grid", default=f"{DEFAULT_D_GRID[0]:g}:5:{DEFAULT_D_GRID[-1]:g}")
    b.add_argument("--snr-grid", default=f"{DEFAULT_SNR_GRID[0]:g}:5:{DEFAULT_SNR_GRID[-1]:g}")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_lut)

    r = sub.add_parser("run-ber", parents=[common], help="BER sweep of a receiver")
    r.add_argument("--model")
    r.add_argument("--lut")
    r.add_argument("--mod", default="4qam")
    r.add_argument("--fd", type=float, default=50.0)
    r.add_argument("--ebn0", default="0:2:40", help="Eb/N0 sweep in dB")
    r.add_argument("--scheme", choices=SCHEMES, default="adaptive")
    r.add_argument("--n-preds", type=int)
    r.add_argument("--k", type=int, default=1)
    r.add_argument("--trials", type=int, default=2000, help="trial cap per point")
    r.add_argument("--min-errors", type=int, default=100, help="stop a point at this many errors (0: never)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run_ber)

    c = sub.add_parser("run-cpsc", parents=[common], help="CPSC BER sweep")
    c.add_argument("--model")
    c.add_argument("--n", type=int, default=128)
    c.add_argument("--l", type=int, default=2)
    c.add_argument("--np", type=int, default=2)
    c.add_argument("--fd", type=float, default=50.0)
    c.add_argument("--snr", default="0:5:30")
    c.add_argument("--mod", default="4qam")
    c.add_argument("--csi", choices=("predicted", "perfect"), default="predicted")
    c.add_argument("--trials", type=int, default=2000)
    c.add_argument("--min-errors", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_run_cpsc)

    m = sub.add_parser("report", parents=[common], help="merge result CSVs")
    m.add_argument("csv", nargs="*")
    m.add_argument("--pivot", help="value column for a wide table (e.g. ber)")
    m.add_argument("--series", default="scheme", help="column that names the series")
    m.add_argument("--out")
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
