"""Command-line front end: nanosim op|dc|tran|stoch <deck.ckt> [flags].

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 success with
warnings (e.g. the transient hit its minimum step with the error budget
still exceeded). Waveforms go to CSV with full round-trip precision; --plot
writes a gnuplot script alongside the data. Deck directives provide the
defaults; command-line flags win on conflict. NANOSIM_THREADS caps the
stochastic engine's worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .netlist import (DcAnalysis, Netlist, NetlistError, StochAnalysis,
                      TranAnalysis, parse_netlist, parse_value)
from .nr import flop_compare
from .stochastic import StochasticError, ensemble
from .swec import (SimConfig, SimulationError, WaveformSeries, dc_sweep,
                   operating_point, transient)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_WARN = 3


@dataclass
class RunReport:
    analysis: str
    wall_time: float = 0.0
    steps: int = 0
    rejections: int = 0
    flops: int = 0
    outputs: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    exit_code: int = EXIT_OK


def _fmt(x: float) -> str:
    return repr(float(x))


def _load(path: str) -> Netlist:
    if not os.path.exists(path):
        raise NetlistError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_netlist(fh.read())


def _value_flag(text: str) -> float:
    return parse_value(text)


def _write_csv(path: str, header: Sequence[str], rows: np.ndarray,
               comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\r\n")
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\r\n")


def _write_plot(path: str, csv_path: str, title: str, ylabel: str,
                columns: Sequence[str]) -> None:
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        "set xlabel 'column 1'",
        f"set ylabel '{ylabel}'",
        "set key autotitle columnhead",
        "plot " + ", ".join(f"'{csv_path}' using 1:{i + 2} with lines"
                            for i in range(len(columns) - 1)),
        "pause -1",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _out_path(deck: str, suffix: str, flag: Optional[str]) -> str:
    if flag:
        return flag
    base = os.path.splitext(os.path.basename(deck))[0]
    return f"{base}_{suffix}.csv"


def _resample(series: WaveformSeries, n: int) -> np.ndarray:
    grid = np.linspace(series.times[0], series.times[-1], n)
    cols = [grid] + [np.interp(grid, series.times, series.voltages[:, i])
                     for i in range(series.voltages.shape[1])]
    return np.column_stack(cols)


def cmd_op(args: argparse.Namespace) -> RunReport:
    report = RunReport(analysis="op")
    t0 = time.perf_counter()
    net = _load(args.deck)
    cfg = SimConfig()
    op = operating_point(net, cfg)
    report.wall_time = time.perf_counter() - t0
    report.steps = op.series.steps_taken
    report.flops = op.series.flops.total()
    for node in op.nodes:
        print(f"v({node}) = {op.v(node):.6g}")
    if not op.settled:
        print("warning: operating point failed to settle", file=sys.stderr)
        report.exit_code = EXIT_NUMERIC
        return report
    if args.compare_nr:
        cmp_ = flop_compare(net, "op")
        print(f"flops: swec={cmp_.swec_flops} nr={cmp_.nr_flops} "
              f"speedup={cmp_.speedup:.2f}")
    return report


def cmd_dc(args: argparse.Namespace) -> RunReport:
    report = RunReport(analysis="dc")
    t0 = time.perf_counter()
    net = _load(args.deck)
    card = next((a for a in net.analyses if isinstance(a, DcAnalysis)), None)
    source = args.source or (card.source if card else None)
    start = args.start if args.start is not None else (card.start if card else None)
    stop = args.stop if args.stop is not None else (card.stop if card else None)
    points = args.points if args.points is not None else (card.points if card else None)
    if source is None or start is None or stop is None or points is None:
        raise NetlistError("dc sweep needs --source/--from/--to/--points "
                           "or a .dc card in the deck")
    if points < 2:
        raise NetlistError("--points must be at least 2")
    cfg = SimConfig()
    sweep = dc_sweep(net, source, start, stop, int(points), cfg)
    report.wall_time = time.perf_counter() - t0
    report.flops = sweep.flops.total()

    header = ["bias"] + [f"i({name})" for name in sweep.currents] \
        + [f"v({n})" for n in sweep.nodes]
    cols = [sweep.biases] + list(sweep.currents.values()) \
        + [sweep.voltages[:, i] for i in range(len(sweep.nodes))]
    rows = np.column_stack(cols)
    out = _out_path(args.deck, "dc", args.out)
    _write_csv(out, header, rows)
    report.outputs.append(out)
    print(f"wrote {out} ({len(sweep.biases)} points)")
    if args.plot:
        gp = out.replace(".csv", ".gp")
        _write_plot(gp, out, "DC sweep", "current / voltage", header)
        report.outputs.append(gp)
    if args.compare_nr:
        cmp_ = flop_compare(net, "dc", source=source, start=start, stop=stop,
                            points=int(points))
        print(f"flops: swec={cmp_.swec_flops} nr={cmp_.nr_flops} "
              f"speedup={cmp_.speedup:.2f}")
    if not bool(np.all(sweep.settled)):
        bad = int(np.count_nonzero(~sweep.settled))
        print(f"warning: {bad} sweep points failed to settle", file=sys.stderr)
        report.exit_code = EXIT_NUMERIC
    return report


def cmd_tran(args: argparse.Namespace) -> RunReport:
    report = RunReport(analysis="tran")
    t0 = time.perf_counter()
    net = _load(args.deck)
    card = next((a for a in net.analyses if isinstance(a, TranAnalysis)), None)
    t_stop = args.tstop if args.tstop is not None else (card.t_stop if card else None)
    if t_stop is None:
        raise NetlistError("transient needs --tstop or a .tran card in the deck")
    eps = args.eps if args.eps is not None else \
        (card.eps if card and card.eps is not None else 0.01)
    try:
        cfg = SimConfig(eps=eps, t_stop=t_stop)
    except ValueError as exc:
        raise NetlistError(str(exc))
    series = transient(net, cfg)
    report.wall_time = time.perf_counter() - t0
    report.steps = series.steps_taken
    report.rejections = series.steps_rejected
    report.flops = series.flops.total()

    header = ["t"] + [f"v({n})" for n in series.nodes]
    if args.resample:
        rows = _resample(series, args.resample)
    else:
        rows = np.column_stack([series.times] + [series.voltages[:, i]
                                                 for i in range(len(series.nodes))])
    out = _out_path(args.deck, "tran", args.out)
    _write_csv(out, header, rows)
    report.outputs.append(out)
    print(f"wrote {out} ({series.steps_taken} steps, "
          f"{series.steps_rejected} rejected)")
    if args.plot:
        gp = out.replace(".csv", ".gp")
        _write_plot(gp, out, "Transient", "node voltage (V)", header)
        report.outputs.append(gp)
    if series.hmin_warnings:
        msg = (f"{series.hmin_warnings} steps hit h_min with the local error "
               "budget still exceeded")
        print(f"warning: {msg}", file=sys.stderr)
        report.warnings.append(msg)
        report.exit_code = EXIT_WARN
    return report


def cmd_stoch(args: argparse.Namespace) -> RunReport:
    report = RunReport(analysis="stoch")
    t0 = time.perf_counter()
    net = _load(args.deck)
    card = next((a for a in net.analyses if isinstance(a, StochAnalysis)), None)
    t_stop = args.tstop if args.tstop is not None else (card.t_stop if card else None)
    dt = args.dt if args.dt is not None else (card.dt if card else None)
    paths = args.paths if args.paths is not None else (card.paths if card else None)
    seed = args.seed if args.seed is not None else (card.seed if card else 0)
    if t_stop is None or dt is None or paths is None:
        raise NetlistError("stochastic run needs --tstop/--dt/--paths "
                           "or a .stoch card in the deck")
    window = tuple(args.window) if args.window else None
    stats = ensemble(net, dt, t_stop, int(paths), seed=int(seed), window=window)
    report.wall_time = time.perf_counter() - t0

    header = ["t"]
    cols = [stats.times]
    for i, node in enumerate(stats.nodes):
        header += [f"mean({node})", f"var({node})"]
        cols += [stats.mean[:, i], stats.variance[:, i]]
        for q in sorted(stats.quantiles):
            header.append(f"q{int(round(q * 100)):02d}({node})")
            cols.append(stats.quantiles[q][:, i])
    rows = np.column_stack(cols)
    out = _out_path(args.deck, "stoch", args.out)
    comments = [f"seed={stats.seed} paths={stats.paths} dt={_fmt(dt)} "
                f"window=[{_fmt(stats.window[0])},{_fmt(stats.window[1])}]"]
    peak_bits = []
    for i, node in enumerate(stats.nodes):
        qtxt = " ".join(f"q{int(round(q * 100)):02d}={_fmt(stats.peak_quantiles[q][i])}"
                        for q in sorted(stats.peak_quantiles))
        peak_bits.append(f"peak({node}): mean={_fmt(stats.peak_mean[i])} {qtxt}")
    comments.extend(peak_bits)
    _write_csv(out, header, rows, comments=comments)
    report.outputs.append(out)
    print(f"wrote {out} ({stats.paths} paths)")
    for line in peak_bits:
        print(line)
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nanosim",
                                 description="nanodevice circuit simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p_op = sub.add_parser("op", help="operating point")
    p_op.add_argument("deck")
    p_op.add_argument("--compare-nr", action="store_true",
                      help="also run the Newton baseline and report flop counts")
    p_op.set_defaults(func=cmd_op)

    p_dc = sub.add_parser("dc", help="DC sweep")
    p_dc.add_argument("deck")
    p_dc.add_argument("--source")
    p_dc.add_argument("--from", dest="start", type=_value_flag)
    p_dc.add_argument("--to", dest="stop", type=_value_flag)
    p_dc.add_argument("--points", type=int)
    p_dc.add_argument("--out")
    p_dc.add_argument("--plot", action="store_true")
    p_dc.add_argument("--compare-nr", action="store_true")
    p_dc.set_defaults(func=cmd_dc)

    p_tr = sub.add_parser("tran", help="adaptive transient")
    p_tr.add_argument("deck")
    p_tr.add_argument("--tstop", type=_value_flag)
    p_tr.add_argument("--eps", type=_value_flag)
    p_tr.add_argument("--resample", type=int,
                      help="emit n uniformly spaced samples instead of the "
                           "adaptive grid")
    p_tr.add_argument("--out")
    p_tr.add_argument("--plot", action="store_true")
    p_tr.set_defaults(func=cmd_tran)

    p_st = sub.add_parser("stoch", help="stochastic ensemble transient")
    p_st.add_argument("deck")
    p_st.add_argument("--tstop", type=_value_flag)
    p_st.add_argument("--dt", type=_value_flag)
    p_st.add_argument("--paths", type=int)
    p_st.add_argument("--seed", type=int)
    p_st.add_argument("--window", nargs=2, type=_value_flag,
                      metavar=("T_A", "T_B"))
    p_st.add_argument("--out")
    p_st.set_defaults(func=cmd_stoch)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        report = args.func(args)
    except (NetlistError, StochasticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
