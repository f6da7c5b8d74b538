"""Command-line entry points: ``generate``, ``simulate``, ``forecast``, ``report``.

Exit codes: 0 success, 2 bad input (config, data, arguments), 3 internal
invariant breach. Nothing is read from the environment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import scenario as scn
from .errors import ConfigurationError, InvariantError, NeurowaterError
from .forecast import (
    NvarSpec,
    backtest,
    mape,
    naive_predictor,
    nvar_predictor,
    save_model,
    train_nvar,
)
from .netsim import EVENT_DRIVEN, PERIODIC, SimMetrics
from .series import fill_gaps, read_csv, write_csv

EXIT_OK, EXIT_INPUT, EXIT_BUG = 0, 2, 3


class UsageError(Exception):
    """Bad flags or inputs detected by the CLI itself; exits with 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own errors already; keep it explicit
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def meter_id(index: int) -> str:
    return f"meter-{index:03d}"


def _load(path, seed):
    # "default" names the bundled desk-scale scenario
    sc = scn.default_scenario() if path == "default" else scn.load_scenario(path)
    if seed is not None:
        sc = dataclasses.replace(sc, seed=seed)
    return sc


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    sc = _load(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    weather = _weather(sc)
    for i in range(sc.topology.n_edges):
        # clean generator output over train + simulated days; uplink loss and
        # anomaly injection are applied by `simulate`
        full = scn.generate_consumption(scn.edge_generator(sc, i), weather)
        write_csv(out / f"{meter_id(i)}.csv", {meter_id(i): full})
    print(f"wrote {sc.topology.n_edges} meter files to {out}")
    return EXIT_OK


def _weather(sc):
    w = sc.weather
    total = (sc.train_days + sc.days) * sc.ticks_per_day
    return scn.make_weather(total, sc.demand.step, scn.DEFAULT_START, w.mean_temp, w.daily_swing,
                            w.noise_std, w.reference_temp, scn.derive_seed(sc.seed, "weather"))


def read_meter_dir(sc, directory) -> dict:
    """Edge index -> series, from ``generate`` output files."""
    out = {}
    for i in range(sc.topology.n_edges):
        path = Path(directory) / f"{meter_id(i)}.csv"
        if not path.exists():
            raise UsageError(f"{path}: missing meter file")
        series = read_csv(path)
        if meter_id(i) not in series:
            raise UsageError(f"{path}: no rows for {meter_id(i)}")
        out[i] = series[meter_id(i)]
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _periodic_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.periodic{path.suffix}")


def cmd_simulate(args) -> int:
    sc = _load(args.scenario, args.seed)
    if args.dump_config:
        sys.stdout.write(sc.to_yaml())
        return EXIT_OK
    modes = [EVENT_DRIVEN, PERIODIC] if args.mode == "both" else [args.mode or sc.mode]
    full = read_meter_dir(sc, args.data) if args.data else None
    data = scn.build_data(sc, full)
    report, logs = scn.run_report(sc, modes, data, with_forecasts=not args.no_forecast)
    text = scn.dumps_report(report)
    if args.out_metrics:
        Path(args.out_metrics).write_text(text)
    else:
        sys.stdout.write(text)
    if args.out_log:
        log_path = Path(args.out_log)
        for mode in modes:
            target = _periodic_path(log_path) if (len(modes) > 1 and mode == PERIODIC) else log_path
            target.write_text("tick,src,dst,kind,value\n" + "".join(ln + "\n" for ln in logs[mode]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _load_spec(path) -> NvarSpec:
    if path is None:
        return NvarSpec(delays=24, degree=1, ridge_lambda=1e-6)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping of forecaster fields")
    names = {f.name for f in dataclasses.fields(NvarSpec)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{path}: {unknown[0]}: unknown field")
    return NvarSpec(**data)


def _daily_sums(v: np.ndarray, period: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = len(v) // period
    return v[: n * period].reshape(n, period).sum(axis=1)


def cmd_forecast(args) -> int:
    if not 0 < args.train_frac < 1:
        raise UsageError("--train-frac must lie strictly between 0 and 1")
    if args.horizon < 1 or args.period < 1:
        raise UsageError("--horizon and --period must be >= 1")
    spec = _load_spec(args.spec)
    series = read_csv(args.input)
    if args.meter is None:
        if len(series) != 1:
            raise UsageError(f"input holds {len(series)} meters; pick one with --meter")
        name, s = next(iter(series.items()))
    else:
        if args.meter not in series:
            raise UsageError(f"meter {args.meter!r} not in input")
        name, s = args.meter, series[args.meter]
    if s.n_missing:
        s = fill_gaps(s, "linear")
    x = s.samples()
    n_train = int(math.floor(args.train_frac * len(x)))
    if n_train >= len(x):
        raise UsageError("empty test set")
    if n_train < max(spec.delays + spec.n_features, args.period):
        raise UsageError(
            f"train split of {n_train} samples is too short for delays={spec.delays} "
            f"and period={args.period}")
    model = train_nvar(x[:n_train], spec)
    preds = {
        "nvar": backtest(x, n_train, args.horizon, nvar_predictor(model)),
        "seasonal_naive": backtest(x, n_train, args.horizon, naive_predictor(args.period)),
    }
    actual = x[n_train:]
    table = {}
    for key, p in preds.items():
        table[key] = {"hourly": mape(actual, p).to_dict()}
        if len(actual) >= args.period:
            table[key]["daily"] = mape(_daily_sums(actual, args.period),
                                       _daily_sums(p, args.period)).to_dict()
    result = {"meter": name, "n_train": n_train, "n_test": len(actual), "horizon": args.horizon,
              "spec": dataclasses.asdict(spec), "mape": table}
    sys.stdout.write(json.dumps(result, sort_keys=True, indent=2) + "\n")
    if args.out:
        ts = s.timestamps[n_train:]
        with open(args.out, "w") as fh:
            fh.write("timestamp,actual,nvar,seasonal_naive\n")
            for t, a, pn, pb in zip(ts, actual, preds["nvar"], preds["seasonal_naive"]):
                fh.write(f"{int(t)},{a!r},{float(pn)!r},{float(pb)!r}\n")
    if args.out_model:
        save_model(model, args.out_model)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def merge_reports(reports: list[dict], force: bool = False) -> dict:
    """Combine RunReport dicts from several files into one.

    Inputs must share scenario hash and seed unless ``force`` is set; the
    comparison block is recomputed only when both modes are present and the
    inputs agree.
    """
    if not reports:
        raise UsageError("no metrics files given")
    for key in ("scenario_hash", "seed"):
        values = {json.dumps(r.get(key)) for r in reports}
        if len(values) > 1 and not force:
            raise UsageError(f"inputs disagree on {key} ({', '.join(sorted(values))}); use --force")
    consistent = all(
        len({json.dumps(r.get(k)) for r in reports}) == 1 for k in ("scenario_hash", "seed"))
    merged = {"scenario_hash": reports[0].get("scenario_hash"), "seed": reports[0].get("seed"),
              "runs": {}, "detection": {}, "latency": {},
              "ground_truth": reports[0].get("ground_truth", [])}
    for r in reports:
        for block in ("runs", "detection", "latency"):
            merged[block].update(r.get(block, {}))
        if "forecast" in r:
            merged["forecast"] = r["forecast"]
    runs = merged["runs"]
    if consistent and EVENT_DRIVEN in runs and PERIODIC in runs:
        merged["comparison"] = scn.comparison(SimMetrics.from_dict(runs[EVENT_DRIVEN]),
                                              SimMetrics.from_dict(runs[PERIODIC]))
    return merged


def _fmt(v, spec=".4f"):
    return "n/a" if v is None else format(v, spec)


def render_text(rep: dict) -> str:
    lines = [f"scenario {rep.get('scenario_hash')}  seed {rep.get('seed')}", ""]
    runs = rep.get("runs", {})
    if runs:
        lines.append(f"{'mode':<14}{'up msgs':>10}{'up (post)':>11}{'down':>8}{'alarms':>8}"
                     f"{'bytes':>10}{'energy':>12}{'lost':>7}")
        for mode in sorted(runs):
            m = runs[mode]
            total_bytes = m["bytes_up"] + m["bytes_down"] + m["bytes_alarm"]
            lines.append(f"{mode:<14}{m['messages_up']:>10}{m['messages_up_after_warmup']:>11}"
                         f"{m['messages_down']:>8}{m['alarms']:>8}{total_bytes:>10}"
                         f"{m['energy_proxy']:>12.1f}{m['lost']:>7}")
        lines.append("")
    comp = rep.get("comparison")
    if comp:
        lines.append("event-driven / periodic")
        for key in ("message_ratio", "message_ratio_after_warmup", "byte_ratio", "energy_ratio",
                    "edge_energy_ratio"):
            if key in comp:
                lines.append(f"  {key:<28}{_fmt(comp[key])}")
        lines.append("")
    fc = rep.get("forecast")
    if fc:
        lines.append(f"{'MAPE %':<16}{'hourly':>10}{'daily':>10}")
        for model in sorted(fc):
            row = fc[model]
            lines.append(f"{model:<16}{_fmt(row.get('hourly', {}).get('mape_percent'), '.2f'):>10}"
                         f"{_fmt(row.get('daily', {}).get('mape_percent'), '.2f'):>10}")
        lines.append("")
    for mode in sorted(runs):
        fe = runs[mode].get("forecast_eval") or {}
        if fe:
            lines.append(f"in-network forecast MAPE % ({mode})")
            for layer in sorted(fe):
                lines.append(f"  {layer:<12}{_fmt(fe[layer].get('mape_percent'), '.2f')}")
            lines.append("")
    det = rep.get("detection", {})
    if det:
        lines.append(f"{'detection':<14}{'TP':>5}{'FP':>5}{'miss':>6}{'FP rate':>11}{'latency':>9}")
        for mode in sorted(det):
            d = det[mode]
            lat = d["latencies"]
            mean_lat = sum(lat) / len(lat) if lat else None
            lines.append(f"{mode:<14}{d['true_positives']:>5}{d['false_positives']:>5}"
                         f"{d['misses']:>6}{d['false_positive_rate']:>11.2e}"
                         f"{_fmt(mean_lat, '.1f'):>9}")
    return "\n".join(lines).rstrip() + "\n"


def cmd_report(args) -> int:
    reports = []
    for path in args.metrics:
        try:
            reports.append(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not a metrics file ({exc})") from None
    merged = merge_reports(reports, args.force)
    text = scn.dumps_report(merged) if args.format == "json" else render_text(merged)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neurowater", description="Hierarchical water-consumption simulation tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write synthetic per-meter consumption CSVs")
    g.add_argument("--config", required=True, help="scenario YAML, or `default`")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="override the master seed")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="run the network simulation")
    s.add_argument("--scenario", required=True, help="scenario YAML, or `default`")
    s.add_argument("--mode", choices=[EVENT_DRIVEN, PERIODIC, "both"])
    s.add_argument("--out-metrics", help="RunReport JSON path (stdout if omitted)")
    s.add_argument("--out-log", help="event log CSV; with --mode both the periodic log "
                                     "goes to NAME.periodic.EXT")
    s.add_argument("--data", help="directory of meter CSVs from `generate`")
    s.add_argument("--seed", type=int, help="override the master seed")
    s.add_argument("--dump-config", action="store_true", help="print the parsed scenario and exit")
    s.add_argument("--no-forecast", action="store_true", help="skip the offline forecast table")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("forecast", help="fit NVAR and the seasonal baseline on one meter")
    f.add_argument("--input", required=True, help="consumption CSV")
    f.add_argument("--spec", help="YAML with delays, degree, ridge_lambda, include_bias")
    f.add_argument("--train-frac", type=float, default=0.7)
    f.add_argument("--horizon", type=int, default=24)
    f.add_argument("--period", type=int, default=24, help="samples per day")
    f.add_argument("--meter", help="meter id when the CSV holds several")
    f.add_argument("--out", help="predictions CSV")
    f.add_argument("--out-model", help="write the trained model")
    f.set_defaults(func=cmd_forecast)

    r = sub.add_parser("report", help="render comparison tables from metrics files")
    r.add_argument("--metrics", nargs="+", required=True)
    r.add_argument("--format", choices=["text", "json"], default="text")
    r.add_argument("--force", action="store_true", help="merge inputs from different scenarios")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"error: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_BUG
    except (UsageError, ConfigurationError, NeurowaterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        print(f"error: unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BUG


if __name__ == "__main__":
    sys.exit(main())
