"""Command-line front end: simulate, sweep, curves, counter.

Exit codes: 0 success, 2 config error (message names the field path),
3 runtime invariant violation (ledger audit or scheduler fixed point).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .accounting import AlphaGrid, compose, gaussian_curve, laplace_curve, pure_dp_curve, rdp_to_dp
from .config import ConfigError, build_sim_config, build_sweep, load_json
from .engine import SCHEMA_VERSION, SimInvariantError, run
from .semantics import BinaryCounter, CounterConfig, binary_mechanism_rdp_curve
from . import figures

log = logging.getLogger("privsched")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

METRIC_FIELDS = ["schema_version", "policy", "mode", "n_pipelines", "arrived",
                 "granted", "denied", "waiting", "granted_mice",
                 "granted_elephant", "delay_mean", "delay_median", "delay_p95",
                 "delay_max"]


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_events(path: Path, events) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"kind": "meta", "schema_version": SCHEMA_VERSION}) + "\n")
        for ev in events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------- simulate
def cmd_simulate(args) -> int:
    config = build_sim_config(load_json(Path(args.config)),
                              Path(args.config).parent, seed=args.seed)
    result = run(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", METRIC_FIELDS, [result.metrics.to_row()])
    _write_json(out / "metrics.json", result.metrics.to_json())
    _write_events(out / "events.jsonl", result.events)
    if not args.no_plot:
        figures.save_metrics_figure(result.metrics, out / "metrics.png")
    log.info("granted %d / arrived %d -> %s", result.metrics.granted,
             result.metrics.arrived, out)
    return EXIT_OK


# ------------------------------------------------------------------- sweep
def cmd_sweep(args) -> int:
    pairs = build_sweep(load_json(Path(args.config)), Path(args.config).parent)
    rows, dumps = [], []
    for coords, config in pairs:
        result = run(config)
        row = {**coords, **result.metrics.to_row()}
        rows.append(row)
        dumps.append({"coords": coords, "metrics": result.metrics.to_json()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coord_fields = [k for k in ("n", "mice_fraction", "policy", "load") if k in rows[0]]
    fields = coord_fields + [f for f in METRIC_FIELDS if f not in coord_fields]
    _write_csv(out / "sweep.csv", fields, rows)
    _write_json(out / "sweep.json", {"schema_version": SCHEMA_VERSION, "rows": dumps})
    if not args.no_plot:
        x_key = next((k for k in ("mice_fraction", "n", "load") if k in rows[0]), None)
        if x_key:
            figures.save_sweep_figure(rows, x_key, out / "sweep.png")
    log.info("%d grid points -> %s", len(rows), out)
    return EXIT_OK


# ------------------------------------------------------------------ curves
def _grid_from_arg(raw: str) -> AlphaGrid:
    if raw == "default":
        return AlphaGrid.default()
    if raw == "compact":
        return AlphaGrid.compact()
    try:
        return AlphaGrid(tuple(float(x) for x in raw.split(",")))
    except ValueError as exc:
        raise ConfigError("--grid", str(exc)) from exc


def cmd_curves(args) -> int:
    grid = _grid_from_arg(args.grid)
    if args.mechanism == "counter":
        if args.T is None:
            raise ConfigError("--T", "counter mechanism needs a horizon")
        base = binary_mechanism_rdp_curve(args.param, args.T, grid)
    else:
        maker = {"gaussian": gaussian_curve, "laplace": laplace_curve,
                 "pure": pure_dp_curve}[args.mechanism]
        try:
            base = maker(args.param, grid)
        except ValueError as exc:
            raise ConfigError("--param", str(exc)) from exc
    if args.compose < 1:
        raise ConfigError("--compose", "must be >= 1")
    curve = compose([base] * args.compose, grid)
    guarantee, best_alpha = rdp_to_dp(curve, args.delta)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["schema_version", SCHEMA_VERSION])
    writer.writerow([])
    writer.writerow(["alpha", "eps"])
    for a, e in zip(curve.grid, curve.eps):
        writer.writerow(["inf" if math.isinf(a) else a, "inf" if math.isinf(e) else repr(e)])
    writer.writerow([])
    writer.writerow(["epsilon", "delta", "best_alpha"])
    writer.writerow([repr(guarantee.epsilon), repr(args.delta),
                     "inf" if math.isinf(best_alpha) else best_alpha])
    sys.stdout.write(buf.getvalue())

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "curves.csv").write_text(buf.getvalue())
        _write_json(out / "curves.json", {
            "schema_version": SCHEMA_VERSION,
            "curve": curve.to_json(),
            "translated": {"epsilon": guarantee.epsilon, "delta": args.delta,
                           "best_alpha": "inf" if math.isinf(best_alpha) else best_alpha},
        })
        name = f"{args.mechanism}({args.param}) x{args.compose}"
        figures.save_curves_figure(curve.grid.orders, {name: curve.eps},
                                   out / "curves.png")
    return EXIT_OK


# ----------------------------------------------------------------- counter
def _parse_stream(raw: str) -> tuple[str, float]:
    try:
        kind, value = raw.split(":")
        value = float(value)
    except ValueError:
        raise ConfigError("--stream", "expected 'poisson:RATE' or 'fixed:COUNT'") from None
    if kind not in ("poisson", "fixed") or value < 0:
        raise ConfigError("--stream", f"bad stream spec {raw!r}")
    return kind, value


def cmd_counter(args) -> int:
    try:
        cfg = CounterConfig(args.eps, args.T, args.beta, noiseless=args.noiseless,
                            log10_bound=args.log10_bound)
    except ValueError as exc:
        raise ConfigError("counter", str(exc)) from exc
    kind, value = _parse_stream(args.stream)
    ticks = min(args.ticks, args.T)
    rng = np.random.default_rng(args.seed)
    covered_trials = 0
    errors = []
    trace = []
    for trial in range(args.trials):
        counter = BinaryCounter(cfg, rng)
        covered = True
        for t in range(ticks):
            count = int(value) if kind == "fixed" else int(rng.poisson(value))
            counter.update(count)
            released = counter.release(t + 1)
            lower = counter.lower_bound(t + 1)
            upper = counter.upper_bound(t + 1)
            true = counter.true_count(t + 1)
            if lower > true:
                covered = False
            if trial == 0:
                trace.append({"tick": t + 1, "true_count": true, "released": released,
                              "lower": lower, "upper": upper})
        covered_trials += covered
        errors.append(counter.release(ticks) - counter.true_count(ticks))
    errors = np.asarray(errors)
    stats = {
        "schema_version": SCHEMA_VERSION,
        "eps_count": args.eps, "horizon": args.T, "beta": args.beta,
        "trials": args.trials, "ticks": ticks,
        "coverage": covered_trials / args.trials,
        "mean_error": float(errors.mean()),
        "stderr": float(errors.std(ddof=1) / math.sqrt(len(errors))) if len(errors) > 1 else 0.0,
        "bound_constant": counter._bound(None),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "counter_trace.jsonl", "w") as fh:
        fh.write(json.dumps({"kind": "meta", "schema_version": SCHEMA_VERSION}) + "\n")
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_json(out / "counter_stats.json", stats)
    if not args.no_plot:
        figures.save_counter_figure(trace, out / "counter.png")
    sys.stdout.write(json.dumps(stats, sort_keys=True) + "\n")
    return EXIT_OK


# -------------------------------------------------------------------- main
def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privsched",
        description="privacy-budget scheduling simulator and accounting tools")
    parser.add_argument("--log-level",
                        default=os.environ.get("PRIVSCHED_LOG_LEVEL", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run a parameter grid of simulations")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("curves", help="evaluate accounting curves and DP translation")
    p.add_argument("--mechanism", required=True,
                   choices=["gaussian", "laplace", "pure", "counter"])
    p.add_argument("--param", type=float, required=True,
                   help="sigma (gaussian) or eps0 (laplace/pure/counter)")
    p.add_argument("--compose", type=int, default=1)
    p.add_argument("--delta", type=float, default=1e-7)
    p.add_argument("--grid", default="default")
    p.add_argument("--T", type=int, default=None, help="counter horizon")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_curves)

    p = sub.add_parser("counter", help="streaming-counter statistics over trials")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--ticks", type=int, default=256)
    p.add_argument("--stream", default="poisson:5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--log10-bound", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_counter)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SimInvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError) as exc:
        # ValueError covers config inconsistencies only detectable mid-run,
        # e.g. a trace demand template missing its workload-level reference
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
