"""Experiment runner: config loading, Monte-Carlo sweeps, CSV/SVG output.

One experiment sweeps a single parameter (BS power in dBm, surface cell
count, or BS antenna count) over paired active/passive replications.
Every run's scenario seed is derived from (master_seed, point, rep) only,
so both methods see identical channels and identical solver-side draws —
required for paired gain comparisons.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import svgplot
from .driver import SolverConfig, run_ao
from .scenario import GeometryConfig, NoiseConfig, PowerConfig, SystemDims, build_scenario

SWEEP_PARAMETERS = ("p_bs_dbm", "cells", "bs_antennas")


@dataclass
class ExperimentConfig:
    label: str = "experiment"
    sweep_parameter: str = "p_bs_dbm"
    sweep_values: list = field(default_factory=lambda: [10.0, 15.0, 20.0, 25.0, 30.0, 35.0])
    bs_antennas: int = 10
    cells: int = 36
    users_transmissive: int = 1
    users_reflective: int = 1
    p_bs_dbm: float = 20.0
    p_max_dbm: float = 10.0
    sigma_user_dbm: float = -90.0
    sigma_ris_dbm: float = -90.0
    methods: list = field(default_factory=lambda: ["active", "passive"])
    num_seeds: int = 50
    master_seed: int = 20240
    emit_traces: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        solver = SolverConfig(**d.pop("solver", {}))
        sweep = d.pop("sweep", None)
        cfg = ExperimentConfig(**d, solver=solver)
        if sweep is not None:
            cfg.sweep_parameter = sweep["parameter"]
            cfg.sweep_values = list(sweep["values"])
        if cfg.sweep_parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {cfg.sweep_parameter!r}; "
                             f"expected one of {SWEEP_PARAMETERS}")
        return cfg


PRESETS = {
    # convergence trace at the default operating point
    "fig2": dict(label="fig2", sweep={"parameter": "p_bs_dbm", "values": [20.0]},
                 emit_traces=True),
    # sum rate vs BS power, one user per zone
    "fig3": dict(label="fig3",
                 sweep={"parameter": "p_bs_dbm",
                        "values": [10.0, 15.0, 20.0, 25.0, 30.0, 35.0]}),
    # sum rate vs BS power, two users per zone
    "fig4": dict(label="fig4",
                 sweep={"parameter": "p_bs_dbm",
                        "values": [10.0, 15.0, 20.0, 25.0, 30.0, 35.0]},
                 users_transmissive=2, users_reflective=2),
    # sum rate vs surface size, one user per zone
    "fig5": dict(label="fig5",
                 sweep={"parameter": "cells", "values": [16, 36, 64, 81]}),
    # sum rate vs surface size, two users per zone
    "fig6": dict(label="fig6",
                 sweep={"parameter": "cells", "values": [16, 36, 64, 81]},
                 users_transmissive=2, users_reflective=2),
    # sum rate vs BS array size
    "figM": dict(label="figM",
                 sweep={"parameter": "bs_antennas",
                        "values": [10, 15, 20, 25, 30]}),
}


@dataclass
class ResultRow:
    method: str
    sweep_value: float
    seed_index: int
    scenario_seed: int
    sum_rate: float
    iterations: int
    wall_ms: float
    max_residual: float
    status: str = "ok"

    def key(self):
        return (self.sweep_value, self.seed_index, self.method)


def scenario_seed_for(master_seed: int, point_index: int, rep: int) -> int:
    """Derived only from (master, point, rep): methods share channels."""
    ss = np.random.SeedSequence((master_seed, point_index, rep))
    return int(ss.generate_state(1, np.uint64)[0])


def build_point_scenario(config: ExperimentConfig, sweep_value, seed: int):
    over = {config.sweep_parameter: sweep_value}
    dims = SystemDims(M=int(over.get("bs_antennas", config.bs_antennas)),
                      N=int(over.get("cells", config.cells)),
                      K_T=config.users_transmissive,
                      K_R=config.users_reflective)
    geometry = GeometryConfig(rng_seed=seed)
    powers = PowerConfig(p_bs_dbm=float(over.get("p_bs_dbm", config.p_bs_dbm)),
                         p_max_dbm=config.p_max_dbm)
    noise = NoiseConfig(sigma_user_dbm=config.sigma_user_dbm,
                        sigma_ris_dbm=config.sigma_ris_dbm)
    return build_scenario(geometry, dims, powers, noise)


def _run_one(args) -> ResultRow:
    config, method, point_index, sweep_value, rep = args
    seed = scenario_seed_for(config.master_seed, point_index, rep)
    t0 = time.perf_counter()
    try:
        scenario = build_point_scenario(config, sweep_value, seed)
        result = run_ao(scenario, config.solver, mode=method)
        return ResultRow(
            method=method, sweep_value=float(sweep_value), seed_index=rep,
            scenario_seed=seed, sum_rate=result.final.sum_rate,
            iterations=result.iterations,
            wall_ms=(time.perf_counter() - t0) * 1e3,
            max_residual=result.final.feasibility.max_residual())
    except Exception as exc:  # noqa: BLE001 - per-run failures become rows
        return ResultRow(
            method=method, sweep_value=float(sweep_value), seed_index=rep,
            scenario_seed=seed, sum_rate=math.nan, iterations=0,
            wall_ms=(time.perf_counter() - t0) * 1e3, max_residual=math.nan,
            status=f"error: {exc}")


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list:
    tasks = [(config, method, pi, sv, rep)
             for pi, sv in enumerate(config.sweep_values)
             for rep in range(config.num_seeds)
             for method in config.methods]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_one, tasks, chunksize=1))
    else:
        rows = [_run_one(t) for t in tasks]
    rows.sort(key=ResultRow.key)
    return rows


def summarize(rows: list) -> list:
    """Per sweep point: mean/std per method plus active-over-passive gain.

    Returns dicts with keys sweep_value, <method>_mean, <method>_std,
    <method>_n and gain_pct (when both methods are present).
    """
    points = sorted({r.sweep_value for r in rows})
    methods = sorted({r.method for r in rows})
    out = []
    for sv in points:
        entry = {"sweep_value": sv}
        for method in methods:
            vals = [r.sum_rate for r in rows
                    if r.method == method and r.sweep_value == sv
                    and r.status == "ok" and not math.isnan(r.sum_rate)]
            entry[f"{method}_mean"] = float(np.mean(vals)) if vals else math.nan
            entry[f"{method}_std"] = float(np.std(vals)) if vals else math.nan
            entry[f"{method}_n"] = len(vals)
        if "active" in methods and "passive" in methods:
            pm = entry.get("passive_mean", math.nan)
            am = entry.get("active_mean", math.nan)
            if pm and not (math.isnan(pm) or math.isnan(am)):
                entry["gain_pct"] = 100.0 * (am - pm) / pm
            else:
                warnings.warn(f"sweep point {sv}: a method has no valid "
                              "results; gain omitted", stacklevel=2)
                entry["gain_pct"] = math.nan
        out.append(entry)
    return out


RESULT_FIELDS = ["method", "sweep_value", "seed_index", "scenario_seed",
                 "sum_rate", "iterations", "wall_ms", "max_residual", "status"]


def write_results_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([r.method, repr(r.sweep_value), r.seed_index,
                        r.scenario_seed, repr(r.sum_rate), r.iterations,
                        repr(r.wall_ms), repr(r.max_residual), r.status])


def read_results_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(ResultRow(
                method=rec["method"], sweep_value=float(rec["sweep_value"]),
                seed_index=int(rec["seed_index"]),
                scenario_seed=int(rec["scenario_seed"]),
                sum_rate=float(rec["sum_rate"]),
                iterations=int(rec["iterations"]),
                wall_ms=float(rec["wall_ms"]),
                max_residual=float(rec["max_residual"]), status=rec["status"]))
    return rows


def emit_outputs(rows: list, summary: list, config: ExperimentConfig,
                 out_dir) -> dict:
    """Write results.csv, summary.csv and the sweep chart; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"results": os.path.join(out_dir, "results.csv"),
             "summary": os.path.join(out_dir, "summary.csv"),
             "chart": os.path.join(out_dir, f"{config.label}.svg")}
    write_results_csv(rows, paths["results"])

    fields = ["sweep_value"]
    for method in sorted(config.methods):
        fields += [f"{method}_mean", f"{method}_std", f"{method}_n"]
    if "gain_pct" in (summary[0] if summary else {}):
        fields.append("gain_pct")
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for entry in summary:
            w.writerow([repr(entry[f]) if isinstance(entry[f], float) else entry[f]
                        for f in fields])

    series = []
    for method in sorted(config.methods):
        pts = [(e["sweep_value"], e[f"{method}_mean"], e[f"{method}_std"])
               for e in summary if not math.isnan(e[f"{method}_mean"])]
        if pts:
            series.append({"label": method,
                           "x": [p[0] for p in pts],
                           "mean": [p[1] for p in pts],
                           "std": [p[2] for p in pts]})
    if not series:  # nothing to plot: emit the CSVs only
        del paths["chart"]
        return paths
    axis_names = {"p_bs_dbm": "BS power [dBm]", "cells": "surface cells",
                  "bs_antennas": "BS antennas"}
    svg = svgplot.line_chart(config.label, axis_names[config.sweep_parameter],
                             "sum rate [bit/s/Hz]", series)
    with open(paths["chart"], "w") as fh:
        fh.write(svg)
    return paths


def _emit_traces(config: ExperimentConfig, out_dir) -> None:
    """Single-seed per-iteration traces (first sweep point, both methods)."""
    sv = config.sweep_values[0]
    seed = scenario_seed_for(config.master_seed, 0, 0)
    series = []
    for method in config.methods:
        scenario = build_point_scenario(config, sv, seed)
        result = run_ao(scenario, config.solver, mode=method)
        result.trace.to_csv(os.path.join(out_dir, f"trace_{method}.csv"))
        rates = result.trace.rate_trace()
        series.append({"label": method,
                       "x": list(range(1, len(rates) + 1)),
                       "mean": [float(r) for r in rates]})
    svg = svgplot.line_chart(f"{config.label} convergence", "outer iteration",
                             "sum rate [bit/s/Hz]", series)
    with open(os.path.join(out_dir, f"{config.label}_convergence.svg"), "w") as fh:
        fh.write(svg)


def load_config(path=None, preset=None) -> ExperimentConfig:
    if path is None and preset is None:
        raise ValueError("need a config file, a preset, or both")
    base = dict(PRESETS[preset]) if preset else {}
    if path is not None:
        with open(path) as fh:
            overrides = json.load(fh)
        solver = {**base.get("solver", {}), **overrides.pop("solver", {})}
        base.update(overrides)
        if solver:
            base["solver"] = solver
    return ExperimentConfig.from_dict(base)


def default_threads() -> int:
    """Worker count: STARBDRIS_THREADS env var, else 1."""
    return max(1, int(os.environ.get("STARBDRIS_THREADS", "1")))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="starbdris")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a Monte-Carlo experiment")
    runp.add_argument("--config", help="JSON experiment config")
    runp.add_argument("--preset", choices=sorted(PRESETS),
                      help="named experiment preset")
    runp.add_argument("--seeds", type=int, help="override replication count")
    runp.add_argument("--out", default="out", help="output directory")
    runp.add_argument("--threads", type=int, default=default_threads(),
                      help="worker processes for replications "
                           "(default from STARBDRIS_THREADS)")
    args = parser.parse_args(argv)

    config = load_config(args.config, args.preset)
    if args.seeds is not None:
        config.num_seeds = args.seeds
    t0 = time.perf_counter()
    rows = run_experiment(config, threads=args.threads)
    summary = summarize(rows)
    os.makedirs(args.out, exist_ok=True)
    paths = emit_outputs(rows, summary, config, args.out)
    if config.emit_traces:
        _emit_traces(config, args.out)
    n_err = sum(1 for r in rows if r.status != "ok")
    print(f"{config.label}: {len(rows)} runs "
          f"({n_err} failed) in {time.perf_counter() - t0:.1f} s")
    for entry in summary:
        gain = entry.get("gain_pct")
        gain_s = f"  gain {gain:+.1f}%" if gain is not None and not math.isnan(gain) else ""
        means = "  ".join(f"{m}={entry[f'{m}_mean']:.3f}" for m in sorted(config.methods))
        print(f"  {config.sweep_parameter}={entry['sweep_value']:g}  {means}{gain_s}")
    print(f"wrote {paths['results']}, {paths['summary']}, {paths['chart']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
