"""Command-line harness: single runs, seeded sweeps, config validation and
the oracle self-test. Results are written as CSV plus line-delimited JSON
run logs."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .config import (ConfigError, RunConfig, SweepSpec, apply_sweep_value, load_config,
                     load_sweep, parse_seeds, parse_variants)
from .driver import VARIANTS, BcdOptions, run_variant
from .model import sinr_all
from .scenario import Scenario, lin_to_db, synthesize_channels, watt_to_dbm

log = logging.getLogger("arisac")

COLUMNS = ("variant", "param", "value", "seed", "crb_rad2", "crb_db", "min_sinr_db",
           "bs_power_w", "ris_power_w", "outer_iters", "wall_ms", "status")
MEDIAN_COLUMNS = ("variant", "param", "value", "n_runs", "crb_rad2", "crb_db", "min_sinr_db",
                  "bs_power_w", "ris_power_w", "outer_iters")
NUMERIC = ("crb_rad2", "crb_db", "min_sinr_db", "bs_power_w", "ris_power_w", "outer_iters")
OK_STATUS = ("converged", "max-iter")


@dataclass(frozen=True)
class Task:
    variant: str
    param: str
    value: object          # display value written to the CSV
    seed: int
    scenario: Scenario
    options: BcdOptions


def display_value(param: str, value) -> object:
    """Sweep values in the units they are written in (dBm, dB)."""
    if param == "p_bs":
        return watt_to_dbm(value)
    if param == "gamma":
        return lin_to_db(value)
    return value


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_task(task: Task) -> tuple[dict, list]:
    """One design run; failures are reported in the status column."""
    t0 = time.perf_counter()
    sc = task.scenario
    row = {"variant": task.variant, "param": task.param, "value": task.value,
           "seed": task.seed}
    records = []
    try:
        ch = synthesize_channels(sc)
        res = run_variant(task.variant, sc, ch, task.options)
        records = [r.as_dict() for r in res.trace.records]
        status = res.status
        if res.w is not None:
            feas = res.feasibility()
            sinrs = sinr_all(res.channels, res.w, res.phi, res.scenario)
            row.update(crb_rad2=float(res.crb_theta), crb_db=float(res.crb_db),
                       min_sinr_db=lin_to_db(float(min(sinrs))) if sinrs.size else math.nan,
                       bs_power_w=feas.bs_power, ris_power_w=feas.ris_power)
        else:
            row.update(crb_rad2=math.inf, crb_db=math.inf, min_sinr_db=math.nan,
                       bs_power_w=math.nan, ris_power_w=math.nan)
        row["outer_iters"] = len(res.trace)
    except Exception as exc:  # recorded, never aborts a sweep
        log.warning("run %s/%s=%s/seed %d failed: %s", task.variant, task.param, task.value,
                    task.seed, exc)
        status = f"error: {type(exc).__name__}: {exc}"
        row.update(crb_rad2=math.inf, crb_db=math.inf, min_sinr_db=math.nan,
                   bs_power_w=math.nan, ris_power_w=math.nan, outer_iters=0)
    row["wall_ms"] = int(round(1000.0 * (time.perf_counter() - t0)))
    row["status"] = status
    return row, records


def build_tasks(spec: SweepSpec, base: Scenario, opts: BcdOptions) -> list[Task]:
    tasks = []
    for variant in spec.variants:
        for value in spec.values:
            sc_v = apply_sweep_value(base, spec.param, value)
            for seed in spec.seeds:
                tasks.append(Task(variant, spec.param, display_value(spec.param, value), seed,
                                  sc_v.replace(seed=seed), opts))
    return tasks


def execute(tasks: list[Task], jobs: int = 1) -> list[tuple[dict, list]]:
    """Run tasks on a bounded pool; results keep the task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_task, tasks))


def median_rows(rows: list[dict]) -> list[dict]:
    """Per (variant, param, value): medians over runs with a usable design."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["variant"], r["param"], r["value"]), []).append(r)
    out = []
    for (variant, param, value), grp in groups.items():
        ok = [r for r in grp if r["status"] in OK_STATUS]
        med = {"variant": variant, "param": param, "value": value, "n_runs": len(ok)}
        for col in NUMERIC:
            vals = [float(r[col]) for r in ok]
            med[col] = float(statistics.median(vals)) if vals else math.nan
        out.append(med)
    return out


def write_csv(path: str, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in columns])


def write_outputs(out_dir: str, name: str, results: list[tuple[dict, list]]) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    rows = [r for r, _ in results]
    paths = {"csv": os.path.join(out_dir, f"{name}.csv"),
             "median": os.path.join(out_dir, f"{name}_median.csv"),
             "log": os.path.join(out_dir, f"{name}_runs.jsonl")}
    write_csv(paths["csv"], rows, COLUMNS)
    write_csv(paths["median"], median_rows(rows), MEDIAN_COLUMNS)
    with open(paths["log"], "w", encoding="utf-8") as fh:
        for row, records in results:
            tags = {k: row[k] for k in ("variant", "param", "value", "seed")}
            for rec in records:
                fh.write(json.dumps({**tags, **rec}) + "\n")
    return paths


def run_sweep(spec: SweepSpec, base: Scenario, opts: BcdOptions | None = None,
              jobs: int = 1, name: str = "sweep") -> dict:
    errs = spec.problems()
    if errs:
        raise ConfigError(errs)
    results = execute(build_tasks(spec, base, opts or BcdOptions()), jobs)
    return write_outputs(spec.out, name, results)


# ---------------------------------------------------------------------------
# verbs


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}")
        return 1
    for w in cfg.warnings:
        print(w)
    print(cfg.scenario)
    return 0


def _cmd_run(args) -> int:
    try:
        cfg: RunConfig = load_config(args.config)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    for w in cfg.warnings:
        log.warning(w)
    seeds = parse_seeds(args.seeds) if args.seeds else (cfg.scenario.seed,)
    variants = parse_variants(args.variant) if args.variant else ("aris-isac",)
    spec = SweepSpec("none", (None,), seeds, variants, args.out)
    errs = [e for e in spec.problems() if "param" not in e]
    if errs:
        for e in errs:
            print(f"error: {e}", file=sys.stderr)
        return 2
    tasks = [Task(v, "none", "", s, cfg.scenario.replace(seed=s), cfg.options)
             for v in variants for s in seeds]
    paths = write_outputs(args.out, "run", execute(tasks, args.jobs))
    print(paths["csv"])
    return 0


def _cmd_sweep(args) -> int:
    try:
        spec, _, cfg = load_sweep(args.config, args.out)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    if args.seeds:
        spec = SweepSpec(spec.param, spec.values, parse_seeds(args.seeds), spec.variants,
                         args.out)
    if args.variant:
        spec = SweepSpec(spec.param, spec.values, spec.seeds, parse_variants(args.variant),
                         args.out)
    try:
        paths = run_sweep(spec, cfg.scenario, cfg.options, args.jobs, name=f"sweep_{spec.param}")
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    print(paths["csv"])
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest(print) else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arisac", description="Active-RIS ISAC design experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="INI configuration file")
        sp.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    sp = sub.add_parser("run", help="design one scenario for the given seeds")
    common(sp)
    sp.add_argument("--out", default="out")
    sp.add_argument("--seeds", help="comma list, ranges like 0-9 allowed")
    sp.add_argument("--variant", help=f"comma list of {', '.join(VARIANTS)}")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("sweep", help="run a parameter sweep described by a config file")
    common(sp, config_required=True)
    sp.add_argument("--out", default="out")
    sp.add_argument("--seeds")
    sp.add_argument("--variant")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("validate", help="check a configuration file")
    common(sp)
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("selftest", help="run the numerical oracle checks")
    common(sp)
    sp.set_defaults(func=_cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
