"""Command-line front end: train, gradvar, estats, bench, report.

Outputs go under ``<out>/<task>/<estimator>/<seed>/``. Files are written with
a ``.partial`` suffix and renamed once complete, so a failed run leaves its
partial output behind. Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import ConfigError, ExperimentConfig, parse_config
from .estimators import make_estimator
from .evalstats import (
    SUMMARY_COLUMNS,
    ReturnCurve,
    aggregate_across_agents,
    gradvar_to_csv,
    significance_marks,
    summarize_returns,
)
from .maddpg import METRICS_COLUMNS, config_dict, save_checkpoint, train
from .oracle import estimator_stats, exact_gradient, stats_to_csv

log = logging.getLogger("relaxmarl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RUN_SECTIONS = ("task", "estimator", "train", "output")


class ReportError(RuntimeError):
    pass


def _stamp() -> str:
    return f"# written: {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def _finish(partial: Path) -> Path:
    final = partial.with_suffix("")
    os.replace(partial, final)
    return final


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text)
    return _finish(partial)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_csv(path: Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- training -------------------------------------------------------------

def run_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return cfg.out_dir / cfg.task / cfg.estimator().label / str(seed)


def run_seed(cfg: ExperimentConfig, seed: int, gradvar: bool = False) -> Path:
    """One training run; returns the finished metrics CSV path."""
    single = deepcopy(cfg)
    single.values["task"]["seeds"] = [seed]
    tc = single.train_config()
    if gradvar and tc.gradvar_period == 0:
        tc.gradvar_period = 1
        single.values["train"]["gradvar_period"] = 1
    out = run_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    header = single.header(RUN_SECTIONS)
    partial = out / "metrics.csv.partial"
    with open(partial, "w") as fh:
        fh.write(header + _stamp())
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        fh.flush()

        def on_row(row):
            w.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
            fh.flush()

        result = train(cfg.task, single.estimator(), tc, seed=seed, on_row=on_row)
    if single.values["output"]["checkpoints"]:
        save_checkpoint(out / "checkpoint", result.agents, config_dict(tc))
    if gradvar:
        _write(out / "gradvar.csv", gradvar_to_csv(result.gradvar, header))
        agg = aggregate_across_agents(result.gradvar)
        _write(out / "gradvar_agents.csv",
               header + _csv_text(("step", "layer", "param_class", "mean", "min", "max"), agg))
    return _finish(partial)


def _curve(paths: list[Path]) -> ReturnCurve:
    runs = [read_csv(p) for p in paths]
    steps = [int(r["step"]) for r in runs[0]]
    for p, rows in zip(paths, runs):
        if [int(r["step"]) for r in rows] != steps:
            raise ReportError(f"{p}: evaluation steps differ from {paths[0]}")
    return ReturnCurve(steps, [[float(r["eval_mean_return"]) for r in rows] for rows in runs])


def _summary_row(task: str, label: str, summary, mark: str) -> dict:
    return dict(task=task, estimator=label, max_return=summary.max_return, max_ci=summary.max_ci,
                avg_return=summary.avg_return, avg_ci=summary.avg_ci, significant_vs_best=mark)


def cmd_train(cfg: ExperimentConfig, workers: int = 1, gradvar: bool = False) -> list[Path]:
    seeds = cfg.seeds
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            paths = list(pool.map(run_seed, [cfg] * len(seeds), seeds, [gradvar] * len(seeds)))
    else:
        paths = [run_seed(cfg, s, gradvar) for s in seeds]
    label = cfg.estimator().label
    summary = summarize_returns(_curve(paths))
    row = _summary_row(cfg.task, label, summary, "")
    header = cfg.header(RUN_SECTIONS) + _stamp()
    _write(cfg.out_dir / cfg.task / label / "summary.csv", header + _csv_text(SUMMARY_COLUMNS, [row]))
    return paths


# -- report ---------------------------------------------------------------

def discover_runs(root: Path) -> dict[tuple[str, str], list[Path]]:
    """Completed metrics files keyed by (task, estimator), seeds in numeric order."""
    found: dict[tuple[str, str], list[Path]] = {}
    for p in sorted(Path(root).glob("*/*/*/metrics.csv")):
        seed_dir = p.parent
        if not seed_dir.name.lstrip("-").isdigit():
            continue
        key = (seed_dir.parent.parent.name, seed_dir.parent.name)
        found.setdefault(key, []).append(p)
    for paths in found.values():
        paths.sort(key=lambda q: int(q.parent.name))
    return found


def build_report(root: Path, alpha: float = 0.05) -> list[dict]:
    runs = discover_runs(root)
    if not runs:
        raise ReportError(f"no completed metrics.csv files under {root}")
    rows = []
    for task in sorted({t for t, _ in runs}):
        labels = sorted(lbl for t, lbl in runs if t == task)
        summaries = {lbl: summarize_returns(_curve(runs[(task, lbl)])) for lbl in labels}
        marks = significance_marks({k: s.avg_samples for k, s in summaries.items()},
                                   {k: s.avg_return for k, s in summaries.items()}, alpha)
        rows += [_summary_row(task, lbl, summaries[lbl], marks[lbl]) for lbl in labels]
    return rows


def cmd_report(root: Path) -> Path:
    rows = build_report(root)
    header = (f"# significance: Welch t-test on per-seed average returns, alpha 0.05; "
              f"'best' = highest average return, '*' = not distinguishable from best\n")
    return _write(Path(root) / "report.csv", header + _stamp() + _csv_text(SUMMARY_COLUMNS, rows))


# -- estats / bench -------------------------------------------------------

def estimator_from_label(label: str, cfg: ExperimentConfig):
    e = cfg.section("estimator")
    if label.startswith("GRMC") and label[4:].isdigit():
        return make_estimator("GRMCK", tau=e["tau"], K=int(label[4:]))
    if label == "GRMCK":
        return make_estimator("GRMCK", tau=e["tau"], K=e["K"])
    tau = e["tau"] if label == "STGST" else None
    try:
        return make_estimator(label, tau=tau, kappa=e["kappa"], tau_start=e["tau_start"],
                              tau_end=e["tau_end"])
    except ValueError as exc:
        raise ConfigError(f"estats.estimators: {exc}") from None


def cmd_estats(cfg: ExperimentConfig) -> Path:
    s = cfg.section("estats")
    zeta, f = np.array(s["zeta"]), np.array(s["f"])
    if zeta.shape != f.shape:
        raise ConfigError("estats.zeta and estats.f must have the same length")
    configs = [estimator_from_label(lbl, cfg) for lbl in s["estimators"]]
    streams = np.random.SeedSequence(s["seed"]).spawn(len(configs))
    stats = [estimator_stats(c, zeta, f, s["n_samples"], np.random.default_rng(ss))
             for c, ss in zip(configs, streams)]
    header = cfg.header(("estats", "estimator")) + _stamp()
    header += "# exact gradient: " + ",".join(repr(float(v)) for v in exact_gradient(zeta, f)) + "\n"
    return _write(cfg.out_dir / "estats.csv", stats_to_csv(stats, header))


def cmd_bench(cfg: ExperimentConfig) -> Path:
    b = cfg.section("bench")
    configs = bench_mod.default_configs()
    rows = bench_mod.bench_table(b["dims"], configs, b["n_reps"], b["n_instances"],
                                 np.random.default_rng(b["seed"]))
    control = bench_mod.noop_control(b["n_reps"], b["n_instances"])
    header = cfg.header(("bench",)) + _stamp()
    return _write(cfg.out_dir / "bench.csv",
                  bench_mod.bench_to_csv(rows, b["n_reps"], b["n_instances"], control, header))


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relaxmarl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("train", "train MADDPG, one run per seed"),
                       ("gradvar", "train with per-sample gradient variance logging"),
                       ("estats", "estimator statistics against the exact gradient"),
                       ("bench", "time-per-relaxation benchmark"),
                       ("report", "aggregate training runs into a summary table")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", "-c", help="INI config file")
        p.add_argument("--set", "-s", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", "-o", help="output directory (output.dir)")
        p.add_argument("--verbose", "-v", action="store_true")
        if name in ("train", "gradvar"):
            p.add_argument("--task", help="task name (task.name)")
            p.add_argument("--estimator", help="estimator kind (estimator.kind)")
            p.add_argument("--seeds", help="comma-separated seeds (task.seeds)")
            p.add_argument("--workers", type=int, default=1,
                           help="run seeds in this many worker processes")
    return ap


def _overrides(args) -> list[str]:
    out = []
    for flag, key in (("task", "task.name"), ("estimator", "estimator.kind"),
                      ("seeds", "task.seeds"), ("out", "output.dir")):
        val = getattr(args, flag, None)
        if val is not None:
            out.append(f"{key}={val}")
    return out + list(args.set)


def run(args) -> list[Path]:
    cfg = parse_config(args.config, _overrides(args), args.command)
    if args.command in ("train", "gradvar"):
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return cmd_train(cfg, args.workers, gradvar=args.command == "gradvar")
    if args.command == "estats":
        return [cmd_estats(cfg)]
    if args.command == "bench":
        return [cmd_bench(cfg)]
    return [cmd_report(cfg.out_dir)]


def _fail(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc),
                      "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for path in run(args):
            print(path)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except Exception as exc:  # any runtime failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        return _fail("runtime", exc, EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
