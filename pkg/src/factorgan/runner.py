"""Run directories, metrics CSV files and sweep aggregation.

A run directory holds ``config.yaml`` (the effective config, enough to
reproduce the run), ``metrics.csv``, ``checkpoints/`` and ``summary.json``.
While training, an ``INCOMPLETE`` marker sits next to them; it is removed
only when the run finishes cleanly.
"""
import csv
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import load_experiment, parse_experiment
from .evaluation import head_column_order
from .training import build_heads, training_loop

INCOMPLETE = "INCOMPLETE"


def metrics_columns(head_names, n_parts):
    cols = ["step", "gen_loss", *head_column_order(head_names), "d_dep"]
    cols += [f"frechet_part_{i + 1}" for i in range(n_parts)]
    return cols + ["ratio_mae", "wall_time"]


def format_cell(value):
    """CSV text for one metric: empty for missing, shortest round-trip repr for floats."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def parse_cell(text):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_metrics(path):
    """``(columns, rows)`` with each row a dict of parsed cells."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            return [], []
        rows = [{c: parse_cell(v) for c, v in zip(cols, line)} for line in reader if line]
    return cols, rows


def _head_names(task, cfg):
    # structure only; the throwaway rng never touches the real init stream
    return [f.name for f in build_heads(task.partition, cfg, np.random.default_rng(0)).factors()]


def run_train(config, run_dir):
    """Train one configured run into ``run_dir``; returns the summary dict.

    Failures after the directory exists leave the ``INCOMPLETE`` marker in
    place and record the error in ``summary.json`` before re-raising.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    marker = run_dir / INCOMPLETE
    marker.write_text("run started\n")
    (run_dir / "config.yaml").write_text(config.dump(), encoding="utf-8")
    task = config.task
    cfg = config.train
    cols = metrics_columns(_head_names(task, cfg), task.partition.k)
    summary = {"status": "incomplete", "steps": cfg.total_gen_steps, "seed": cfg.seed,
               "model_kind": cfg.model_kind, "n_paired": config.split.n_paired}
    try:
        ckpt = run_dir / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        with open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            fh.flush()

            def on_metrics(rec):
                row = dict(zip(rec.columns(), rec.values()))
                writer.writerow([format_cell(row.get(c)) for c in cols])
                fh.flush()

            result = training_loop(task, cfg, config.split, checkpoint_dir=str(ckpt), on_metrics=on_metrics)
        summary["status"] = "complete"
        summary["eval_rows"] = len(result.metrics)
        if result.metrics:
            last = dict(zip(result.metrics[-1].columns(), result.metrics[-1].values()))
            summary["final"] = {k: (None if v is None else float(v)) for k, v in last.items() if k != "step"}
    except BaseException as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        summary["traceback"] = traceback.format_exc()
        _write_summary(run_dir, summary)
        raise
    _write_summary(run_dir, summary)
    marker.unlink()
    return summary


def _write_summary(run_dir, summary):
    with open(Path(run_dir) / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summary_line(run_dir, summary):
    parts = [f"{summary['status']}", f"steps={summary['steps']}", f"seed={summary['seed']}"]
    final = summary.get("final") or {}
    for key in ("gen_loss", "d_dep"):
        if final.get(key) is not None:
            parts.append(f"{key}={final[key]:.4g}")
    fds = [v for k, v in final.items() if k.startswith("frechet_part_") and v is not None]
    if fds:
        parts.append(f"frechet_mean={np.mean(fds):.4g}")
    return f"{run_dir}: " + " ".join(parts)


def cell_dir_name(n_paired, model_kind, seed):
    return f"np{n_paired}_{model_kind}_s{seed}"


def _run_cell(args):
    config_text, run_dir = args
    config = parse_experiment(config_text)
    try:
        summary = run_train(config, run_dir)
    except Exception as exc:  # recorded, the sweep goes on
        return {"run_dir": str(run_dir), "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {"run_dir": str(run_dir), "status": summary["status"]}


def run_sweep(spec, out_dir, parallel=1, on_cell=None):
    """One run per ``(n_paired, model_kind, seed)`` cell, then ``aggregate.csv``.

    Cells share nothing, so ``parallel > 1`` runs them in worker processes
    without changing any result.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for n, kind, seed in spec.cells():
        cfg = spec.base.with_changes(seed=seed, n_paired=n, model_kind=kind)
        jobs.append((cfg.dump(), str(out_dir / cell_dir_name(n, kind, seed))))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = []
            for res in pool.map(_run_cell, jobs):
                outcomes.append(res)
                if on_cell is not None:
                    on_cell(res)
    else:
        outcomes = []
        for job in jobs:
            res = _run_cell(job)
            outcomes.append(res)
            if on_cell is not None:
                on_cell(res)
    with open(out_dir / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"spec": spec.to_dict(), "cells": outcomes}, fh, indent=2)
        fh.write("\n")
    aggregate_sweep(out_dir, spec)
    return outcomes


def final_row(run_dir):
    path = Path(run_dir) / "metrics.csv"
    if (Path(run_dir) / INCOMPLETE).exists() or not path.exists():
        return None
    _, rows = read_metrics(path)
    return rows[-1] if rows else None


def _metric_order(rows):
    seen = []
    for row in rows:
        for key in row:
            if key != "step" and key not in seen:
                seen.append(key)
    heads = head_column_order([k for k in seen if k.startswith("d_") and k != "d_dep"])
    frechet = sorted((k for k in seen if k.startswith("frechet_part_")), key=lambda k: int(k.rsplit("_", 1)[1]))
    order = ["gen_loss", *heads, "d_dep", *frechet]
    if frechet:
        order.append("frechet_mean")
    order += ["ratio_mae", "wall_time"]
    return [k for k in order if k in seen or k == "frechet_mean"]


def _with_frechet_mean(row):
    fds = [v for k, v in row.items() if k.startswith("frechet_part_") and v is not None]
    out = dict(row)
    out["frechet_mean"] = float(np.mean(fds)) if fds else None
    return out


def mean_and_se(values):
    """Mean and standard error (sample std / sqrt n) of the non-missing values."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else None
    return mean, se


def aggregate_sweep(out_dir, spec):
    """Write ``aggregate.csv``: per ``(n_paired, model_kind)`` the mean and SE of every final-row metric."""
    out_dir = Path(out_dir)
    groups = {}
    for n, kind, seed in spec.cells():
        row = final_row(out_dir / cell_dir_name(n, kind, seed))
        groups.setdefault((n, kind), []).append(row)
    all_rows = [_with_frechet_mean(r) for rows in groups.values() for r in rows if r is not None]
    metrics = _metric_order(all_rows)
    header = ["n_paired", "model_kind", "n_runs", "n_failed", "d_dep_undefined"]
    for m in metrics:
        header += [f"{m}_mean", f"{m}_se"]
    lines = []
    for (n, kind), rows in groups.items():
        ok = [_with_frechet_mean(r) for r in rows if r is not None]
        line = [n, kind, len(ok), len(rows) - len(ok), sum(r.get("d_dep") is None for r in ok)]
        for m in metrics:
            line += list(mean_and_se([r.get(m) for r in ok]))
        lines.append(line)
    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for line in lines:
            writer.writerow([v if isinstance(v, str) else format_cell(v) for v in line])
    return out_dir / "aggregate.csv"


def default_out_root():
    return Path(os.environ.get("FGAN_OUT", "runs"))


def load_run_config(run_dir):
    return load_experiment(Path(run_dir) / "config.yaml")
