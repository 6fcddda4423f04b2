"""Plots and markdown summaries for finished run and sweep directories."""
import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import INCOMPLETE, format_cell, parse_cell, read_metrics  # noqa: E402


class ReportError(RuntimeError):
    pass


def _fmt(value):
    return "" if value is None else f"{value:.6g}"


def _series(rows, col):
    pts = [(r["step"], r[col]) for r in rows if r.get(col) is not None]
    return [p[0] for p in pts], [p[1] for p in pts]


def _line_plot(path, rows, cols, ylabel, title):
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in cols:
        xs, ys = _series(rows, col)
        if xs:
            ax.plot(xs, ys, label=col)
    ax.set_xlabel("generator step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if cols:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def report_run(run_dir):
    """Loss, d_dep and Fréchet curves plus ``summary.md``; returns the files written."""
    run_dir = Path(run_dir)
    path = run_dir / "metrics.csv"
    if not path.exists():
        raise ReportError(f"{run_dir}: no metrics.csv, nothing to report (is this a run directory?)")
    cols, rows = read_metrics(path)
    lines = [f"# Run report: {run_dir.name}", ""]
    if (run_dir / INCOMPLETE).exists():
        lines += ["**Run is incomplete**: training did not finish.", ""]
    written = []
    if not rows:
        lines.append("no eval rows")
    else:
        loss_cols = ["gen_loss"] + [c for c in cols if c.startswith("d_") and c != "d_dep"]
        fd_cols = [c for c in cols if c.startswith("frechet_part_")]
        plots = [("losses.png", loss_cols, "loss", "Training losses"),
                 ("d_dep.png", ["d_dep"], "d_dep", "Dependency metric"),
                 ("frechet.png", fd_cols, "Fréchet distance", "Per-part Fréchet distance")]
        for name, pcols, ylabel, title in plots:
            present = [c for c in pcols if any(r.get(c) is not None for r in rows)]
            if not present:
                lines.append(f"- {name}: skipped, metric missing from every eval row")
                continue
            _line_plot(run_dir / name, rows, present, ylabel, title)
            written.append(run_dir / name)
        last = rows[-1]
        lines += ["", f"Final eval row (step {last['step']}):", "", "| metric | value |", "|---|---|"]
        lines += [f"| {c} | {_fmt(last.get(c))} |" for c in cols if c != "step"]
    (run_dir / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return written + [run_dir / "summary.md"]


def read_aggregate(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {k: (v if k == "model_kind" else parse_cell(v)) for k, v in row.items()}
        out.append(parsed)
    return out


def sweep_plot_data(rows):
    """``{metric: {model_kind: [(n_paired, mean, se), ...]}}`` exactly as read from the aggregate."""
    metrics = [k[:-5] for k in (rows[0] if rows else {}) if k.endswith("_mean")]
    data = {}
    for m in metrics:
        series = {}
        for row in rows:
            if row[f"{m}_mean"] is None:
                continue
            series.setdefault(row["model_kind"], []).append((row["n_paired"], row[f"{m}_mean"], row[f"{m}_se"]))
        if series:
            data[m] = {k: sorted(v) for k, v in series.items()}
    return data


def report_sweep(sweep_dir):
    """One errorbar plot per metric against n_paired; returns the plotted data."""
    sweep_dir = Path(sweep_dir)
    path = sweep_dir / "aggregate.csv"
    if not path.exists():
        raise ReportError(f"{sweep_dir}: no aggregate.csv, nothing to report (is this a sweep directory?)")
    rows = read_aggregate(path)
    data = sweep_plot_data(rows)
    plot_dir = sweep_dir / "plots"
    plot_dir.mkdir(exist_ok=True)
    for metric, series in data.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind, pts in series.items():
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            err = [0.0 if p[2] is None else p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=err, marker="o", capsize=3, label=kind)
        ax.set_xscale("log")
        ax.set_xlabel("n_paired")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} (mean ± SE over seeds)")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(plot_dir / f"{metric}.png")
        plt.close(fig)
    with open(sweep_dir / "plot_data.json", "w", encoding="utf-8") as fh:
        json.dump({m: {k: [list(p) for p in v] for k, v in s.items()} for m, s in data.items()}, fh, indent=1)
        fh.write("\n")
    lines = [f"# Sweep report: {sweep_dir.name}", ""]
    if not rows:
        lines.append("no cells in aggregate")
    else:
        shown = [m for m in ("frechet_mean", "d_dep", "gen_loss") if m in data]
        head = ["n_paired", "model_kind", "n_runs", "n_failed"] + [f"{m} (mean ± SE)" for m in shown]
        lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for row in rows:
            cells = [format_cell(row["n_paired"]), row["model_kind"], format_cell(row["n_runs"]),
                     format_cell(row["n_failed"])]
            for m in shown:
                mean, se = row[f"{m}_mean"], row[f"{m}_se"]
                cells.append("" if mean is None else f"{mean:.4g} ± {_fmt(se) or 'n/a'}")
            lines.append("| " + " | ".join(cells) + " |")
        missing = [k[:-5] for k in rows[0] if k.endswith("_mean") and k[:-5] not in data]
        if missing:
            lines += ["", "Metrics with no values in any cell: " + ", ".join(missing)]
    (sweep_dir / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return data


def report(path):
    path = Path(path)
    if (path / "aggregate.csv").exists():
        return report_sweep(path)
    return report_run(path)
