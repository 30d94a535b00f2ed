"""Report files: JSON, delimited results, lead-time figure, context vectors."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ahe_slsh.errors import ConfigError, DataError  # noqa: E402
from ahe_slsh.harness.experiment import Report  # noqa: E402

RESULT_COLUMNS = ("model", "lead_minutes", "split", "accuracy", "mcc")

_rc = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "svg.hashsalt": "ahe-slsh",
    "svg.fonttype": "none",
}


def write_results_csv(report: Report, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in report.results:
            w.writerow([row["model"], row["lead_minutes"], row["split"],
                        repr(float(row["accuracy"])), repr(float(row["mcc"]))])


def save_contexts(path, labels, vectors, ids=None) -> None:
    """Context vectors as CSV: ``id,label,c0,...`` (width context_dim + 2)."""
    vectors = [list(v) for v in vectors]
    dim = len(vectors[0]) if vectors else 0
    ids = range(len(vectors)) if ids is None else ids
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", *(f"c{i}" for i in range(dim))])
        for i, label, vec in zip(ids, labels, vectors):
            w.writerow([int(i), int(label), *(repr(float(v)) for v in vec)])


def load_contexts(path):
    """Inverse of :func:`save_contexts`; returns ``(ids, labels, vectors)``."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"{path}: no such contexts file") from None
    if not rows or rows[0][:2] != ["id", "label"]:
        raise DataError(f"{path}: contexts file must start with an id,label header")
    width = len(rows[0])
    ids, labels, vectors = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            vectors.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return ids, labels, np.array(vectors, dtype=np.float64).reshape(len(ids), width - 2)


def write_contexts_csv(report: Report, path) -> None:
    ctx = report.contexts
    if not ctx:
        raise DataError("report carries no context vectors")
    save_contexts(path, ctx["labels"], ctx["vectors"])


def plot_leadtime(report: Report, path) -> None:
    """Accuracy and MCC against lead time, one line per (model, split)."""
    series: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
    for row in report.results:
        series.setdefault((row["model"], row["split"]), []).append(
            (row["lead_minutes"], row["accuracy"], row["mcc"]))
    with plt.rc_context(_rc):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 2.8), sharex=True)
        for (model, split), pts in sorted(series.items()):
            pts.sort()
            x = [p[0] for p in pts]
            style = "-" if split == "test" else "--"
            for ax, j in zip(axes, (1, 2)):
                ax.plot(x, [p[j] for p in pts], style, marker="o", label=f"{model} ({split})")
        for ax, title in zip(axes, ("Accuracy", "MCC")):
            ax.set_xlabel("lead time (min)")
            ax.set_ylabel(title)
            ax.grid(alpha=0.3)
        axes[1].legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def export_report(report: Report, out_dir) -> list[Path]:
    """Write report.json, results.csv, leadtime.svg and (if present) contexts.csv."""
    if not report.results:
        raise ConfigError("cannot export an empty report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "results.csv", out / "leadtime.svg"]
        report.save(paths[0])
        write_results_csv(report, paths[1])
        plot_leadtime(report, paths[2])
        if report.contexts:
            paths.append(out / "contexts.csv")
            write_contexts_csv(report, paths[3])
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from None
    return paths
