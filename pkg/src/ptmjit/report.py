"""Tables and plot series from a finished report directory."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .experiments import METRICS_COLUMNS, CellResult, ExperimentReport, compare_runs, metrics_rows
from .metrics import write_table

HIST_BINS = 20


def score_histogram(scores: Sequence[float], bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ``bins`` equal-width bins on [0, 1]; the last bin is closed."""
    return np.histogram(np.asarray(scores, dtype=float), bins=bins, range=(0.0, 1.0))


def _group_key(c: CellResult) -> str:
    return f"{c.cell.dataset}_{c.cell.tag}"


def _series_names(cells: Sequence[CellResult]) -> list[str]:
    names = [c.cell.backbone for c in cells]
    return names if len(set(names)) == len(names) else [c.cell.label for c in cells]


def build_report(report: ExperimentReport, out: str | Path | None = None, plots: bool = False) -> dict[str, Path]:
    """Write metrics, histogram, loss-curve and t-test files; returns them by name."""
    out = Path(out) if out is not None else report.out_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    ok = report.ok_cells()
    written["metrics"] = write_table(metrics_rows(report.cells), out / "metrics.tsv", METRICS_COLUMNS)

    hist_rows, loss_rows = [], []
    for name, c in zip(_series_names(ok), ok):
        counts, edges = score_histogram(c.scores)
        for b, n in enumerate(counts):
            hist_rows.append({"model": name, "bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]),
                              "count": int(n)})
        if c.trace:
            loss_rows += [{"model": name, "step": s, "loss": l} for s, _, l, _ in c.trace.train_loss]
    written["histograms"] = write_table(hist_rows, out / "histograms.tsv", ("model", "bin", "lo", "hi", "count"))
    written["loss_curves"] = write_table(loss_rows, out / "loss_curves.tsv", ("model", "step", "loss"))

    groups: dict[str, list[CellResult]] = {}
    for c in ok:
        groups.setdefault(_group_key(c), []).append(c)
    for key, cells in sorted(groups.items()):
        if len(cells) < 2:
            continue
        bundle = compare_runs(dict(zip(_series_names(cells), cells)))
        gdir = bundle.write(out / "compare" / key)
        written[f"ttest:{key}"] = gdir / "ttest.tsv"

    if plots:
        written.update(_render_plots(out, hist_rows, loss_rows))
    return written


def _render_plots(out: Path, hist_rows: list[dict], loss_rows: list[dict]) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    models = list(dict.fromkeys(r["model"] for r in hist_rows))
    if models:
        fig, axes = plt.subplots(1, len(models), figsize=(3 * len(models), 2.6), squeeze=False)
        for ax, m in zip(axes[0], models):
            rows = [r for r in hist_rows if r["model"] == m]
            ax.bar([r["lo"] for r in rows], [r["count"] for r in rows], width=1.0 / HIST_BINS, align="edge")
            ax.set_title(m, fontsize=8)
            ax.set_xlim(0, 1)
        fig.tight_layout()
        paths["histograms_png"] = out / "histograms.png"
        fig.savefig(paths["histograms_png"], dpi=120)
        plt.close(fig)
    if loss_rows:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for m in dict.fromkeys(r["model"] for r in loss_rows):
            rows = [r for r in loss_rows if r["model"] == m]
            ax.plot([r["step"] for r in rows], [r["loss"] for r in rows], label=m, linewidth=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        ax.legend(fontsize=7)
        fig.tight_layout()
        paths["loss_png"] = out / "loss_curves.png"
        fig.savefig(paths["loss_png"], dpi=120)
        plt.close(fig)
    return paths
