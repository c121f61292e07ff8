"""Classification metrics, rank AUC and Welch t-tests over prediction scores."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

OMITTED = "⊘"
TABLE_COLUMNS = ("model", "auc", "accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class PredictionResult:
    commit_id: str
    score: float
    label: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"{self.commit_id}: non-finite score {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"{self.commit_id}: label must be 0/1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    auc: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    threshold: float = 0.5
    undefined: tuple[str, ...] = ()

    def as_row(self, model: str) -> dict:
        return {"model": model, **{k: getattr(self, k) for k in TABLE_COLUMNS[1:]}}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        d["undefined"] = tuple(d.get("undefined", ()))
        return cls(**d)


def _as_arrays(preds: Sequence[PredictionResult]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.asarray([p.score for p in preds], dtype=float),
        np.asarray([p.label for p in preds], dtype=int),
    )


def confusion(preds: Sequence[PredictionResult], threshold: float = 0.5) -> ConfusionCounts:
    """Predicted positive iff ``score > threshold``."""
    if not preds:
        raise ValueError("no predictions")
    scores, labels = _as_arrays(preds)
    pos = scores > threshold
    return ConfusionCounts(
        tp=int(np.sum(pos & (labels == 1))),
        fp=int(np.sum(pos & (labels == 0))),
        tn=int(np.sum(~pos & (labels == 0))),
        fn=int(np.sum(~pos & (labels == 1))),
    )


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, True) if den else (0.0, False)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)[0]


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)[0]


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)[0]


def f1_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    return _ratio(2 * p * r, p + r)[0]


def f1(c: ConfusionCounts) -> float:
    return f1_score(precision(c), recall(c))


def auc(preds: Sequence[PredictionResult]) -> float:
    """Mann-Whitney AUC with ties counted one half; ``nan`` for single-class input."""
    scores, labels = _as_arrays(preds)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = stats.rankdata(scores)  # average ranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def evaluate(preds: Sequence[PredictionResult], threshold: float = 0.5) -> MetricsReport:
    c = confusion(preds, threshold)
    undefined = []
    p, ok_p = _ratio(c.tp, c.tp + c.fp)
    r, ok_r = _ratio(c.tp, c.tp + c.fn)
    f, ok_f = _ratio(2 * p * r, p + r)
    if not ok_p:
        undefined.append("precision")
    if not ok_r:
        undefined.append("recall")
    if not (ok_p and ok_r and ok_f):
        undefined.append("f1")
    a = auc(preds)
    if math.isnan(a):
        undefined.append("auc")
    return MetricsReport(a, accuracy(c), p, r, f, c, threshold, tuple(undefined))


def predictions(ids: Sequence[str], scores: Sequence[float], labels: Sequence[int]) -> list[PredictionResult]:
    if not len(ids) == len(scores) == len(labels):
        raise ValueError("ids, scores and labels differ in length")
    return [PredictionResult(str(i), float(s), int(y)) for i, s, y in zip(ids, scores, labels)]


# ---------------------------------------------------------------------------
# t-tests
# ---------------------------------------------------------------------------

def t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided unequal-variance (Welch) t-test of ``mean(a) - mean(b)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    if a.var(ddof=1) == 0 and b.var(ddof=1) == 0:
        diff = a.mean() - b.mean()
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


@dataclass
class TTestMatrix:
    names: list[str]
    cells: list[list[tuple[float, float] | None]] = field(default_factory=list)

    @property
    def populated(self) -> int:
        return sum(c is not None for row in self.cells for c in row)

    @property
    def omitted(self) -> int:
        return sum(c is None for row in self.cells for c in row)

    def render(self) -> list[list[str]]:
        """Display table: header row, then one row per run; ⊘ on and below the diagonal."""
        rows = [["model", *self.names]]
        for name, row in zip(self.names, self.cells):
            rows.append([name, *(OMITTED if c is None else f"{round(c[0], 2)}/ {round(c[1], 2)}" for c in row)])
        return rows

    def records(self) -> list[dict]:
        """Full-precision machine output, one record per populated cell."""
        out = []
        for i, row in enumerate(self.cells):
            for j, c in enumerate(row):
                if c is not None:
                    out.append({"row": self.names[i], "col": self.names[j], "t": c[0], "p": c[1]})
        return out


def t_test_matrix(runs: Mapping[str, Sequence[float]], threshold: float | None = None) -> TTestMatrix:
    """Pairwise t-tests in input order; ``threshold`` compares 0/1 predictions instead of scores."""
    if threshold is not None:
        runs = {n: (np.asarray(s, dtype=float) > threshold).astype(float) for n, s in runs.items()}
    names = list(runs)
    cells = [
        [t_test(runs[a], runs[b]) if j > i else None for j, b in enumerate(names)]
        for i, a in enumerate(names)
    ]
    return TTestMatrix(names, cells)


# ---------------------------------------------------------------------------
# columnar output
# ---------------------------------------------------------------------------

def write_table(rows: Sequence[Mapping], path: str | Path, columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else TABLE_COLUMNS))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, delimiter="\t", extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
