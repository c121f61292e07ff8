"""Experiment grid: full fine-tuning, ablation and few-shot runs, plus run comparison.

Every cell of the ``backbones x datasets x scales x seeds`` grid writes its own
directory under ``<out>/<plan-hash>/<backbone>/<dataset>/<scenario-tag>/``
with ``result.json``, ``scores.tsv``, ``trace.tsv`` and ``best.ckpt``. A cell
whose ``result.json`` already records success under the same config hash is
loaded instead of re-run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import torch
import yaml

from .corpus import Corpus, SplitSpec, carve_validation, dumps_record, few_shot_sample, load_corpus, split
from .encode import BACKBONES, EncoderSpec
from .head import HeadConfig
from .metrics import MetricsReport, TTestMatrix, evaluate, predictions, t_test_matrix, write_table
from .model import JitModel, config_hash, predict_scores
from .synthetic import separable_corpus
from .train import EfficiencyRecord, TrainConfig, TrainingTrace, measure, train

log = logging.getLogger(__name__)

SCENARIOS = ("full", "ablate_msg", "ablate_code", "few_shot")
DEFAULT_SCALES = (0, 10, 100, 500, 1000, 2000)
_BRANCHES = {"full": "full", "few_shot": "full", "ablate_msg": "code_only", "ablate_code": "message_only"}
METRICS_COLUMNS = ("model", "auc", "accuracy", "precision", "recall", "f1",
                   "dataset", "scenario", "scale", "seed", "status", "undefined")
_HEAD_KEYS = {"window_size", "num_filters", "hidden_dim", "dropout", "literal_output", "num_patches"}
_ENCODER_KEYS = {"embedding_dim", "max_tokens", "max_message_tokens", "pooling", "hub_id"}


class PlanError(ValueError):
    """Invalid plan; the message names the offending key path."""


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str | None = None
    synthetic: Mapping[str, Any] | None = None

    def load(self) -> Corpus:
        if self.synthetic is not None:
            return separable_corpus(name=self.name, **dict(self.synthetic))
        return load_corpus(self.path, name=self.name)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.path is not None:
            d["path"] = self.path
        if self.synthetic is not None:
            d["synthetic"] = dict(self.synthetic)
        return d


@dataclass
class ExperimentPlan:
    backbones: list[str]
    datasets: list[DatasetSpec]
    scenario: str = "full"
    scales: list[int] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    train: TrainConfig = field(default_factory=TrainConfig)
    head: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    split: SplitSpec = field(default_factory=SplitSpec)
    validation_fraction: float = 0.1
    min_validation_size: int = 50
    epochs_multiplier: float = 1.0
    snapshots: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.backbones:
            raise PlanError("backbones: must be non-empty")
        for i, b in enumerate(self.backbones):
            if b not in BACKBONES:
                raise PlanError(f"backbones[{i}]: unknown backbone {b!r}; valid names: {', '.join(BACKBONES)}")
        if not self.datasets:
            raise PlanError("datasets: must be non-empty")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise PlanError("datasets: names must be unique")
        if self.scenario not in SCENARIOS:
            raise PlanError(f"scenario: must be one of {', '.join(SCENARIOS)}, got {self.scenario!r}")
        if self.scales and self.scenario != "few_shot":
            raise PlanError("scales: only valid with scenario few_shot")
        if self.scenario == "few_shot" and not self.scales:
            raise PlanError("scales: required for scenario few_shot")
        if any((not isinstance(n, int)) or n < 0 for n in self.scales):
            raise PlanError("scales: must be non-negative integers")
        if not self.seeds:
            raise PlanError("seeds: must be non-empty")
        if not 0 < self.validation_fraction < 1:
            raise PlanError("validation_fraction: must lie in (0,1)")
        if self.epochs_multiplier <= 0:
            raise PlanError("epochs_multiplier: must be positive")
        for k in self.head:
            if k not in _HEAD_KEYS:
                raise PlanError(f"head.{k}: unknown key; valid keys: {', '.join(sorted(_HEAD_KEYS))}")
        for k in self.encoder:
            if k not in _ENCODER_KEYS:
                raise PlanError(f"encoder.{k}: unknown key; valid keys: {', '.join(sorted(_ENCODER_KEYS))}")

    def to_dict(self) -> dict:
        return {
            "backbones": list(self.backbones),
            "datasets": [d.to_dict() for d in self.datasets],
            "scenario": self.scenario,
            "scales": list(self.scales),
            "seeds": list(self.seeds),
            "train": self.train.to_dict(),
            "head": dict(self.head),
            "encoder": dict(self.encoder),
            "split": asdict(self.split),
            "validation_fraction": self.validation_fraction,
            "min_validation_size": self.min_validation_size,
            "epochs_multiplier": self.epochs_multiplier,
            "snapshots": self.snapshots,
        }

    @property
    def plan_hash(self) -> str:
        return config_hash(self.to_dict())

    def cells(self) -> list["Cell"]:
        scales = self.scales if self.scenario == "few_shot" else [None]
        return [
            Cell(b, d.name, self.scenario, n, s)
            for b in self.backbones
            for d in self.datasets
            for n in scales
            for s in self.seeds
        ]

    def with_scenario(self, scenario: str, scales: Sequence[int] | None = None) -> "ExperimentPlan":
        return replace(self, scenario=scenario, scales=list(scales or []))

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path | None = None) -> "ExperimentPlan":
        if not isinstance(raw, Mapping):
            raise PlanError("plan: top level must be a mapping")
        known = {"backbones", "datasets", "scenario", "scales", "seeds", "train", "head", "encoder", "split",
                 "validation_fraction", "min_validation_size", "epochs_multiplier", "snapshots"}
        for k in raw:
            if k not in known:
                raise PlanError(f"{k}: unknown key; valid keys: {', '.join(sorted(known))}")
        datasets = []
        for i, d in enumerate(raw.get("datasets") or []):
            if not isinstance(d, Mapping) or "name" not in d:
                raise PlanError(f"datasets[{i}]: needs a name and a path or synthetic block")
            if ("path" in d) == ("synthetic" in d):
                raise PlanError(f"datasets[{i}]: give exactly one of path / synthetic")
            path = d.get("path")
            if path is not None and base_dir is not None and not Path(path).is_absolute():
                path = str((Path(base_dir) / path).resolve())
            datasets.append(DatasetSpec(str(d["name"]), path, d.get("synthetic")))
        try:
            train_cfg = TrainConfig(**(raw.get("train") or {}))
        except TypeError as exc:
            raise PlanError(f"train: {exc}") from None
        except ValueError as exc:
            raise PlanError(f"train: {exc}") from None
        try:
            split_spec = SplitSpec(**(raw.get("split") or {}))
        except TypeError as exc:
            raise PlanError(f"split: {exc}") from None
        backbones = raw.get("backbones") or []
        if isinstance(backbones, str):
            backbones = [backbones]
        return cls(
            backbones=list(backbones),
            datasets=datasets,
            scenario=raw.get("scenario", "full"),
            scales=list(raw.get("scales") or []),
            seeds=list(raw.get("seeds") or [0]),
            train=train_cfg,
            head=dict(raw.get("head") or {}),
            encoder=dict(raw.get("encoder") or {}),
            split=split_spec,
            validation_fraction=float(raw.get("validation_fraction", 0.1)),
            min_validation_size=int(raw.get("min_validation_size", 50)),
            epochs_multiplier=float(raw.get("epochs_multiplier", 1.0)),
            snapshots=bool(raw.get("snapshots", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise PlanError(f"{path}: {exc}") from None
        return cls.from_dict(raw or {}, base_dir=path.parent)


@dataclass(frozen=True)
class Cell:
    backbone: str
    dataset: str
    scenario: str
    scale: int | None = None
    seed: int = 0

    @property
    def tag(self) -> str:
        tag = self.scenario
        if self.scale is not None:
            tag += f"-n{self.scale}"
        return f"{tag}-s{self.seed}"

    @property
    def relpath(self) -> Path:
        return Path(self.backbone) / self.dataset / self.tag

    @property
    def label(self) -> str:
        return f"{self.backbone}/{self.dataset}/{self.tag}"


@dataclass
class CellResult:
    cell: Cell
    status: str  # "ok" | "failed"
    config_hash: str
    error: str | None = None
    metrics: MetricsReport | None = None
    trace: TrainingTrace | None = None
    efficiency: EfficiencyRecord | None = None
    ids: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    test_hash: str = ""
    train_size: int = 0
    used_validation: bool = True
    param_names: list[str] = field(default_factory=list)
    fused_dim: int = 0
    skipped: bool = False  # loaded from an earlier run

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "cell": asdict(self.cell),
            "status": self.status,
            "config_hash": self.config_hash,
            "error": self.error,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "trace": self.trace.to_dict() if self.trace else None,
            "efficiency": asdict(self.efficiency) if self.efficiency else None,
            "ids": self.ids,
            "scores": self.scores,
            "labels": self.labels,
            "test_hash": self.test_hash,
            "train_size": self.train_size,
            "used_validation": self.used_validation,
            "param_names": self.param_names,
            "fused_dim": self.fused_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(
            cell=Cell(**d["cell"]),
            status=d["status"],
            config_hash=d["config_hash"],
            error=d.get("error"),
            metrics=MetricsReport.from_dict(d["metrics"]) if d.get("metrics") else None,
            trace=TrainingTrace.from_dict(d["trace"]) if d.get("trace") else None,
            efficiency=EfficiencyRecord(**d["efficiency"]) if d.get("efficiency") else None,
            ids=d.get("ids", []),
            scores=d.get("scores", []),
            labels=d.get("labels", []),
            test_hash=d.get("test_hash", ""),
            train_size=d.get("train_size", 0),
            used_validation=d.get("used_validation", True),
            param_names=d.get("param_names", []),
            fused_dim=d.get("fused_dim", 0),
        )

    @classmethod
    def load(cls, cell_dir: str | Path) -> "CellResult":
        return cls.from_dict(json.loads((Path(cell_dir) / "result.json").read_text(encoding="utf-8")))


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    out_dir: Path
    cells: list[CellResult]

    def ok_cells(self) -> list[CellResult]:
        return [c for c in self.cells if c.ok]

    def failed_cells(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def get(self, backbone: str, dataset: str, scale: int | None = None, seed: int | None = None) -> CellResult:
        for c in self.cells:
            if (c.cell.backbone, c.cell.dataset) == (backbone, dataset) and c.cell.scale == scale \
                    and (seed is None or c.cell.seed == seed):
                return c
        raise KeyError((backbone, dataset, scale, seed))


# ---------------------------------------------------------------------------
# single cell
# ---------------------------------------------------------------------------

def hash_test_split(test: Corpus) -> str:
    h = hashlib.sha256()
    for r in test:
        h.update(f"{r.commit_id}\t{r.label}\n".encode("utf-8"))
    return h.hexdigest()[:16]


def corpus_fingerprint(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for r in corpus:
        h.update(dumps_record(r).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


def cell_config(plan: ExperimentPlan, cell: Cell, data_hash: str = "") -> dict:
    """Everything that determines a cell's result; ``data_hash`` fingerprints file or in-memory corpora."""
    ds = next(d for d in plan.datasets if d.name == cell.dataset)
    return {
        "cell": asdict(cell),
        "dataset": ds.to_dict(),
        "data": data_hash,
        "train": plan.train.to_dict(),
        "head": plan.head,
        "encoder": plan.encoder,
        "split": asdict(plan.split),
        "validation_fraction": plan.validation_fraction,
        "min_validation_size": plan.min_validation_size,
        "epochs_multiplier": plan.epochs_multiplier,
        "snapshots": plan.snapshots,
    }


def _encoder_spec(plan: ExperimentPlan, backbone: str, seed: int) -> EncoderSpec:
    return EncoderSpec(backbone, seed=seed, **plan.encoder)


def run_cell(
    plan: ExperimentPlan,
    cell: Cell,
    out_dir: str | Path,
    corpus: Corpus | None = None,
    cache: str | Path | None = None,
    offline: bool | None = None,
    data_hash: str = "",
) -> CellResult:
    """Train and evaluate one grid cell. Failures come back as ``status="failed"``."""
    cfg_hash = config_hash(cell_config(plan, cell, data_hash))
    cell_dir = Path(out_dir) / cell.relpath
    try:
        result = _run_cell(plan, cell, cell_dir, cfg_hash, corpus, cache, offline)
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, never dropped
        log.error("cell %s failed: %s", cell.label, exc)
        result = CellResult(cell, "failed", cfg_hash, error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=1), encoding="utf-8")
    return result


def _run_cell(plan, cell, cell_dir, cfg_hash, corpus, cache, offline) -> CellResult:
    if corpus is None:
        corpus = next(d for d in plan.datasets if d.name == cell.dataset).load()
    train_split, test = split(corpus, plan.split)
    if cell.scenario == "few_shot":
        pool = few_shot_sample(train_split, cell.scale, seed=cell.seed)
    else:
        pool = train_split
    if len(pool) >= plan.min_validation_size:
        fit, val = carve_validation(pool, plan.validation_fraction, seed=cell.seed)
    else:
        fit, val = pool, None

    spec = _encoder_spec(plan, cell.backbone, cell.seed)
    head_cfg = HeadConfig(embedding_dim=spec.embedding_dim, branches=_BRANCHES[cell.scenario], **plan.head)
    model = JitModel.build(
        spec, head_cfg,
        corpus=fit if len(fit) else train_split,
        seed=cell.seed,
        freeze_backbone=plan.train.freeze_backbone,
        cache=cache, offline=offline,
    )
    epochs = round(plan.train.epochs * plan.epochs_multiplier) if len(fit) else 0
    cfg = replace(plan.train, epochs=epochs, seed=cell.seed)
    log.info("cell %s: fit=%d val=%s test=%d epochs=%d", cell.label, len(fit),
             len(val) if val is not None else "-", len(test), epochs)
    model, trace = train(
        model, fit, val, cfg,
        test=test if plan.snapshots else None,
        checkpoint_path=cell_dir / "best.ckpt" if epochs else None,
    )
    scores = predict_scores(model, test.records, cfg.eval_batch_size)
    ids = [r.commit_id for r in test]
    metrics = evaluate(predictions(ids, scores, test.labels), cfg.threshold)
    eff = measure(model, trace)

    cell_dir.mkdir(parents=True, exist_ok=True)
    write_table([{"id": i, "score": s, "label": y} for i, s, y in zip(ids, scores, test.labels)],
                cell_dir / "scores.tsv")
    trace.write(cell_dir / "trace.tsv")
    if trace.snapshots:
        write_table(trace.snapshots, cell_dir / "snapshots.tsv")
    return CellResult(
        cell, "ok", cfg_hash,
        metrics=metrics, trace=trace, efficiency=eff,
        ids=ids, scores=scores, labels=test.labels,
        test_hash=hash_test_split(test),
        train_size=len(pool),
        used_validation=val is not None,
        param_names=model.head_param_names(),
        fused_dim=head_cfg.fused_dim,
    )


def _run_cell_job(args):
    plan_dict, cell, out_dir, cache, offline, data_hash = args
    torch.set_num_threads(1)
    plan = ExperimentPlan.from_dict(plan_dict)
    return run_cell(plan, cell, out_dir, cache=cache, offline=offline, data_hash=data_hash)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def _completed(cell_dir: Path, cfg_hash: str) -> CellResult | None:
    path = cell_dir / "result.json"
    if not path.is_file():
        return None
    try:
        prev = CellResult.load(cell_dir)
    except (ValueError, KeyError, TypeError):
        return None
    if prev.ok and prev.config_hash == cfg_hash:
        prev.skipped = True
        return prev
    return None


def run_plan(
    plan: ExperimentPlan,
    out: str | Path = "runs",
    workers: int = 1,
    cache: str | Path | None = None,
    offline: bool | None = None,
    corpora: Mapping[str, Corpus] | None = None,
) -> ExperimentReport:
    out_dir = Path(out) / plan.plan_hash
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=1), encoding="utf-8")

    # corpora are loaded up front so file and in-memory data can be fingerprinted into the cell hash
    loaded: dict[str, Corpus] = {}
    load_errors: dict[str, str] = {}
    fingerprints: dict[str, str] = {}
    for ds in plan.datasets:
        if corpora is not None and ds.name in corpora:
            loaded[ds.name] = corpora[ds.name]
        elif ds.synthetic is not None:
            fingerprints[ds.name] = ""  # fully determined by its generator settings
            continue
        else:
            try:
                loaded[ds.name] = ds.load()
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                load_errors[ds.name] = f"dataset load failed: {exc}"
                continue
        fingerprints[ds.name] = corpus_fingerprint(loaded[ds.name])

    cells = plan.cells()
    results: dict[Cell, CellResult] = {}
    todo = []
    for cell in cells:
        cfg_hash = config_hash(cell_config(plan, cell, fingerprints.get(cell.dataset, "")))
        if cell.dataset in load_errors:
            results[cell] = CellResult(cell, "failed", cfg_hash, error=load_errors[cell.dataset])
            continue
        prev = _completed(out_dir / cell.relpath, cfg_hash)
        if prev is not None:
            log.info("cell %s: already complete, skipping", cell.label)
            results[cell] = prev
        else:
            todo.append(cell)

    if workers > 1 and len(todo) > 1 and corpora is None:
        jobs = [(plan.to_dict(), c, out_dir, cache, offline, fingerprints[c.dataset]) for c in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell, res in zip(todo, pool.map(_run_cell_job, jobs)):
                results[cell] = res
    else:
        for cell in todo:
            corpus = loaded.get(cell.dataset)
            if corpus is None:
                corpus = next(d for d in plan.datasets if d.name == cell.dataset).load()
                loaded[cell.dataset] = corpus
            results[cell] = run_cell(plan, cell, out_dir, corpus=corpus, cache=cache, offline=offline,
                                     data_hash=fingerprints[cell.dataset])

    report = ExperimentReport(plan, out_dir, [results[c] for c in cells])
    _check_test_constancy(report)
    write_aggregates(report)
    return report


def _check_test_constancy(report: ExperimentReport) -> None:
    by_ds: dict[str, set[str]] = {}
    for c in report.ok_cells():
        by_ds.setdefault(c.cell.dataset, set()).add(c.test_hash)
    bad = {d: h for d, h in by_ds.items() if len(h) > 1}
    if bad:
        raise RuntimeError(f"test split differs between cells of the same dataset: {bad}")


def run_full(plan: ExperimentPlan, out: str | Path = "runs", **kw) -> ExperimentReport:
    return run_plan(plan.with_scenario("full"), out, **kw)


def run_ablation(plan: ExperimentPlan, drop: str, out: str | Path = "runs", **kw) -> ExperimentReport:
    if drop not in ("msg", "code"):
        raise ValueError("drop must be 'msg' or 'code'")
    return run_plan(plan.with_scenario(f"ablate_{drop}"), out, **kw)


def run_few_shot(plan: ExperimentPlan, out: str | Path = "runs", scales: Sequence[int] | None = None,
                 **kw) -> ExperimentReport:
    scales = list(scales or plan.scales or DEFAULT_SCALES)
    return run_plan(plan.with_scenario("few_shot", scales), out, **kw)


# ---------------------------------------------------------------------------
# aggregation and comparison
# ---------------------------------------------------------------------------

def metrics_rows(cells: Sequence[CellResult]) -> list[dict]:
    rows = []
    for c in cells:
        row = {
            "model": c.cell.backbone, "dataset": c.cell.dataset, "scenario": c.cell.scenario,
            "scale": c.cell.scale, "seed": c.cell.seed, "status": c.status,
        }
        if c.metrics:
            row.update(c.metrics.as_row(c.cell.backbone))
            row["undefined"] = ",".join(c.metrics.undefined)
        rows.append(row)
    return rows


def seed_summary(cells: Sequence[CellResult]) -> list[dict]:
    """Mean and standard deviation over seeds for each (model, dataset, scenario, scale)."""
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        if c.ok:
            groups.setdefault((c.cell.backbone, c.cell.dataset, c.cell.scenario, c.cell.scale), []).append(c)
    rows = []
    for (b, d, s, n), group in groups.items():
        row = {"model": b, "dataset": d, "scenario": s, "scale": n, "seeds": len(group)}
        for k in ("auc", "accuracy", "precision", "recall", "f1"):
            vals = [getattr(g.metrics, k) for g in group if not math.isnan(getattr(g.metrics, k))]
            row[f"{k}_mean"] = statistics.fmean(vals) if vals else math.nan
            row[f"{k}_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def write_aggregates(report: ExperimentReport) -> None:
    out = report.out_dir
    write_table(metrics_rows(report.cells), out / "metrics.tsv", METRICS_COLUMNS)
    write_table(
        [{"cell": c.cell.label, "status": c.status, "config_hash": c.config_hash,
          "error": (c.error or "").splitlines()[0] if c.error else ""} for c in report.cells],
        out / "cells.tsv", ("cell", "status", "config_hash", "error"),
    )
    write_table(
        [{"model": c.cell.backbone, "dataset": c.cell.dataset, "scenario": c.cell.tag,
          "seconds": c.efficiency.seconds, "param_count": c.efficiency.param_count,
          "checkpoint_bytes": c.efficiency.checkpoint_bytes} for c in report.ok_cells()],
        out / "efficiency.tsv", ("model", "dataset", "scenario", "seconds", "param_count", "checkpoint_bytes"),
    )
    if len(report.plan.seeds) > 1:
        write_table(seed_summary(report.cells), out / "seed_summary.tsv")


@dataclass
class ComparisonBundle:
    ttest: TTestMatrix
    efficiency: list[dict]
    loss_curves: dict[str, list[tuple[int, float]]]
    val_curves: dict[str, list[tuple[int, float]]]
    accuracy_recall: dict[str, list[dict]]

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        rendered = self.ttest.render()
        (out / "ttest.tsv").write_text("\n".join("\t".join(r) for r in rendered) + "\n", encoding="utf-8")
        write_table(self.ttest.records(), out / "ttest_full.tsv", ("row", "col", "t", "p"))
        write_table(self.efficiency, out / "efficiency.tsv", ("model", "seconds", "param_count", "checkpoint_bytes"))
        write_table([{"model": m, "step": s, "loss": l} for m, pts in self.loss_curves.items() for s, l in pts],
                    out / "loss_curves.tsv", ("model", "step", "loss"))
        write_table([{"model": m, "epoch": e, "loss": l} for m, pts in self.val_curves.items() for e, l in pts],
                    out / "val_curves.tsv", ("model", "epoch", "loss"))
        write_table([{"model": m, **p} for m, pts in self.accuracy_recall.items() for p in pts],
                    out / "accuracy_recall.tsv", ("model", "epoch", "seconds", "accuracy", "recall"))
        return out


def _run_names(cells: Sequence[CellResult]) -> list[str]:
    names = [c.cell.backbone for c in cells]
    if len(set(names)) == len(names):
        return names
    return [c.cell.label for c in cells]


def compare_runs(
    reports: Sequence[CellResult] | Mapping[str, CellResult],
    threshold: float | None = None,
) -> ComparisonBundle:
    """t-test matrix over test-set scores plus efficiency and training-curve series.

    All runs must be scored on the same test set. ``threshold`` switches the
    t-test to thresholded 0/1 predictions instead of raw scores.
    """
    if isinstance(reports, Mapping):
        names, cells = list(reports), list(reports.values())
    else:
        cells = list(reports)
        names = _run_names(cells)
    for n, c in zip(names, cells):
        if not c.ok:
            raise ValueError(f"run {n} did not complete: {c.error}")
    if len({len(c.scores) for c in cells}) > 1:
        raise ValueError("score vectors differ in length; runs were evaluated on different test sets: "
                         + ", ".join(f"{n}={len(c.scores)}" for n, c in zip(names, cells)))
    hashes = {c.test_hash for c in cells if c.test_hash}
    if len(hashes) > 1:
        raise ValueError("runs were evaluated on different test sets (test hash mismatch)")
    return ComparisonBundle(
        ttest=t_test_matrix({n: c.scores for n, c in zip(names, cells)}, threshold),
        efficiency=[{"model": n, **asdict(c.efficiency)} for n, c in zip(names, cells) if c.efficiency],
        loss_curves={n: [(s, l) for s, _, l, _ in c.trace.train_loss] for n, c in zip(names, cells) if c.trace},
        val_curves={n: [(e, l) for e, l, _ in c.trace.val_loss] for n, c in zip(names, cells) if c.trace},
        accuracy_recall={n: list(c.trace.snapshots) for n, c in zip(names, cells) if c.trace},
    )


def load_report(report_dir: str | Path) -> ExperimentReport:
    report_dir = Path(report_dir)
    plan_path = report_dir / "plan.json"
    if not plan_path.is_file():
        raise FileNotFoundError(f"{report_dir}: no plan.json (not a report directory)")
    plan = ExperimentPlan.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))
    cells = []
    for cell in plan.cells():
        cell_dir = report_dir / cell.relpath
        if (cell_dir / "result.json").is_file():
            cells.append(CellResult.load(cell_dir))
        else:
            cells.append(CellResult(cell, "failed", "", error="missing result.json"))
    return ExperimentReport(plan, report_dir, cells)
