"""Fine-tuning loop with min-validation-loss checkpoint selection.

The returned model is the parameter set with the lowest validation loss over
all epochs. Without a validation set the last epoch is kept.
"""

from __future__ import annotations

import copy
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch.nn import functional as F

from .corpus import Corpus
from .encode import PRETRAINED
from .metrics import accuracy, confusion, predictions, recall, write_table
from .model import JitModel, predict_scores

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float | None = None  # None: 1e-5 for pre-trained backbones, 1e-3 otherwise
    seed: int = 0
    freeze_backbone: bool = False
    loss: str = "binary_cross_entropy"
    threshold: float = 0.5
    max_grad_norm: float | None = 1.0
    class_weight: bool = False
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0,1)")
        if self.loss != "binary_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")

    def lr_for(self, backbone: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-5 if backbone in PRETRAINED else 1e-3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingTrace:
    train_loss: list[tuple[int, int, float, float]] = field(default_factory=list)  # step, epoch, loss, seconds
    val_loss: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, loss, seconds
    snapshots: list[dict] = field(default_factory=list)  # epoch, seconds, accuracy, recall
    seconds: float = 0.0
    param_count: int = 0
    checkpoint_bytes: int = 0
    checkpoint_path: str | None = None
    best_epoch: int = 0
    used_validation: bool = True

    @property
    def best_val_loss(self) -> float:
        return min((v for _, v, _ in self.val_loss), default=math.nan)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingTrace":
        d = dict(d)
        d["train_loss"] = [tuple(x) for x in d.get("train_loss", [])]
        d["val_loss"] = [tuple(x) for x in d.get("val_loss", [])]
        return cls(**d)

    def rows(self) -> list[dict]:
        out = [{"step": s, "split": "train", "loss": l, "seconds": t} for s, _, l, t in self.train_loss]
        steps_per_epoch = {}
        for s, e, _, _ in self.train_loss:
            steps_per_epoch[e] = s
        out += [{"step": steps_per_epoch.get(e, 0), "split": "val", "loss": l, "seconds": t}
                for e, l, t in self.val_loss]
        return out

    def write(self, path: str | Path) -> Path:
        return write_table(self.rows(), path, ("step", "split", "loss", "seconds"))


@dataclass(frozen=True)
class EfficiencyRecord:
    seconds: float
    param_count: int
    checkpoint_bytes: int


def _targets(records, dtype, device) -> torch.Tensor:
    return torch.tensor([r.label for r in records], dtype=dtype, device=device)


def _param_dtype(model: JitModel) -> torch.dtype:
    return model.head.out_bias.dtype


def validation_loss(model: JitModel, val: Corpus, batch_size: int = 64) -> float:
    """Mean binary cross-entropy over ``val`` in inference mode."""
    was_training = model.training
    model.eval()
    total = 0.0
    try:
        with torch.no_grad():
            recs = val.records
            for i in range(0, len(recs), batch_size):
                batch = recs[i:i + batch_size]
                logits = model(batch)
                y = _targets(batch, logits.dtype, logits.device)
                total += F.binary_cross_entropy_with_logits(logits, y, reduction="sum").item()
    finally:
        model.train(was_training)
    return total / len(val)


def train(
    model: JitModel,
    fit: Corpus,
    val: Corpus | None,
    cfg: TrainConfig,
    *,
    test: Corpus | None = None,
    checkpoint_path: str | Path | None = None,
    val_loss_fn: Callable[[JitModel, int], float] | None = None,
) -> tuple[JitModel, TrainingTrace]:
    """Train ``model`` and return the min-validation-loss checkpoint with its trace.

    ``val=None`` disables selection (last epoch wins). ``val_loss_fn(model, epoch)``
    replaces the built-in validation loss. ``test`` adds per-epoch
    accuracy/recall snapshots against elapsed time.
    """
    trace = TrainingTrace(param_count=model.param_count(), used_validation=val is not None)
    if cfg.epochs == 0:
        return model, trace
    if not len(fit):
        raise TrainingError("empty training set with epochs > 0")
    if val is not None and not len(val) and val_loss_fn is None:
        raise TrainingError("empty validation set with epochs > 0")

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr_for(model.encoder.spec.name))
    pos_weight = None
    if cfg.class_weight:
        n_pos = max(fit.defect_count, 1)
        pos_weight = torch.tensor((len(fit) - fit.defect_count) / n_pos, dtype=_param_dtype(model))

    best_loss = math.inf
    best_state = None
    step = 0
    start = None
    paused = 0.0  # snapshot evaluation is excluded from training time
    end = None

    def elapsed() -> float:
        return time.perf_counter() - start - paused

    records = fit.records
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.randperm(len(records), generator=gen).tolist()
        for i in range(0, len(order), cfg.batch_size):
            if start is None:
                start = time.perf_counter()
            batch = [records[j] for j in order[i:i + cfg.batch_size]]
            logits = model(batch)
            y = _targets(batch, logits.dtype, logits.device)
            loss = F.binary_cross_entropy_with_logits(logits, y, pos_weight=pos_weight)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step + 1}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(params, cfg.max_grad_norm)
            opt.step()
            step += 1
            trace.train_loss.append((step, epoch, loss.item(), elapsed()))

        if val is not None:
            vl = val_loss_fn(model, epoch) if val_loss_fn else validation_loss(model, val, cfg.eval_batch_size)
            if not math.isfinite(vl):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            trace.val_loss.append((epoch, vl, elapsed()))
            improved = vl < best_loss
            if improved:
                best_loss = vl
        else:
            improved = True
        if improved:
            best_state = copy.deepcopy(model.state_dict())
            trace.best_epoch = epoch
            if checkpoint_path is not None:
                trace.checkpoint_bytes = model.save(checkpoint_path, cfg.to_dict())
                trace.checkpoint_path = str(checkpoint_path)
            end = elapsed()
        log.info("epoch %d: train %.4f val %s", epoch, trace.train_loss[-1][2],
                 f"{trace.val_loss[-1][1]:.4f}" if trace.val_loss else "-")

        if test is not None and len(test):
            t0 = time.perf_counter()
            at = elapsed()
            scores = predict_scores(model, test.records, cfg.eval_batch_size)
            c = confusion(predictions([r.commit_id for r in test], scores, test.labels), cfg.threshold)
            trace.snapshots.append({
                "epoch": epoch,
                "seconds": at,
                "accuracy": accuracy(c),
                "recall": recall(c),
            })
            paused += time.perf_counter() - t0

    trace.seconds = end if end is not None else elapsed()
    model.load_state_dict(best_state)
    model.eval()
    return model, trace


def checkpoint_size(model: JitModel) -> int:
    buf = io.BytesIO()
    torch.save(model.checkpoint(), buf)
    return buf.tell()


def measure(model: JitModel, trace: TrainingTrace) -> EfficiencyRecord:
    if trace.checkpoint_path and Path(trace.checkpoint_path).is_file():
        size = Path(trace.checkpoint_path).stat().st_size
    else:
        size = checkpoint_size(model)
    return EfficiencyRecord(trace.seconds, model.param_count(), size)
