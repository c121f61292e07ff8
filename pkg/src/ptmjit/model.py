"""Backbone + head composition and single-file checkpoints."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .corpus import CommitRecord, Corpus
from .encode import Encoder, EncoderSpec, build_encoder, encode_batch
from .head import BRANCHES, HeadConfig, JitHead

CHECKPOINT_FORMAT = "ptmjit-checkpoint/1"


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


class JitModel(nn.Module):
    def __init__(self, encoder: Encoder, head: JitHead, freeze_backbone: bool = False):
        super().__init__()
        if head.cfg.embedding_dim != encoder.dim:
            raise ValueError(f"head expects d={head.cfg.embedding_dim}, encoder gives d={encoder.dim}")
        self.encoder = encoder
        self.head = head
        self.freeze_backbone = freeze_backbone
        if freeze_backbone:
            for p in encoder.parameters():
                p.requires_grad_(False)

    @classmethod
    def build(
        cls,
        spec: EncoderSpec,
        head_cfg: HeadConfig | None = None,
        corpus: Corpus | None = None,
        seed: int = 0,
        freeze_backbone: bool = False,
        **encoder_kwargs,
    ) -> "JitModel":
        torch.manual_seed(seed)
        encoder = build_encoder(spec, corpus=corpus, **encoder_kwargs)
        head_cfg = head_cfg or HeadConfig(embedding_dim=spec.embedding_dim)
        return cls(encoder, JitHead(head_cfg, seed=seed), freeze_backbone=freeze_backbone)

    @property
    def branches(self) -> str:
        return self.head.cfg.branches

    def logits(self, records: Sequence[CommitRecord], head: JitHead | None = None) -> torch.Tensor:
        head = head or self.head
        cfg = head.cfg
        C, M = encode_batch(self.encoder, records, cfg.num_patches, code=cfg.uses_code, message=cfg.uses_message)
        return head(C, M)

    def forward(self, records: Sequence[CommitRecord]) -> torch.Tensor:
        return self.logits(records)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def head_param_names(self) -> list[str]:
        return [n for n, _ in self.head.named_parameters()]

    # -- checkpoints --------------------------------------------------------

    def checkpoint(self, train_config: dict | None = None) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "encoder_spec": self.encoder.spec.to_dict(),
            "encoder_extra": self.encoder.extra_state(),
            "head_config": self.head.cfg.to_dict(),
            "freeze_backbone": self.freeze_backbone,
            "train_config_hash": config_hash(train_config or {}),
            "state_dict": {k: v.detach().cpu() for k, v in self.state_dict().items()},
        }

    def save(self, path: str | Path, train_config: dict | None = None) -> int:
        """Write the checkpoint; returns its size in bytes."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(self.checkpoint(train_config), tmp)
        tmp.replace(path)
        return path.stat().st_size

    @classmethod
    def from_checkpoint(cls, ckpt: dict, **encoder_kwargs) -> "JitModel":
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {ckpt.get('format')!r}")
        spec = EncoderSpec(**ckpt["encoder_spec"])
        encoder = build_encoder(spec, vocab=ckpt["encoder_extra"].get("vocab"), **encoder_kwargs)
        head = JitHead(HeadConfig(**ckpt["head_config"]))
        model = cls(encoder, head, freeze_backbone=ckpt.get("freeze_backbone", False))
        sd = ckpt["state_dict"]
        model.to(next(iter(sd.values())).dtype if sd else torch.get_default_dtype())
        model.load_state_dict(sd)
        return model

    @classmethod
    def load(cls, path: str | Path, **encoder_kwargs) -> "JitModel":
        return cls.from_checkpoint(torch.load(path, map_location="cpu", weights_only=False), **encoder_kwargs)


@torch.no_grad()
def predict_scores(model: JitModel, records: Sequence[CommitRecord], batch_size: int = 64,
                   mask: str | None = None) -> list[float]:
    """Inference-mode scores in (0, 1) for each record."""
    head = model.head if mask is None else model.head.restricted(mask)
    was_training = model.training
    model.eval()
    head.eval()
    out: list[float] = []
    try:
        for i in range(0, len(records), batch_size):
            out.extend(torch.sigmoid(model.logits(records[i:i + batch_size], head=head)).tolist())
    finally:
        model.train(was_training)
    return out


def forward(model: JitModel, record: CommitRecord, mask: str = "full") -> float:
    """Score one commit. ``mask`` selects which input branches feed the classifier."""
    if mask not in BRANCHES:
        raise ValueError(f"mask must be one of {BRANCHES}")
    return predict_scores(model, [record], mask=mask)[0]
