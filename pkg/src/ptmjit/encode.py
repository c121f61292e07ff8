"""Patch windows and backbone encoders.

Every encoder maps a token sequence to a ``d``-dimensional vector. Empty
sequences (the padding patch, an empty message) map to the zero vector so that
padding stays inert under the convolution in :mod:`ptmjit.head`.
"""

from __future__ import annotations

import hashlib
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import EMPTY_PATCH, CommitRecord, Corpus, Patch

NEWLINE_TOKEN = "<nl>"
UNK_TOKEN = "<unk>"
DEFAULT_WINDOW = 4

# name -> (hub id, pooling, hidden size)
BACKBONES: dict[str, tuple[str | None, str, int]] = {
    "roberta": ("roberta-base", "first_token", 768),
    "codebert": ("microsoft/codebert-base", "first_token", 768),
    "gpt2": ("gpt2", "last_token", 768),
    "codegpt": ("microsoft/CodeGPT-small-py", "last_token", 768),
    "bart": ("facebook/bart-base", "mean", 768),
    "plbart": ("uclanlp/plbart-base", "mean", 768),
    "scratch": (None, "mean", 64),
    "toy": (None, "mean", 256),
}
PRETRAINED = ("roberta", "codebert", "gpt2", "codegpt", "bart", "plbart")


class BackboneUnavailable(RuntimeError):
    pass


def cache_root(override: str | Path | None = None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get("PTMJIT_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "ptmjit"


def offline_mode(flag: bool | None = None) -> bool:
    if flag is not None:
        return flag
    return os.environ.get("PTMJIT_OFFLINE", "").lower() in ("1", "true", "yes")


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    embedding_dim: int = 0
    max_tokens: int = 256
    max_message_tokens: int = 64
    pooling: str = ""
    hub_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.name not in BACKBONES:
            raise ValueError(f"unknown backbone {self.name!r}; valid names: {', '.join(BACKBONES)}")
        hub, pooling, dim = BACKBONES[self.name]
        if not self.embedding_dim:
            object.__setattr__(self, "embedding_dim", dim)
        if not self.pooling:
            object.__setattr__(self, "pooling", pooling)
        if not self.hub_id and hub:
            object.__setattr__(self, "hub_id", hub)
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.pooling not in ("first_token", "last_token", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.max_tokens < 1 or self.max_message_tokens < 1:
            raise ValueError("token limits must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# patch assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchWindow:
    patches: tuple[Patch, ...]

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]


def assemble_patches(record: CommitRecord, window: int = DEFAULT_WINDOW) -> PatchWindow:
    """Keep the ``window`` most recent patches, left-padding with empty patches."""
    if window < 1:
        raise ValueError("window must be >= 1")
    recent = record.patches[-window:]
    return PatchWindow((EMPTY_PATCH,) * (window - len(recent)) + tuple(recent))


def patch_tokens(patch: Patch) -> list[str]:
    """Flatten a patch into one token sequence; lines are separated by ``<nl>``."""
    tokens: list[str] = []
    for i, line in enumerate(patch.lines):
        if i:
            tokens.append(NEWLINE_TOKEN)
        tokens.extend(line.split())
    return tokens


@dataclass
class EncodedCommit:
    code_matrix: torch.Tensor  # (|C|, d)
    message_vector: torch.Tensor  # (d,)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

class Encoder(nn.Module):
    """Base class: batches of token sequences -> (n, d) tensor."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.embedding_dim

    def encode_sequences(self, seqs: Sequence[Sequence[str]], limit: int | None = None) -> torch.Tensor:
        limit = limit or self.spec.max_tokens
        seqs = [list(s)[:limit] for s in seqs]
        dtype = self._dtype()
        out = torch.zeros(len(seqs), self.dim, dtype=dtype, device=self._device())
        live = [i for i, s in enumerate(seqs) if s]
        if live:
            out[live] = self._encode_nonempty([seqs[i] for i in live]).to(dtype)
        return out

    def _encode_nonempty(self, seqs: list[list[str]]) -> torch.Tensor:
        raise NotImplementedError

    def _dtype(self) -> torch.dtype:
        for t in self.parameters():
            return t.dtype
        for t in self.buffers():
            return t.dtype
        return torch.get_default_dtype()

    def _device(self) -> torch.device:
        for t in self.parameters():
            return t.device
        for t in self.buffers():
            return t.device
        return torch.device("cpu")

    def extra_state(self) -> dict:
        """Non-tensor state needed to rebuild the encoder from a checkpoint."""
        return {}


class ToyEncoder(Encoder):
    """Frozen hash-seeded embeddings, mean-pooled.

    The vector of token ``t`` is ``default_rng(s).standard_normal(d)`` where ``s``
    is the first 8 bytes (big endian) of ``blake2b(t, digest_size=8)`` xor the
    spec seed. A sequence encodes to the mean of its token vectors.
    """

    def __init__(self, spec: EncoderSpec):
        super().__init__(spec)
        self._cache: dict[str, np.ndarray] = {}
        # carries dtype/device through .double() / .to()
        self.register_buffer("_anchor", torch.zeros(0), persistent=False)

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            seed = int.from_bytes(digest, "big") ^ self.spec.seed
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def _encode_nonempty(self, seqs):
        rows = [np.mean([self.token_vector(t) for t in s], axis=0) for s in seqs]
        return torch.from_numpy(np.stack(rows))


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        self.itos = [UNK_TOKEN] + [t for t in tokens if t != UNK_TOKEN]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def from_corpus(cls, corpus: Corpus, min_count: int = 1, max_size: int | None = None) -> "Vocab":
        counts: Counter[str] = Counter()
        for r in corpus:
            counts.update(r.message)
            for p in r.patches:
                counts.update(patch_tokens(p))
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(ranked[:max_size] if max_size else ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


class ScratchEncoder(Encoder):
    """Trainable token embeddings with mean pooling; no pre-training."""

    def __init__(self, spec: EncoderSpec, vocab: Vocab):
        super().__init__(spec)
        self.vocab = vocab
        self.embedding = nn.EmbeddingBag(len(vocab), spec.embedding_dim, mode="mean")
        g = torch.Generator().manual_seed(spec.seed)
        with torch.no_grad():
            self.embedding.weight.normal_(0.0, 1.0, generator=g)

    def _encode_nonempty(self, seqs):
        ids, offsets = [], []
        for s in seqs:
            offsets.append(len(ids))
            ids.extend(self.vocab.lookup(s))
        dev = self.embedding.weight.device
        return self.embedding(
            torch.tensor(ids, dtype=torch.long, device=dev),
            torch.tensor(offsets, dtype=torch.long, device=dev),
        )

    def extra_state(self):
        return {"vocab": self.vocab.itos}


class TransformerEncoder(Encoder):
    """A pre-trained hub model with family-specific pooling.

    ``first_token``: hidden state at position 0 (``<s>``/``[CLS]``).
    ``last_token``: hidden state of the last non-padding token.
    ``mean``: attention-masked mean over encoder outputs.
    """

    hard_limit = 512

    def __init__(self, spec: EncoderSpec, model: nn.Module, tokenizer):
        super().__init__(spec)
        self.model = model
        self.tokenizer = tokenizer
        if getattr(tokenizer, "pad_token", "x") is None:
            tokenizer.pad_token = tokenizer.eos_token
        if hasattr(tokenizer, "padding_side"):
            tokenizer.padding_side = "right"
        cfg = getattr(model, "config", None)
        hidden = getattr(cfg, "hidden_size", None) or getattr(cfg, "d_model", None)
        if hidden and hidden != spec.embedding_dim:
            raise ValueError(f"{spec.name}: hidden size {hidden} != embedding_dim {spec.embedding_dim}")

    @classmethod
    def from_hub(cls, spec: EncoderSpec, cache: str | Path | None = None, offline: bool | None = None):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise BackboneUnavailable("the 'transformers' package is required for pre-trained backbones") from exc
        cache_dir = cache_root(cache) / spec.name
        kwargs = {"cache_dir": str(cache_dir), "local_files_only": offline_mode(offline)}
        try:
            tokenizer = AutoTokenizer.from_pretrained(spec.hub_id, **kwargs)
            model = AutoModel.from_pretrained(spec.hub_id, **kwargs)
        except (OSError, ValueError) as exc:
            raise BackboneUnavailable(
                f"backbone {spec.name!r} ({spec.hub_id}) not available in {cache_dir}: {exc}"
            ) from exc
        if spec.pooling == "mean" and hasattr(model, "get_encoder"):
            model = model.get_encoder()
        return cls(spec, model, tokenizer)

    def _encode_nonempty(self, seqs):
        texts = [" ".join(t if t != NEWLINE_TOKEN else "\n" for t in s) for s in seqs]
        batch = self.tokenizer(
            texts,
            padding=True,
            truncation=True,
            max_length=self.hard_limit,
            return_tensors="pt",
        )
        dev = self._device()
        input_ids = batch["input_ids"].to(dev)
        mask = batch["attention_mask"].to(dev)
        hidden = self.model(input_ids=input_ids, attention_mask=mask).last_hidden_state
        if self.spec.pooling == "first_token":
            return hidden[:, 0]
        if self.spec.pooling == "last_token":
            last = mask.sum(dim=1) - 1
            return hidden[torch.arange(hidden.shape[0], device=dev), last]
        m = mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)


def build_encoder(
    spec: EncoderSpec,
    corpus: Corpus | None = None,
    vocab: Sequence[str] | None = None,
    cache: str | Path | None = None,
    offline: bool | None = None,
) -> Encoder:
    if spec.name == "toy":
        return ToyEncoder(spec)
    if spec.name == "scratch":
        if vocab is not None:
            voc = Vocab(vocab[1:] if vocab and vocab[0] == UNK_TOKEN else vocab)
        elif corpus is not None:
            voc = Vocab.from_corpus(corpus)
        else:
            raise ValueError("scratch backbone needs a training corpus to build its vocabulary")
        return ScratchEncoder(spec, voc)
    return TransformerEncoder.from_hub(spec, cache=cache, offline=offline)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------

def encode_patch(encoder: Encoder, patch: Patch) -> torch.Tensor:
    return encoder.encode_sequences([patch_tokens(patch)])[0]


def encode_message(encoder: Encoder, message: Sequence[str]) -> torch.Tensor:
    return encoder.encode_sequences([list(message)], limit=encoder.spec.max_message_tokens)[0]


def encode_commit_code(encoder: Encoder, window: PatchWindow) -> torch.Tensor:
    return encoder.encode_sequences([patch_tokens(p) for p in window])


def encode_commit(encoder: Encoder, record: CommitRecord, window: int = DEFAULT_WINDOW) -> EncodedCommit:
    return EncodedCommit(
        encode_commit_code(encoder, assemble_patches(record, window)),
        encode_message(encoder, record.message),
    )


def encode_batch(
    encoder: Encoder,
    records: Sequence[CommitRecord],
    window: int = DEFAULT_WINDOW,
    code: bool = True,
    message: bool = True,
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Batched encoding: ``(n, window, d)`` code tensor and ``(n, d)`` message tensor."""
    C = M = None
    if code:
        seqs = [patch_tokens(p) for r in records for p in assemble_patches(r, window)]
        C = encoder.encode_sequences(seqs).reshape(len(records), window, encoder.dim)
    if message:
        M = encoder.encode_sequences([r.message for r in records], limit=encoder.spec.max_message_tokens)
    return C, M
