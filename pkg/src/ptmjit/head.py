"""CNN classification head over patch and message embeddings.

Shapes (batch dimension ``n`` leading everywhere):

* code matrix ``C``: ``(n, |C|, d)``; message vector ``M``: ``(n, d)``
* filters ``(K, k, d)``, filter bias ``(K,)``
* conv output ``X``: ``(n, K, |C|-k+1)``; pooled ``Z_c``: ``(n, K)``
* message projection ``Z_m = M @ W_m.T + b_m``: ``(n, h)``
* ``Z = Z_c ++ Z_m`` then ``hidden -> ReLU -> scalar`` logit

The head returns logits; scores are ``sigmoid(logit)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

BRANCHES = ("full", "code_only", "message_only")


@dataclass(frozen=True)
class HeadConfig:
    embedding_dim: int
    window_size: int = 2
    num_filters: int = 64
    hidden_dim: int = 64
    num_patches: int = 4
    dropout: float = 0.2
    branches: str = "full"
    # y = sigmoid(ReLU(w.Z + b)) exactly as a single layer; squashes scores into [0.5, 1)
    literal_output: bool = False

    def __post_init__(self):
        for name in ("embedding_dim", "window_size", "num_filters", "hidden_dim", "num_patches"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.window_size > self.num_patches:
            raise ValueError(f"window_size {self.window_size} exceeds num_patches {self.num_patches}")
        if self.branches not in BRANCHES:
            raise ValueError(f"branches must be one of {BRANCHES}")

    @property
    def uses_code(self) -> bool:
        return self.branches in ("full", "code_only")

    @property
    def uses_message(self) -> bool:
        return self.branches in ("full", "message_only")

    @property
    def fused_dim(self) -> int:
        return self.num_filters * self.uses_code + self.hidden_dim * self.uses_message

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def conv_features(C: torch.Tensor, filters: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """``X[j, i] = ReLU(sum(f_j * C[i:i+k]) + b_j)``, valid convolution with stride 1."""
    K, k, d = filters.shape
    if C.shape[-1] != d:
        raise ValueError(f"embedding dim mismatch: code matrix has {C.shape[-1]}, filters expect {d}")
    if C.shape[-2] < k:
        raise ValueError(f"need at least {k} patch rows, got {C.shape[-2]}")
    windows = C.unfold(-2, k, 1)  # (..., L, d, k)
    return F.relu(torch.einsum("...ldk,jkd->...jl", windows, filters) + bias[:, None])


def max_pool(X: torch.Tensor) -> torch.Tensor:
    if X.shape[-1] == 0:
        raise ValueError("cannot max-pool an empty feature map")
    return X.max(dim=-1).values


def message_features(M: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Affine projection, no activation."""
    return M @ weight.T + bias


def fuse(Z_c: torch.Tensor | None, Z_m: torch.Tensor | None) -> torch.Tensor:
    parts = [z for z in (Z_c, Z_m) if z is not None]
    if not parts:
        raise ValueError("at least one branch is required")
    return torch.cat(parts, dim=-1)


def classify_logit(Z, hidden_weight, hidden_bias, out_weight, out_bias) -> torch.Tensor:
    """Two-stage classifier; ``hidden_weight=None`` selects the literal single-layer form."""
    if hidden_weight is None:
        return F.relu(Z @ out_weight + out_bias)
    return F.relu(Z @ hidden_weight.T + hidden_bias) @ out_weight + out_bias


def fuse_and_classify(Z_c, Z_m, hidden_weight, hidden_bias, out_weight, out_bias) -> torch.Tensor:
    y = torch.sigmoid(classify_logit(fuse(Z_c, Z_m), hidden_weight, hidden_bias, out_weight, out_bias))
    if not torch.isfinite(y).all():
        raise FloatingPointError("non-finite score from classifier")
    return y


# ---------------------------------------------------------------------------
# module
# ---------------------------------------------------------------------------

def _uniform_fan_in(shape, fan_in: int, generator: torch.Generator | None) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return torch.empty(shape).uniform_(-bound, bound, generator=generator)


class JitHead(nn.Module):
    """Parameters are named after their role; a removed branch has no parameters at all."""

    def __init__(self, cfg: HeadConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(seed) if seed is not None else None
        K, k, d, h = cfg.num_filters, cfg.window_size, cfg.embedding_dim, cfg.hidden_dim
        if cfg.uses_code:
            self.filters = nn.Parameter(_uniform_fan_in((K, k, d), k * d, g))
            self.filter_bias = nn.Parameter(torch.zeros(K))
        if cfg.uses_message:
            self.msg_weight = nn.Parameter(_uniform_fan_in((h, d), d, g))
            self.msg_bias = nn.Parameter(torch.zeros(h))
        z = cfg.fused_dim
        if cfg.literal_output:
            self.hidden_weight = self.hidden_bias = None
            self.out_weight = nn.Parameter(_uniform_fan_in((z,), z, g))
        else:
            self.hidden_weight = nn.Parameter(_uniform_fan_in((h, z), z, g))
            self.hidden_bias = nn.Parameter(torch.zeros(h))
            self.out_weight = nn.Parameter(_uniform_fan_in((h,), h, g))
        self.out_bias = nn.Parameter(torch.zeros(()))
        self.dropout = nn.Dropout(cfg.dropout)

    def features(self, C: torch.Tensor | None, M: torch.Tensor | None) -> torch.Tensor:
        Z_c = Z_m = None
        if self.cfg.uses_code:
            Z_c = max_pool(conv_features(C, self.filters, self.filter_bias))
        if self.cfg.uses_message:
            Z_m = message_features(M, self.msg_weight, self.msg_bias)
        return fuse(Z_c, Z_m)

    def forward(self, C: torch.Tensor | None, M: torch.Tensor | None) -> torch.Tensor:
        Z = self.dropout(self.features(C, M))
        return classify_logit(Z, self.hidden_weight, self.hidden_bias, self.out_weight, self.out_bias)

    def restricted(self, branches: str) -> "JitHead":
        """Copy of this head with one input branch structurally removed.

        The classifier keeps only the columns that read the surviving branch.
        """
        if branches == self.cfg.branches:
            return self
        if self.cfg.branches != "full":
            raise ValueError(f"cannot restrict a {self.cfg.branches} head to {branches}")
        cfg = HeadConfig(**{**self.cfg.to_dict(), "branches": branches})
        new = JitHead(cfg).to(self.out_bias.dtype)
        K = self.cfg.num_filters
        cols = slice(0, K) if branches == "code_only" else slice(K, None)
        state = {}
        for name, p in self.named_parameters():
            if name.startswith("filter") and not cfg.uses_code:
                continue
            if name.startswith("msg_") and not cfg.uses_message:
                continue
            if name == "hidden_weight":
                p = p[:, cols]
            elif name == "out_weight" and cfg.literal_output:
                p = p[cols]
            state[name] = p.detach().clone()
        new.load_state_dict(state)
        new.train(self.training)
        return new
