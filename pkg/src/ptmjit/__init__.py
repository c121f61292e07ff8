"""Just-in-time defect prediction with pre-trained sequence backbones and a CNN head."""

from .corpus import CommitRecord, Corpus, Patch, SplitSpec, load_corpus, write_corpus
from .encode import EncoderSpec, assemble_patches
from .head import HeadConfig, JitHead
from .model import JitModel, predict_scores
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CommitRecord", "Corpus", "Patch", "SplitSpec", "load_corpus", "write_corpus",
    "EncoderSpec", "assemble_patches", "HeadConfig", "JitHead", "JitModel", "predict_scores",
    "TrainConfig", "train",
]
