"""Commit datasets: canonical JSONL storage, splits and balanced few-shot sampling.

A canonical corpus file holds one JSON object per line::

    {"id": "...", "label": 0, "msg": ["fix", "leak"], "patches": [["added: int x ;", ...], ...]}

Patches are ordered oldest first; every changed line starts with the marker
token ``added:`` or ``removed:``.
"""

from __future__ import annotations

import json
import math
import pickle
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

MARKERS = ("added:", "removed:")


class CorpusError(ValueError):
    """Raised for unreadable or invalid corpus data."""


@dataclass(frozen=True)
class Patch:
    lines: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def is_empty(self) -> bool:
        return not self.lines


EMPTY_PATCH = Patch(())


@dataclass(frozen=True)
class CommitRecord:
    commit_id: str
    label: int
    message: tuple[str, ...] = ()
    patches: tuple[Patch, ...] = ()

    def __post_init__(self):
        if self.label not in (0, 1):
            raise CorpusError(f"commit {self.commit_id!r}: label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "message", tuple(self.message))
        object.__setattr__(
            self,
            "patches",
            tuple(p if isinstance(p, Patch) else Patch(tuple(p)) for p in self.patches),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.commit_id,
            "label": self.label,
            "msg": list(self.message),
            "patches": [list(p.lines) for p in self.patches],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "CommitRecord":
        missing = {"id", "label", "msg", "patches"} - set(obj)
        if missing:
            raise CorpusError(f"missing field(s): {', '.join(sorted(missing))}")
        label = obj["label"]
        if isinstance(label, bool) or not isinstance(label, int) or label not in (0, 1):
            raise CorpusError(f"label outside {{0,1}}: {label!r}")
        msg = obj["msg"]
        if not isinstance(msg, list) or not all(isinstance(t, str) for t in msg):
            raise CorpusError("msg must be an array of strings")
        patches = obj["patches"]
        if not isinstance(patches, list):
            raise CorpusError("patches must be an array")
        parsed = []
        for pi, patch in enumerate(patches):
            if not isinstance(patch, list) or not patch:
                raise CorpusError(f"patch {pi} must be a non-empty array of lines")
            for line in patch:
                if not isinstance(line, str) or line.split(" ", 1)[0] not in MARKERS:
                    raise CorpusError(f"patch {pi}: line must start with 'added:' or 'removed:': {line!r}")
            parsed.append(Patch(tuple(patch)))
        return cls(str(obj["id"]), label, tuple(msg), tuple(parsed))


@dataclass(frozen=True)
class Corpus:
    name: str
    records: tuple[CommitRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def total_count(self) -> int:
        return len(self.records)

    @property
    def defect_count(self) -> int:
        return sum(r.label for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> list[int]:
        return [r.label for r in self.records]

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Corpus":
        return Corpus(name or self.name, tuple(self.records[i] for i in indices))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    mode: str = "chronological"  # or "shuffled"


def dumps_record(record: CommitRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False, separators=(",", ":"))


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise CorpusError("record must be a JSON object")
                records.append(CommitRecord.from_json(obj))
            except (json.JSONDecodeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise CorpusError(f"{path}: no records")
    return Corpus(name or path.stem, tuple(records))


def write_corpus(corpus: Corpus | Sequence[CommitRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in corpus:
            fh.write(dumps_record(record))
            fh.write("\n")
    return path


def split(corpus: Corpus, spec: SplitSpec = SplitSpec()) -> tuple[Corpus, Corpus]:
    """80/20-style train/test split. Chronological mode keeps file order."""
    if not 0 < spec.train_fraction < 1:
        raise CorpusError(f"train_fraction must lie in (0,1), got {spec.train_fraction}")
    if not corpus.records:
        raise CorpusError("cannot split an empty corpus")
    n = len(corpus)
    n_train = math.floor(spec.train_fraction * n)
    order = list(range(n))
    if spec.mode == "shuffled":
        random.Random(spec.seed).shuffle(order)
    elif spec.mode != "chronological":
        raise CorpusError(f"unknown split mode {spec.mode!r}")
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return (
        corpus.subset(train_idx, f"{corpus.name}-train"),
        corpus.subset(test_idx, f"{corpus.name}-test"),
    )


def carve_validation(train: Corpus, fraction: float = 0.1, seed: int = 0) -> tuple[Corpus, Corpus]:
    if not 0 < fraction < 1:
        raise CorpusError(f"validation fraction must lie in (0,1), got {fraction}")
    n_val = math.floor(fraction * len(train))
    order = list(range(len(train)))
    random.Random(seed).shuffle(order)
    val_idx = set(order[:n_val])
    fit = [i for i in range(len(train)) if i not in val_idx]
    return train.subset(fit, f"{train.name}-fit"), train.subset(sorted(val_idx), f"{train.name}-val")


def few_shot_sample(train: Corpus, n: int, seed: int = 0) -> Corpus:
    """Balanced subsample of ``n`` records: ceil(n/2) defective, floor(n/2) clean."""
    if n < 0:
        raise CorpusError(f"sample size must be >= 0, got {n}")
    name = f"{train.name}-{n}shot"
    if n == 0:
        return Corpus(name, ())
    n_pos, n_neg = (n + 1) // 2, n // 2
    pos = [i for i, r in enumerate(train.records) if r.label == 1]
    neg = [i for i, r in enumerate(train.records) if r.label == 0]
    if len(pos) < n_pos or len(neg) < n_neg:
        raise CorpusError(
            f"insufficient class records for {n}-shot sample: need {n_pos} defective / {n_neg} clean, "
            f"have {len(pos)} / {len(neg)}"
        )
    rng = random.Random(seed)
    chosen = rng.sample(pos, n_pos) + rng.sample(neg, n_neg)
    return train.subset(sorted(chosen), name)


# ---------------------------------------------------------------------------
# legacy DeepJIT / CC2Vec pickles
# ---------------------------------------------------------------------------

def _legacy_lines(file_obj: Any) -> list[str]:
    """Normalise one changed file of a legacy commit into marked lines."""
    lines: list[str] = []
    if isinstance(file_obj, dict):
        for key, marker in (("added_code", "added:"), ("removed_code", "removed:")):
            for line in file_obj.get(key, []) or []:
                text = " ".join(str(line).split())
                if text:
                    lines.append(f"{marker} {text}")
        if not {"added_code", "removed_code"} & set(file_obj):
            raise CorpusError(f"file entry lacks added_code/removed_code keys: {sorted(file_obj)}")
        return lines
    if isinstance(file_obj, str):
        file_obj = file_obj.splitlines()
    if not isinstance(file_obj, (list, tuple)):
        raise CorpusError(f"unsupported file entry type {type(file_obj).__name__}")
    for line in file_obj:
        text = " ".join(str(line).split())
        if not text:
            continue
        head = text.split(" ", 1)[0]
        if head in MARKERS:
            lines.append(text)
        elif text[0] == "+":
            rest = text[1:].strip()
            if rest:
                lines.append(f"added: {rest}")
        elif text[0] == "-":
            rest = text[1:].strip()
            if rest:
                lines.append(f"removed: {rest}")
        else:
            raise CorpusError(f"changed line without +/- or marker: {text[:60]!r}")
    return lines


def records_from_legacy(data: Any) -> list[CommitRecord]:
    """Parse the ``[ids, labels, msgs, codes]`` layout of the original releases."""
    if isinstance(data, dict):
        try:
            data = [data[k] for k in ("ids", "labels", "msgs", "codes")]
        except KeyError as exc:
            raise CorpusError(f"legacy dict missing key {exc}") from None
    if not isinstance(data, (list, tuple)) or len(data) < 4:
        raise CorpusError("legacy data must be a sequence of [ids, labels, msgs, codes]")
    ids, labels, msgs, codes = data[:4]
    if not len(ids) == len(labels) == len(msgs) == len(codes):
        raise CorpusError(
            f"legacy columns differ in length: ids={len(ids)} labels={len(labels)} "
            f"msgs={len(msgs)} codes={len(codes)}"
        )
    records = []
    for i, (cid, label, msg, code) in enumerate(zip(ids, labels, msgs, codes)):
        try:
            label = int(label)
            tokens = msg.split() if isinstance(msg, str) else [str(t) for t in msg]
            patches = []
            for file_obj in code:
                lines = _legacy_lines(file_obj)
                if lines:
                    patches.append(Patch(tuple(lines)))
            records.append(CommitRecord(str(cid), label, tuple(tokens), tuple(patches)))
        except (CorpusError, TypeError, ValueError) as exc:
            raise CorpusError(f"legacy record {i} (id={cid!r}): {exc}") from None
    return records


def convert_legacy(src: str | Path, dst: str | Path) -> Corpus:
    src = Path(src)
    if not src.is_file():
        raise CorpusError(f"legacy file not found: {src}")
    with src.open("rb") as fh:
        try:
            data = pickle.load(fh)
        except UnicodeDecodeError:
            fh.seek(0)
            data = pickle.load(fh, encoding="latin1")
        except Exception as exc:  # noqa: BLE001 - any unpickling failure is a corrupt input
            raise CorpusError(f"{src}: cannot unpickle legacy data: {exc}") from None
    corpus = Corpus(Path(dst).stem, tuple(records_from_legacy(data)))
    if not corpus.records:
        raise CorpusError(f"{src}: no records")
    write_corpus(corpus, dst)
    return corpus
