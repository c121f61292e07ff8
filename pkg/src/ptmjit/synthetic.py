"""Constructed corpora with a known label rule, for smoke runs and tests.

``signal="code"``: a commit is defective iff the token ``BUGTOKEN`` appears in
one of its four most recent patches; messages are drawn independently of the
label. ``signal="message"``: the rule moves to the message and the code is
label-independent.
"""

from __future__ import annotations

import random

from .corpus import CommitRecord, Corpus, Patch

SIGNAL_TOKEN = "BUGTOKEN"

_CODE_WORDS = [
    "int", "char", "void", "return", "if", "else", "for", "while", "const", "auto", "nullptr", "=", "==", "!=",
    "&&", "||", "(", ")", "{", "}", ";", "->", "::", "+", "-", "*", "<", ">", "size", "count", "result",
    "ret", "buf", "len", "ptr", "node", "list", "map", "key", "value", "index", "error", "status", "flag",
    "init", "free", "alloc", "lock", "unlock", "get", "set", "update", "self", "config", "path", "name",
] + [f"var{i}" for i in range(60)]
_MSG_WORDS = [
    "fix", "add", "remove", "update", "refactor", "cleanup", "support", "test", "tests", "doc", "docs",
    "handle", "error", "crash", "memory", "leak", "build", "warning", "api", "config", "option", "driver",
    "network", "client", "server", "use", "instead", "of", "the", "a", "for", "in", "to", "when", "and",
] + [f"word{i}" for i in range(40)]


def _line(rng: random.Random) -> str:
    marker = rng.choice(("added:", "removed:"))
    return " ".join([marker] + rng.choices(_CODE_WORDS, k=rng.randint(3, 9)))


def _patch(rng: random.Random) -> list[str]:
    return [_line(rng) for _ in range(rng.randint(1, 4))]


def separable_corpus(
    size: int,
    seed: int = 0,
    defect_rate: float = 0.5,
    signal: str = "code",
    name: str | None = None,
) -> Corpus:
    if signal not in ("code", "message"):
        raise ValueError("signal must be 'code' or 'message'")
    rng = random.Random(seed)
    records = []
    for i in range(size):
        label = int(rng.random() < defect_rate)
        patches = [_patch(rng) for _ in range(rng.randint(1, 6))]
        msg = rng.choices(_MSG_WORDS, k=rng.randint(2, 10))
        if label and signal == "code":
            # anywhere in the four most recent patches
            target = patches[rng.randrange(max(0, len(patches) - 4), len(patches))]
            li = rng.randrange(len(target))
            toks = target[li].split()
            toks.insert(rng.randint(1, len(toks)), SIGNAL_TOKEN)
            target[li] = " ".join(toks)
        elif label:
            msg.insert(rng.randint(0, len(msg)), SIGNAL_TOKEN)
        records.append(CommitRecord(f"c{seed}-{i:06d}", label, tuple(msg), tuple(Patch(tuple(p)) for p in patches)))
    return Corpus(name or f"separable-{signal}-{seed}", tuple(records))
