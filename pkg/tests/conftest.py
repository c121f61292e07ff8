import random

import pytest
import torch

from ptmjit.corpus import CommitRecord, Corpus, Patch

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance[name] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    elif report.when == "setup" and report.skipped:
        _acceptance[name] = "SKIP"
    elif report.failed:
        _acceptance[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        terminalreporter.write_line(f"{outcome:4}  {name}")


def make_record(i: int, label: int, n_patches: int = 2, msg=("fix", "bug")) -> CommitRecord:
    patches = tuple(Patch((f"added: x{i}_{p} = {p} ;", f"removed: y{i}_{p} ;")) for p in range(n_patches))
    return CommitRecord(f"c{i}", label, tuple(msg), patches)


def make_corpus(n: int, n_defect: int, seed: int = 0, name: str = "synthetic") -> Corpus:
    labels = [1] * n_defect + [0] * (n - n_defect)
    random.Random(seed).shuffle(labels)
    return Corpus(name, tuple(make_record(i, y, n_patches=1 + i % 3) for i, y in enumerate(labels)))


@pytest.fixture
def small_corpus() -> Corpus:
    return make_corpus(40, 12)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield
