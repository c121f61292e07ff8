import itertools
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from published_rows import ROWS
from ptmjit.metrics import (
    OMITTED, ConfusionCounts, MetricsReport, accuracy, auc, confusion, evaluate, f1, f1_score, precision,
    predictions, recall, t_test, t_test_matrix, write_table,
)


def _preds(scores, labels):
    return predictions([str(i) for i in range(len(scores))], scores, labels)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def welch_textbook(a, b):
    """Welch statistic and Welch-Satterthwaite df; p via the regularised incomplete beta."""
    from scipy.special import betainc

    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    se2 = va / na + vb / nb
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = betainc(df / 2, 0.5, df / (df + t * t))
    return t, p


# -- confusion -----------------------------------------------------------------------

def test_confusion_examples():
    assert confusion(_preds([0.9, 0.2], [1, 0])) == ConfusionCounts(tp=1, fp=0, tn=1, fn=0)
    assert confusion(_preds([0.9, 0.2], [0, 1])) == ConfusionCounts(tp=0, fp=1, tn=0, fn=1)


def test_threshold_is_strict():
    assert confusion(_preds([0.5], [1])) == ConfusionCounts(0, 0, 0, 1)


def test_confusion_vs_loop():
    rng = random.Random(0)
    scores = [rng.random() for _ in range(200)]
    labels = [rng.randint(0, 1) for _ in range(200)]
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        if s > 0.5:
            tp, fp = tp + (y == 1), fp + (y == 0)
        else:
            tn, fn = tn + (y == 0), fn + (y == 1)
    assert confusion(_preds(scores, labels)) == ConfusionCounts(tp, fp, tn, fn)


def test_confusion_empty():
    with pytest.raises(ValueError):
        confusion([])


def test_prediction_validation():
    with pytest.raises(ValueError):
        predictions(["a"], [math.nan], [1])
    with pytest.raises(ValueError):
        predictions(["a"], [0.5], [2])
    with pytest.raises(ValueError):
        predictions(["a", "b"], [0.5], [1])


# -- ratios ------------------------------------------------------------------------------

def test_symmetric_counts():
    c = ConfusionCounts(1, 1, 1, 1)
    assert (accuracy(c), precision(c), recall(c), f1(c)) == (0.5, 0.5, 0.5, 0.5)


@pytest.mark.parametrize("name,p,r,printed", ROWS)
def test_f1_matches_published_rows(name, p, r, printed):
    assert abs(f1_score(p, r) - printed) <= 0.01


def test_f1_unrounded_examples():
    assert f1_score(0.17, 0.70) == pytest.approx(0.2736, abs=5e-5)
    assert f1_score(0.11, 0.98) == pytest.approx(0.1978, abs=5e-5)


def test_zero_division_flags():
    rep = evaluate(_preds([0.1, 0.2, 0.3], [1, 0, 1]))
    assert rep.precision == 0.0 and rep.f1 == 0.0
    assert "precision" in rep.undefined and "f1" in rep.undefined
    assert "recall" not in rep.undefined
    none_pos = evaluate(_preds([0.9, 0.1], [0, 0]))
    assert "recall" in none_pos.undefined and "auc" in none_pos.undefined
    assert math.isnan(none_pos.auc)


counts = st.builds(ConfusionCounts, *(st.integers(0, 30) for _ in range(4))).filter(lambda c: c.total > 0)


@given(counts)
def test_ratio_identities(c):
    assert Fraction(accuracy(c)).limit_denominator(200) == Fraction(c.tp + c.tn, c.total)
    if c.tp + c.fp:
        assert Fraction(precision(c)).limit_denominator(200) * (c.tp + c.fp) == c.tp
    p, r, f = precision(c), recall(c), f1(c)
    assert 0 <= f <= 1
    assert f <= min(2 * p, 2 * r) + 1e-12
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12
    assert (f == 0) == (p == 0 or r == 0)


def test_report_roundtrip():
    rep = evaluate(_preds([0.9, 0.2, 0.7, 0.4], [1, 0, 0, 1]))
    assert MetricsReport.from_dict(rep.to_dict()) == rep
    assert list(rep.as_row("m"))[:6] == ["model", "auc", "accuracy", "precision", "recall", "f1"]


# -- AUC ----------------------------------------------------------------------------------

def test_auc_examples():
    assert auc(_preds([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0
    assert auc(_preds([0.4] * 6, [1, 0, 1, 0, 0, 1])) == 0.5
    assert auc(_preds([0.9, 0.8, 0.3], [1, 0, 1])) == 0.5


tied_instances = st.integers(2, 50).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.1, 0.2, 0.25, 0.5, 0.5, 0.7, 0.9]), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
))


@given(tied_instances)
@settings(max_examples=200)
def test_auc_equals_pairwise(inst):
    scores, labels = inst
    assume(0 < sum(labels) < len(labels))
    assert abs(auc(_preds(scores, labels)) - pairwise_auc(scores, labels)) < 1e-9


@given(st.lists(st.floats(0.001, 0.999), min_size=2, max_size=40), st.randoms())
def test_auc_invariant_under_squaring(scores, rnd):
    labels = [rnd.randint(0, 1) for _ in scores]
    assume(0 < sum(labels) < len(labels))
    assert auc(_preds(scores, labels)) == pytest.approx(auc(_preds([s * s for s in scores], labels)), abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=40, unique=True), st.randoms())
def test_auc_complement(scores, rnd):
    labels = [rnd.randint(0, 1) for _ in scores]
    assume(0 < sum(labels) < len(labels))
    flipped = [1 - y for y in labels]
    assert auc(_preds(scores, flipped)) == pytest.approx(1 - auc(_preds(scores, labels)), abs=1e-12)


# -- t-test --------------------------------------------------------------------------------

def test_identical_samples():
    a = [0.1, 0.4, 0.35, 0.8]
    assert t_test(a, a) == (0.0, 1.0)


def test_constant_equal_samples():
    assert t_test([0.3] * 5, [0.3] * 7) == (0.0, 1.0)
    t, p = t_test([0.0] * 5, [1.0] * 5)
    assert t == -math.inf and p == 0.0


def test_separated_samples():
    rng = np.random.default_rng(0)
    t, p = t_test(rng.normal(0, 1e-3, 30), 1 + rng.normal(0, 1e-3, 30))
    assert abs(t) > 100 and p < 1e-12


def test_too_small():
    with pytest.raises(ValueError):
        t_test([1.0], [1.0, 2.0])


def test_textbook_oracle_fixed_samples():
    rng = np.random.default_rng(42)
    a = rng.uniform(0, 1, 30).tolist()
    b = (rng.uniform(0, 1, 30) ** 2).tolist()
    t, p = t_test(a, b)
    to, po = welch_textbook(a, b)
    assert t == pytest.approx(to, abs=1e-6)
    assert p == pytest.approx(po, abs=1e-6)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_t_antisymmetric(a, b):
    assume(np.var(a) > 1e-6 or np.var(b) > 1e-6)
    t1, p1 = t_test(a, b)
    t2, p2 = t_test(b, a)
    assert t1 == pytest.approx(-t2)
    assert p1 == pytest.approx(p2)


def test_matrix_layout():
    rng = np.random.default_rng(1)
    runs = {f"m{i}": rng.uniform(0, 1, 20) for i in range(6)}
    m = t_test_matrix(runs)
    assert (m.populated, m.omitted) == (15, 21)
    rows = m.render()
    assert rows[0] == ["model", *runs]
    for i, row in enumerate(rows[1:]):
        assert row[0] == f"m{i}"
        for j, cell in enumerate(row[1:]):
            assert (cell == OMITTED) == (j <= i)
    assert len(m.records()) == 15
    assert m.cells[0][1] == t_test(runs["m0"], runs["m1"])
    assert t_test_matrix({"a": [0.1, 0.2], "b": [0.3, 0.5]}).populated == 1


def test_matrix_binary_mode():
    m = t_test_matrix({"a": [0.9, 0.2, 0.7], "b": [0.6, 0.1, 0.8]}, threshold=0.5)
    assert m.cells[0][1] == (0.0, 1.0)


def test_write_table_full_precision(tmp_path):
    path = write_table([{"model": "x", "auc": 1 / 3}], tmp_path / "t.tsv", ("model", "auc"))
    lines = path.read_text().splitlines()
    assert lines == ["model\tauc", f"x\t{1 / 3!r}"]
