import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from procan.errors import UsageError
from procan.metrics import (
    ConfusionCounts,
    auc,
    auc_pairwise,
    auc_trapezoid,
    bootstrap_ci,
    classification_metrics,
    confusion,
    evaluate_scores,
    format_row,
)


def test_confusion_examples():
    assert confusion([0.9, 0.1], [1, 0]) == ConfusionCounts(tp=1, tn=1, fp=0, fn=0)
    assert confusion([0.5], [0]) == ConfusionCounts(tp=0, tn=0, fp=1, fn=0)
    c = confusion([0.7, 0.8, 0.9, 0.6], [1, 0, 1, 0])
    assert c.tn == 0 and c.fn == 0 and c.total == 4


def test_confusion_errors():
    with pytest.raises(UsageError):
        confusion([0.1, 0.2], [1])
    with pytest.raises(UsageError):
        confusion([0.1], [2])


def test_classification_metric_arithmetic():
    m = classification_metrics(ConfusionCounts(tp=2, tn=2, fp=1, fn=0))
    assert m["accuracy"] == 0.8 and m["sensitivity"] == 1.0
    assert abs(m["precision"] - 2 / 3) < 1e-15 and abs(m["f1"] - 0.8) < 1e-15


def test_undefined_metrics_are_none():
    m = classification_metrics(ConfusionCounts(tp=0, tn=3, fp=0, fn=0))
    assert m["sensitivity"] is None and m["precision"] is None and m["f1"] is None and m["accuracy"] == 1.0
    assert classification_metrics(ConfusionCounts(0, 0, 0, 0))["accuracy"] is None


def test_perfect_classifier():
    m = evaluate_scores([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert all(v == 1.0 for v in m.values())


def test_single_class_auc_is_none_in_evaluate():
    assert evaluate_scores([0.3, 0.7], [1, 1])["auc"] is None


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_defined_metrics_lie_in_unit_interval(pairs):
    y, s = zip(*pairs)
    for v in classification_metrics(confusion(s, y)).values():
        assert v is None or 0.0 <= v <= 1.0


def test_auc_examples():
    assert auc([0.8, 0.6, 0.4, 0.7], [1, 1, 0, 0]) == 0.75
    assert auc_pairwise([0.8, 0.6, 0.4, 0.7], [1, 1, 0, 0]) == 0.75
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.4] * 6, [1, 0, 1, 0, 1, 0]) == 0.5


def test_auc_single_class_errors():
    for fn in (auc, auc_trapezoid, auc_pairwise):
        with pytest.raises(UsageError):
            fn([0.1, 0.2], [0, 0])


def random_set(rng):
    n = int(rng.integers(2, 60))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    # coarse rounding creates ties
    s = np.round(rng.random(n), int(rng.integers(1, 4)))
    return s, y


def test_three_auc_forms_agree_on_1000_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s, y = random_set(rng)
        a = auc(s, y)
        assert abs(a - auc_trapezoid(s, y)) < 1e-12
        assert abs(a - auc_pairwise(s, y)) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_auc_monotone_invariance(seed):
    s, y = random_set(np.random.default_rng(seed))
    a = auc(s, y)
    assert abs(auc(s**3, y) - a) < 1e-12
    assert abs(auc(1 / (1 + np.exp(-(5 * s - 2))), y) - a) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_auc_label_complement(seed):
    s, y = random_set(np.random.default_rng(seed))
    assert abs(auc(s, y) + auc(s, 1 - y) - 1) < 1e-12


def test_bootstrap_constant_perfect():
    assert bootstrap_ci([0.9] * 5 + [0.1] * 5, [1] * 5 + [0] * 5) == (1.0, 0.0)


def test_bootstrap_is_seeded(rng):
    s, y = rng.random(40), np.tile([0, 1], 20)
    a = bootstrap_ci(s, y, rng=np.random.default_rng(5))
    assert a == bootstrap_ci(s, y, rng=np.random.default_rng(5))


def hanley_mcneil(a, n_pos, n_neg):
    q1 = a / (2 - a)
    q2 = 2 * a * a / (1 + a)
    return math.sqrt((a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg))


@pytest.mark.parametrize("seed", range(5))
def test_bootstrap_spread_near_analytic_error(seed):
    r = np.random.default_rng(seed)
    y = np.array([1] * 36 + [0] * 37)
    s = np.where(y == 1, r.normal(1, 1, 73), r.normal(0, 1, 73))
    _, sd = bootstrap_ci(s, y, rng=np.random.default_rng(0))
    se = hanley_mcneil(auc(s, y), 36, 37)
    assert se / 3 < sd < 3 * se


def test_bootstrap_errors():
    with pytest.raises(UsageError):
        bootstrap_ci([0.1, 0.9], [0, 1], iterations=1)
    with pytest.raises(UsageError):
        bootstrap_ci([0.1, 0.9], [0, 1], metric=lambda s, y: None, iterations=5)


def test_format_row_marks_undefined():
    row = format_row("final", 60, "test", {"accuracy": 0.5, "auc": None})
    assert row == ["final", "60", "test", "0.500000", "nan", "nan", "nan", "nan"]
