from dataclasses import dataclass

import pytest
from hypothesis import given
from hypothesis import strategies as st

from procan.curriculum import classify, partition, should_stop
from procan.errors import ConfigurationError, DataError


@dataclass
class Rec:
    id: str = "n"
    diameter_mm: float = 10.0
    median_rating: int | None = 4


@pytest.mark.parametrize("rating,expected", [(1, "easy"), (2, "hard"), (4, "hard"), (5, "easy")])
def test_rating_truth_table(rating, expected):
    assert classify(Rec(median_rating=rating), "rating") == expected


@pytest.mark.parametrize("d,expected", [(3.0, "easy"), (4.9, "easy"), (5.0, "hard"), (8.0, "hard"), (12.0, "hard"), (12.1, "easy"), (20.0, "easy")])
def test_diameter_truth_table(d, expected):
    assert classify(Rec(diameter_mm=d), "diameter") == expected


def test_none_criterion_is_always_easy():
    assert {classify(Rec(diameter_mm=d, median_rating=r), "none") for d in (4, 8, 20) for r in (1, 2, 4, 5)} == {"easy"}


def test_classify_errors():
    with pytest.raises(DataError):
        classify(Rec(median_rating=3), "rating")
    with pytest.raises(DataError):
        classify(Rec(median_rating=None), "rating")
    with pytest.raises(DataError):
        classify(Rec(diameter_mm=0.0), "diameter")
    with pytest.raises(ConfigurationError):
        classify(Rec(), "volume")


def test_partition_examples():
    recs = [Rec(id=str(i), diameter_mm=d) for i, d in enumerate([3, 8, 20])]
    easy, full = partition(recs, "diameter")
    assert [r.diameter_mm for r in easy] == [3, 20] and full == recs
    mixed = [Rec(id=str(i), diameter_mm=8.0 if i < 4 else 20.0) for i in range(10)]
    easy, full = partition(mixed, "diameter")
    assert len(easy) == 6 and len(full) == 10
    easy, full = partition(mixed, "none")
    assert easy == full


@given(st.lists(st.floats(0.5, 30.0), max_size=40))
def test_partition_keeps_every_record_once(diams):
    recs = [Rec(id=str(i), diameter_mm=d) for i, d in enumerate(diams)]
    easy, full = partition(recs, "diameter")
    assert full == recs
    assert all(any(e is r for r in full) for e in easy)
    assert [classify(r, "diameter") for r in recs] == [classify(r, "diameter") for r in recs]


def test_should_stop_examples():
    assert should_stop([0.90, 0.91, 0.89, 0.88])
    assert not should_stop([0.90, 0.91, 0.89, 0.89])
    assert not should_stop([0.5, 0.4, 0.3])
    assert not should_stop([])
    # only the three entries before the newest matter
    assert should_stop([0.1, 0.9, 0.9, 0.9, 0.8])


accuracy = st.floats(0.0, 1.0)


@given(st.lists(accuracy, min_size=3, max_size=10), accuracy, accuracy)
def test_should_stop_monotone_in_newest(prefix, v, w):
    lo, hi = min(v, w), max(v, w)
    if should_stop(prefix + [hi]):
        assert should_stop(prefix + [lo])
