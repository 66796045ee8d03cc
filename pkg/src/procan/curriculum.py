"""Easy/hard labelling of nodules and the validation-accuracy stopping rule."""

from __future__ import annotations

from typing import Iterable, Sequence, TypeVar

from .errors import ConfigurationError, DataError

CRITERIA = ("rating", "diameter", "none")
HARD_DIAMETER_MM = (5.0, 12.0)

R = TypeVar("R")


def check_criterion(criterion: str) -> str:
    if criterion not in CRITERIA:
        raise ConfigurationError(f"unknown difficulty criterion {criterion!r}; expected one of {CRITERIA}")
    return criterion


def classify(record, criterion: str) -> str:
    """Return ``"easy"`` or ``"hard"``.

    rating: easy iff the median rating is 1 or 5 (rating 3 must already be
    excluded). diameter: hard iff 5 mm ≤ d ≤ 12 mm. none: always easy.
    """
    check_criterion(criterion)
    if criterion == "none":
        return "easy"
    if criterion == "rating":
        r = record.median_rating
        if r is None:
            raise DataError(f"record {record.id}: rating criterion needs a median rating")
        if r == 3:
            raise DataError(f"record {record.id}: median rating 3 should have been excluded")
        if r not in (1, 2, 4, 5):
            raise DataError(f"record {record.id}: median rating {r} outside 1-5")
        return "easy" if r in (1, 5) else "hard"
    d = record.diameter_mm
    if not d > 0:
        raise DataError(f"record {record.id}: diameter must be positive, got {d}")
    lo, hi = HARD_DIAMETER_MM
    return "hard" if lo <= d <= hi else "easy"


def partition(dataset: Iterable[R], criterion: str) -> tuple[list[R], list[R]]:
    """(easy subset, everything). The second phase trains on easy and hard together."""
    full = list(dataset)
    easy = [r for r in full if classify(r, criterion) == "easy"]
    return easy, full


def should_stop(history: Sequence[float]) -> bool:
    """True iff the newest accuracy is strictly below all of the three before it."""
    if len(history) < 4:
        return False
    return history[-1] < min(history[-4:-1])
