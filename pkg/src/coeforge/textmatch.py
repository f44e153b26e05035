"""Answer normalization, word recall, and soft exact match.

Normalization follows the open-domain QA convention: lowercase, strip
Unicode punctuation, drop the articles "a"/"an"/"the" as whole tokens, and
collapse whitespace.  Recall and EM both operate on this normalized form.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass

from .errors import EmptyGroundTruth

_ARTICLES = frozenset({"a", "an", "the"})

NO_ANSWER_CANONICAL = "no answer"


@dataclass(frozen=True)
class NormalizedAnswer:
    """Token list and canonical single-spaced string for one answer."""

    tokens: tuple[str, ...]
    joined: str


def _strip_punctuation(text: str) -> str:
    return "".join(
        ch for ch in text if not unicodedata.category(ch).startswith("P")
    )


def normalize(raw: str) -> NormalizedAnswer:
    """Normalize free text into comparable tokens.

    Empty input (or input that is all punctuation/articles) yields an empty
    token list rather than an error.
    """
    lowered = _strip_punctuation(raw.lower())
    tokens = tuple(tok for tok in lowered.split() if tok not in _ARTICLES)
    return NormalizedAnswer(tokens=tokens, joined=" ".join(tokens))


def recall(a: str, a_gt: str) -> float:
    """Fraction of gold tokens covered by the prediction.

    Uses multiset intersection: a repeated gold token must be matched by an
    equally repeated predicted token.

    Raises:
        EmptyGroundTruth: the gold answer normalizes to zero tokens.
    """
    gold = normalize(a_gt).tokens
    if not gold:
        raise EmptyGroundTruth(f"gold answer {a_gt!r} has no comparable tokens")
    pred_counts = Counter(normalize(a).tokens)
    gold_counts = Counter(gold)
    overlap = sum(min(count, pred_counts[tok]) for tok, count in gold_counts.items())
    return overlap / len(gold)


def soft_em(a: str, a_gt: str) -> int:
    """1 when one normalized answer is a substring of the other, else 0.

    Substring matching runs over the canonical joined strings, so it may
    cross token boundaries.  Either side normalizing to the empty string
    scores 0.
    """
    left = normalize(a).joined
    right = normalize(a_gt).joined
    if not left or not right:
        return 0
    return 1 if (left in right or right in left) else 0


def is_no_answer(a: str) -> bool:
    """True only for an exact "No answer" after normalization."""
    return normalize(a).joined == NO_ANSWER_CANONICAL
