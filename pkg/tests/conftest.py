"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from coeforge.core import (
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    ReasoningStep,
)

REPO_ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = REPO_ROOT / "data" / "synthetic"
GOLDEN_DIR = REPO_ROOT / "tests" / "golden"

_WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo "
    "lima mike november oscar papa quebec romeo sierra tango uniform victor "
    "whiskey xray yankee zulu table figure value page region answer"
).split()


def random_box(rng: random.Random) -> BoundingBox:
    x1 = rng.randint(0, 400)
    y1 = rng.randint(0, 400)
    w = rng.randint(1, 300)
    h = rng.randint(1, 300)
    if rng.random() < 0.25:
        return BoundingBox(x1 + 0.5, y1 + 0.25, x1 + w + 0.5, y1 + h + 0.75)
    return BoundingBox(x1, y1, x1 + w, y1 + h)


def random_ref(rng: random.Random, max_page: int = 3) -> EvidenceRef:
    return EvidenceRef(rng.randint(1, max_page), random_box(rng))


def random_words(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def random_trajectory(rng: random.Random) -> CoETrajectory:
    """A structurally valid trajectory with varied step/evidence shapes."""
    steps = []
    for _ in range(rng.randint(1, 5)):
        refs = tuple(random_ref(rng) for _ in range(rng.choice((0, 0, 1, 1, 2))))
        steps.append(ReasoningStep(random_words(rng, rng.randint(1, 8)), refs))
    return CoETrajectory(
        steps=tuple(steps),
        answer_text=random_words(rng, rng.randint(1, 4)),
        answer_evidence=random_ref(rng),
        raw="",
        format_ok=True,
    )


def trajectories_equal(a: CoETrajectory, b: CoETrajectory) -> bool:
    """Structural equality: steps, answer text, and evidence (raw ignored)."""
    return (
        a.steps == b.steps
        and a.answer_text == b.answer_text
        and a.answer_evidence == b.answer_evidence
        and a.format_ok == b.format_ok
    )


@pytest.fixture(scope="session")
def synthetic_dataset_dir() -> Path:
    assert DATA_DIR.exists(), "run scripts/make_synthetic_data.py first"
    return DATA_DIR
