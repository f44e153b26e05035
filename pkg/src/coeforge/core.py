"""Core domain types shared by every other module.

All types are immutable after construction and safe to share across threads.
Page indices are 1-based everywhere except the dataset-side ``pos_idx``
convention, which is 0-based with -1 marking an unanswerable record; the
single conversion rule between the two lives here (:func:`page_index_for_pos`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DegenerateBox, NegativeCoordinate

NO_ANSWER_SENTINEL = "No answer"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle with x1 < x2 and y1 < y2.

    Coordinates are stored as floats even when the wire carries integers,
    so scaled (fractional) boxes behave identically in IoU and cropping.
    Negative coordinates are rejected for wire-side boxes by
    :func:`validate_box`; the type itself only enforces positive area, so
    geometry helpers can clamp overshooting rectangles.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            object.__setattr__(self, name, float(value))
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise DegenerateBox(f"degenerate or inverted box {self.as_tuple()}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def validate_box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
    """Construct a box from wire coordinates, enforcing all invariants.

    Raises:
        NegativeCoordinate: any coordinate is below zero.
        DegenerateBox: zero/negative width or height (x1 >= x2 or y1 >= y2).
    """
    if min(x1, y1, x2, y2) < 0:
        raise NegativeCoordinate(f"negative coordinate in {(x1, y1, x2, y2)}")
    return BoundingBox(x1, y1, x2, y2)


@dataclass(frozen=True)
class EvidenceRef:
    """A page index (1-based) plus the box locating evidence on that page."""

    page_index: int
    box: BoundingBox

    def __post_init__(self) -> None:
        if not isinstance(self.page_index, int) or isinstance(self.page_index, bool):
            raise TypeError(f"page_index must be an int, got {self.page_index!r}")
        if self.page_index < 1:
            raise ValueError(f"page_index must be >= 1, got {self.page_index}")


@dataclass(frozen=True)
class ReasoningStep:
    """One reasoning step: cleaned text plus zero or more evidence refs."""

    text: str
    evidence: tuple[EvidenceRef, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if not self.text.strip():
            raise ValueError("step text must be non-empty after trimming")


@dataclass(frozen=True)
class CoETrajectory:
    """A parsed chain-of-evidence response.

    ``steps`` carry the reasoning text with per-step evidence refs; the final
    answer carries its own supporting evidence.  ``format_ok`` records whether
    the raw response obeyed the output grammar; when it is False the other
    fields are best-effort and should not be trusted for scoring.
    """

    steps: tuple[ReasoningStep, ...]
    answer_text: str
    answer_evidence: EvidenceRef | None
    raw: str
    format_ok: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.format_ok and (self.answer_evidence is None or not self.steps):
            raise ValueError(
                "well-formatted trajectory requires steps and answer evidence"
            )

    @property
    def evidence_count(self) -> int:
        """K: total number of evidence refs across steps."""
        return sum(len(step.evidence) for step in self.steps)

    @property
    def answer_evidence_in_chain(self) -> bool:
        """True when the answer's evidence ref repeats one of the step refs."""
        if self.answer_evidence is None:
            return False
        return any(
            ref == self.answer_evidence for step in self.steps for ref in step.evidence
        )


@dataclass(frozen=True)
class PageRef:
    """Locator for one candidate page image; never holds pixels itself."""

    page_id: str
    image_locator: str
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"page dimensions must be positive, got {self.width}x{self.height}"
            )


def page_index_for_pos(pos_idx: int) -> int | None:
    """Convert a 0-based candidate position to a 1-based page index.

    -1 (source page replaced / unanswerable) maps to None.
    """
    if pos_idx == -1:
        return None
    if pos_idx < -1:
        raise ValueError(f"pos_idx must be >= -1, got {pos_idx}")
    return pos_idx + 1


@dataclass(frozen=True)
class GroundTruthRecord:
    """One evaluation record: query, gold answer, gold evidence, candidates.

    For unanswerable records (``pos_idx == -1``) the gold answer is the
    literal sentinel "No answer" and no gold page/box exists.
    """

    query_id: str
    question: str
    gold_answer: str
    gold_page_index: int | None
    gold_box: BoundingBox | None
    pages: tuple[PageRef, ...]
    pos_idx: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "pages", tuple(self.pages))
        if not self.pages:
            raise ValueError("record needs at least one candidate page")
        if self.pos_idx == -1:
            if self.gold_answer != NO_ANSWER_SENTINEL:
                raise ValueError(
                    f"pos_idx=-1 requires gold_answer {NO_ANSWER_SENTINEL!r}"
                )
            if self.gold_box is not None or self.gold_page_index is not None:
                raise ValueError("unanswerable record cannot carry gold evidence")
        elif self.pos_idx >= 0:
            if self.pos_idx >= len(self.pages):
                raise ValueError(
                    f"pos_idx {self.pos_idx} outside candidate list of "
                    f"{len(self.pages)} pages"
                )
            if self.gold_answer == NO_ANSWER_SENTINEL:
                raise ValueError("answerable record cannot use the no-answer sentinel")
            if self.gold_box is None:
                raise ValueError("answerable record requires a gold box")
            expected = page_index_for_pos(self.pos_idx)
            if self.gold_page_index != expected:
                raise ValueError(
                    f"gold_page_index {self.gold_page_index} does not match "
                    f"pos_idx {self.pos_idx} (expected {expected})"
                )
        else:
            raise ValueError(f"pos_idx must be >= -1, got {self.pos_idx}")

    @property
    def answerable(self) -> bool:
        return self.pos_idx >= 0

    @property
    def source_page(self) -> PageRef | None:
        return self.pages[self.pos_idx] if self.answerable else None


@dataclass(frozen=True)
class RewardConfig:
    """Thresholds for the reward suite and data pipeline.

    tau: minimum step/evidence cosine for the alignment indicator.
    delta: maximum allowed pairwise box overlap among step boxes.
    epsilon: accuracy gate below which step rewards are withheld.
    gamma: recall threshold for cold-start filtering.
    iou_at: grounding IoU threshold (strictly-greater comparison).
    """

    tau: float = 0.3
    delta: float = 0.5
    epsilon: float = 0.4
    gamma: float = 0.8
    iou_at: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.iou_at <= 1.0:
            raise ValueError(f"iou_at must be in [0, 1], got {self.iou_at}")


@dataclass(frozen=True)
class RewardBreakdown:
    """The four reward components for one trajectory plus diagnostics.

    ``total`` is always the exact floating-point sum of the four components,
    enforced at construction.  ``s_min`` is None when the trajectory has no
    step evidence; ``i_max`` is None when fewer than two step boxes exist.
    """

    r_acc: float
    r_step: float
    r_ground: float
    r_format: float
    total: float
    s_min: float | None = None
    i_max: float | None = None
    per_step_scores: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "per_step_scores", tuple(tuple(p) for p in self.per_step_scores)
        )
        expected = self.r_acc + self.r_step + self.r_ground + self.r_format
        if self.total != expected:
            raise ValueError(
                f"total {self.total!r} is not the exact component sum {expected!r}"
            )

    @classmethod
    def from_components(
        cls,
        r_acc: float,
        r_step: float,
        r_ground: float,
        r_format: float,
        s_min: float | None = None,
        i_max: float | None = None,
        per_step_scores: tuple[tuple[int, float], ...] = (),
    ) -> "RewardBreakdown":
        return cls(
            r_acc=r_acc,
            r_step=r_step,
            r_ground=r_ground,
            r_format=r_format,
            total=r_acc + r_step + r_ground + r_format,
            s_min=s_min,
            i_max=i_max,
            per_step_scores=per_step_scores,
        )
