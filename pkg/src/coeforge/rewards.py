"""The reward suite: accuracy, stepwise attribution, grounding, and format.

The total reward for a response is the exact sum of the four components.
Responses that violate the output grammar earn the format penalty (-1) and
zero on everything else: no field of a malformed trajectory is trustworthy
enough to score, and partial credit would let broken outputs beat honest
failures.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping, NamedTuple

from .core import (
    CoETrajectory,
    GroundTruthRecord,
    PageRef,
    RewardBreakdown,
    RewardConfig,
)
from .embedding import EncoderProvider, cosine
from .errors import EmptyAfterClamp, PageOutOfRange, ZeroVector
from .geometry import clamp_to_page, iou, max_pairwise_iou
from .imaging import PageStore
from .parser import parse_response
from .textmatch import is_no_answer, recall, soft_em

REWARD_COMPONENTS = ("acc", "step", "ground", "format")


def accuracy_reward(a: str, a_gt: str) -> float:
    """Blend of exact-match and word recall: (EM + recall) / 2, in [0, 1].

    The recall half keeps the signal dense for near-miss answers while a
    perfect match still earns the full reward.
    """
    return (float(soft_em(a, a_gt)) + recall(a, a_gt)) / 2


class StepAlignment(NamedTuple):
    """Alignment summary over the K step/evidence pairs."""

    s_min: float | None  # minimum crop/text cosine; None when K = 0
    max_overlap: float  # max pairwise IoU among step boxes (same page only)
    per_step: tuple[tuple[int, float], ...]  # (1-based step ordinal, cosine)


def step_alignment(
    t: CoETrajectory,
    pages: tuple[PageRef, ...],
    enc: EncoderProvider,
    page_store: PageStore | None = None,
) -> StepAlignment:
    """Embed every step/evidence pair and measure alignment and overlap.

    Each evidence box is clamped to its page, cropped, embedded, and
    compared against the owning step's text.  A crop that is fully
    off-page, or whose content embeds to nothing, scores cosine 0 for its
    pair rather than raising.  Boxes on different pages never overlap, so
    cross-page pairs contribute 0 to the overlap maximum.

    Raises:
        PageOutOfRange: a step references a page index beyond the candidate
            set.
        ProviderUnavailable: the encoder backend failed.
    """
    store = page_store if page_store is not None else PageStore()
    per_step: list[tuple[int, float]] = []
    boxes_by_page = defaultdict(list)
    for ordinal, step in enumerate(t.steps, start=1):
        for ref in step.evidence:
            if ref.page_index > len(pages):
                raise PageOutOfRange(
                    f"step {ordinal} cites page {ref.page_index} but only "
                    f"{len(pages)} candidate pages exist"
                )
            page = pages[ref.page_index - 1]
            boxes_by_page[ref.page_index].append(ref.box)
            score = 0.0
            try:
                region = clamp_to_page(ref.box, page)
                crop_vec = enc.embed_image(store.crop_bytes(page, region))
                text_vec = enc.embed_text(step.text)
                score = cosine(crop_vec, text_vec)
            except (EmptyAfterClamp, ZeroVector):
                score = 0.0
            per_step.append((ordinal, score))

    s_min = min((score for _, score in per_step), default=None)
    max_overlap = max(
        (max_pairwise_iou(boxes) for boxes in boxes_by_page.values()),
        default=0.0,
    )
    return StepAlignment(s_min=s_min, max_overlap=max_overlap, per_step=tuple(per_step))


def stepwise_reward(
    s_min: float | None, max_overlap: float, r_acc: float, cfg: RewardConfig
) -> float:
    """Process reward in {0, 0.5, 1}, gated on answer accuracy.

    Half the credit is for every pair clearing the similarity threshold,
    half for step boxes staying sufficiently non-overlapping; nothing is
    paid unless the accuracy reward clears the gate.  Without any step
    evidence the similarity half is unearned while the overlap half holds
    vacuously, capping the reward at 0.5.
    """
    aligned = 1.0 if (s_min is not None and s_min >= cfg.tau) else 0.0
    diverse = 1.0 if max_overlap <= cfg.delta else 0.0
    gate = 1.0 if r_acc >= cfg.epsilon else 0.0
    return (aligned + diverse) / 2 * gate


def grounding_reward(
    t: CoETrajectory, gt: GroundTruthRecord, cfg: RewardConfig
) -> float:
    """1 when the answer evidence lands on the gold region, else 0.

    Requires the answer box on the gold page with IoU strictly above the
    threshold; ties at the threshold score 0.  For unanswerable records the
    reward is 1 exactly when the answer is the "No answer" sentinel (any
    answer box is ignored).
    """
    if not gt.answerable:
        return 1.0 if is_no_answer(t.answer_text) else 0.0
    if t.answer_evidence is None or gt.gold_box is None:
        return 0.0
    if t.answer_evidence.page_index != gt.gold_page_index:
        return 0.0
    return 1.0 if iou(t.answer_evidence.box, gt.gold_box) > cfg.iou_at else 0.0


def format_reward(t: CoETrajectory) -> float:
    """+1 for grammar-conforming output, -1 otherwise."""
    return 1.0 if t.format_ok else -1.0


def _resolve_weights(weights: Mapping[str, float] | None) -> dict[str, float]:
    resolved = {name: 1.0 for name in REWARD_COMPONENTS}
    if weights:
        unknown = set(weights) - set(REWARD_COMPONENTS)
        if unknown:
            raise ValueError(f"unknown reward components: {sorted(unknown)}")
        resolved.update({k: float(v) for k, v in weights.items()})
    return resolved


def total_reward(
    raw_response: str,
    gt: GroundTruthRecord,
    enc: EncoderProvider,
    cfg: RewardConfig | None = None,
    *,
    page_store: PageStore | None = None,
    ablate: frozenset[str] | set[str] = frozenset(),
    weights: Mapping[str, float] | None = None,
    strict_answer_in_chain: bool = False,
) -> RewardBreakdown:
    """Score one raw response against its record: parse, then all four rewards.

    ``ablate`` names components forced to 0 (their diagnostics are still
    recorded); ``weights`` optionally rescales components before summing,
    defaulting to 1 everywhere.  The returned breakdown is fully populated
    or the call raises; it is never partial.

    Raises:
        PageOutOfRange: step evidence cites a page beyond the candidate set.
        ProviderUnavailable: encoder failed after retry (sample retriable).
    """
    cfg = cfg if cfg is not None else RewardConfig()
    unknown = set(ablate) - set(REWARD_COMPONENTS)
    if unknown:
        raise ValueError(f"unknown reward components: {sorted(unknown)}")
    scale = _resolve_weights(weights)

    outcome = parse_response(raw_response, strict_answer_in_chain=strict_answer_in_chain)
    t = outcome.trajectory

    if not t.format_ok:
        r_acc, r_step, r_ground, r_format = 0.0, 0.0, 0.0, -1.0
        s_min: float | None = None
        i_max: float | None = None
        per_step: tuple[tuple[int, float], ...] = ()
    else:
        r_acc = accuracy_reward(t.answer_text, gt.gold_answer)
        alignment = step_alignment(t, gt.pages, enc, page_store)
        r_step = stepwise_reward(alignment.s_min, alignment.max_overlap, r_acc, cfg)
        r_ground = grounding_reward(t, gt, cfg)
        r_format = 1.0
        s_min = alignment.s_min
        i_max = alignment.max_overlap if t.evidence_count >= 2 else None
        per_step = alignment.per_step

    components = {"acc": r_acc, "step": r_step, "ground": r_ground, "format": r_format}
    for name in components:
        if name in ablate:
            components[name] = 0.0
        else:
            components[name] = scale[name] * components[name]

    return RewardBreakdown.from_components(
        r_acc=components["acc"],
        r_step=components["step"],
        r_ground=components["ground"],
        r_format=components["format"],
        s_min=s_min,
        i_max=i_max,
        per_step_scores=per_step,
    )
