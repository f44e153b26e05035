"""Group-relative advantages and a desk-scale policy-optimization simulator.

The simulator optimizes a categorical policy over a finite set of response
templates against a small synthetic world, demonstrating end to end that
the reward design steers probability mass onto the grounded-correct
behavior, without any neural network or GPU.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .core import (
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    GroundTruthRecord,
    PageRef,
    ReasoningStep,
    RewardBreakdown,
    RewardConfig,
)
from .embedding import MockEncoder
from .errors import GroupTooSmall
from .imaging import InMemoryPageStore, SyntheticPage, TextRegion
from .parser import serialize_trajectory
from .rewards import total_reward

_DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GroupAdvantage:
    """Per-rollout normalized advantages for one query's sample group."""

    advantages: tuple[float, ...]


def group_advantage(rewards: list[float] | tuple[float, ...]) -> GroupAdvantage:
    """Z-score each reward within its group (population statistics).

    A group with (numerically) constant rewards yields all-zero advantages
    instead of dividing by a vanishing spread.

    Raises:
        GroupTooSmall: fewer than two rollouts.
    """
    n = len(rewards)
    if n < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {n}")
    mean = math.fsum(rewards) / n
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
    if std < _DEGENERATE_STD:
        return GroupAdvantage(advantages=(0.0,) * n)
    return GroupAdvantage(advantages=tuple((r - mean) / std for r in rewards))


@dataclass(frozen=True)
class GroupSample:
    """One query's rollout group with its scored breakdowns."""

    query_id: str
    rollouts: tuple[tuple[str, RewardBreakdown], ...]
    group_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "rollouts", tuple(self.rollouts))
        if self.group_size < 2:
            raise GroupTooSmall(f"group size must be >= 2, got {self.group_size}")
        if len(self.rollouts) != self.group_size:
            raise ValueError(
                f"expected {self.group_size} rollouts, got {len(self.rollouts)}"
            )


@dataclass
class TemplatePolicy:
    """Categorical policy over response templates (softmax of logits)."""

    logits: list[float]
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def probabilities(self) -> list[float]:
        scaled = [l / self.temperature for l in self.logits]
        peak = max(scaled)
        exps = [math.exp(s - peak) for s in scaled]
        total = math.fsum(exps)
        return [e / total for e in exps]


@dataclass(frozen=True)
class TrajectoryTemplate:
    """Named, pre-serialized response blueprint the policy can emit."""

    name: str
    response: str


@dataclass(frozen=True)
class SyntheticWorld:
    """Pages with text regions, one query, and a finite behavior space."""

    pages: tuple[SyntheticPage, ...]
    page_refs: tuple[PageRef, ...]
    record: GroundTruthRecord
    templates: tuple[TrajectoryTemplate, ...]

    def __post_init__(self) -> None:
        if len(self.pages) != len(self.page_refs):
            raise ValueError("each page needs exactly one page ref")
        if len(self.templates) < 2:
            raise ValueError("a world needs at least two templates to optimize over")

    def page_store(self) -> InMemoryPageStore:
        return InMemoryPageStore(
            {ref.image_locator: page for ref, page in zip(self.page_refs, self.pages)}
        )


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mean_reward: float
    sa_pass_rate: float
    modal_template: str
    probabilities: tuple[float, ...]
    logits: tuple[float, ...]


@dataclass(frozen=True)
class SimulationTrace:
    """Full per-iteration history of one simulator run."""

    template_names: tuple[str, ...]
    records: tuple[IterationRecord, ...]
    template_breakdowns: tuple[RewardBreakdown, ...]

    @property
    def final_probabilities(self) -> dict[str, float]:
        last = self.records[-1]
        return dict(zip(self.template_names, last.probabilities))

    @property
    def modal_template(self) -> str:
        return self.records[-1].modal_template

    def iter_json_rows(self):
        for rec in self.records:
            yield {
                "iteration": rec.iteration,
                "mean_reward": rec.mean_reward,
                "sa_pass_rate": rec.sa_pass_rate,
                "modal_template": rec.modal_template,
                "probabilities": dict(zip(self.template_names, rec.probabilities)),
            }


def score_templates(
    world: SyntheticWorld,
    cfg: RewardConfig,
    ablation: frozenset[str] | set[str] = frozenset(),
    encoder_dim: int = 256,
) -> tuple[RewardBreakdown, ...]:
    """Score every template once; templates are fixed so scores are reusable."""
    enc = MockEncoder(encoder_dim)
    store = world.page_store()
    return tuple(
        total_reward(
            template.response,
            world.record,
            enc,
            cfg,
            page_store=store,
            ablate=frozenset(ablation),
        )
        for template in world.templates
    )


def run_simulation(
    world: SyntheticWorld,
    cfg: RewardConfig,
    steps: int,
    seed: int,
    ablation: frozenset[str] | set[str] = frozenset(),
    group_size: int = 8,
    learning_rate: float = 0.2,
    temperature: float = 1.0,
    encoder_dim: int = 256,
) -> SimulationTrace:
    """Optimize the template policy by group-normalized policy gradient.

    Each iteration samples a group of templates, scores them with the full
    reward (components named in ``ablation`` forced to 0), normalizes the
    rewards within the group, and ascends the expected advantage-weighted
    log-likelihood.  Fully deterministic for a fixed (world, cfg, steps,
    seed, ablation) tuple.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if group_size < 2:
        raise GroupTooSmall(f"group size must be >= 2, got {group_size}")

    breakdowns = score_templates(world, cfg, ablation, encoder_dim)
    rewards = [bd.total for bd in breakdowns]
    sa_pass = [bd.s_min is not None and bd.s_min >= cfg.tau for bd in breakdowns]

    rng = random.Random(seed)
    policy = TemplatePolicy(logits=[0.0] * len(world.templates), temperature=temperature)
    names = tuple(t.name for t in world.templates)
    records = []

    for iteration in range(1, steps + 1):
        probs = policy.probabilities()
        indices = rng.choices(range(len(names)), weights=probs, k=group_size)
        group = GroupSample(
            query_id=world.record.query_id,
            rollouts=tuple(
                (world.templates[i].response, breakdowns[i]) for i in indices
            ),
            group_size=group_size,
        )
        group_rewards = [bd.total for _, bd in group.rollouts]
        advantages = group_advantage(group_rewards).advantages

        # REINFORCE on the categorical policy: d log p(i) / d logit_j =
        # (1[i == j] - p_j) / temperature.
        grad = [0.0] * len(names)
        for sample_idx, adv in zip(indices, advantages):
            for j in range(len(names)):
                indicator = 1.0 if sample_idx == j else 0.0
                grad[j] += adv * (indicator - probs[j]) / policy.temperature
        for j in range(len(names)):
            policy.logits[j] += learning_rate * grad[j]

        post = policy.probabilities()
        modal = names[max(range(len(names)), key=lambda j: post[j])]
        records.append(
            IterationRecord(
                iteration=iteration,
                mean_reward=math.fsum(group_rewards) / group_size,
                sa_pass_rate=sum(1 for i in indices if sa_pass[i]) / group_size,
                modal_template=modal,
                probabilities=tuple(post),
                logits=tuple(policy.logits),
            )
        )

    return SimulationTrace(
        template_names=names,
        records=tuple(records),
        template_breakdowns=breakdowns,
    )


def _step(text: str, ref: EvidenceRef | None = None) -> ReasoningStep:
    return ReasoningStep(text=text, evidence=(ref,) if ref else ())


def _template(name: str, steps, answer: str, answer_ref: EvidenceRef) -> TrajectoryTemplate:
    trajectory = CoETrajectory(
        steps=tuple(steps),
        answer_text=answer,
        answer_evidence=answer_ref,
        raw="",
        format_ok=True,
    )
    return TrajectoryTemplate(name=name, response=serialize_trajectory(trajectory))


def default_world() -> SyntheticWorld:
    """The shipped single-page world: one easy query, five behaviors.

    Template behaviors, in order: grounded_correct (the unique optimum),
    ungrounded_correct (right answer, off-target step crops),
    duplicated_box (repeats one evidence region), wrong_answer, malformed.
    """
    intro = TextRegion(BoundingBox(50, 40, 450, 110), "travel notes on european capitals")
    fact = TextRegion(BoundingBox(50, 200, 460, 280), "the capital of france is paris")
    other = TextRegion(BoundingBox(50, 360, 470, 440), "berlin is the capital of germany")
    page = SyntheticPage(width=1000, height=800, regions=(intro, fact, other))
    page_ref = PageRef(page_id="sim-page-1", image_locator="memory:sim-page-1", width=1000, height=800)

    record = GroundTruthRecord(
        query_id="sim-q1",
        question="what is the capital of france",
        gold_answer="Paris",
        gold_page_index=1,
        gold_box=fact.box,
        pages=(page_ref,),
        pos_idx=0,
    )

    ref_intro = EvidenceRef(1, intro.box)
    ref_fact = EvidenceRef(1, fact.box)
    ref_other = EvidenceRef(1, other.box)
    # Boxes over blank page areas: no region content underneath.
    ref_blank_a = EvidenceRef(1, BoundingBox(600, 500, 760, 580))
    ref_blank_b = EvidenceRef(1, BoundingBox(800, 620, 950, 700))

    templates = (
        _template(
            "grounded_correct",
            [_step(intro.text, ref_intro), _step(fact.text, ref_fact)],
            "Paris",
            ref_fact,
        ),
        _template(
            "ungrounded_correct",
            [
                _step("scanning the page for relevant text", ref_blank_a),
                _step("the capital of france is paris", ref_blank_b),
            ],
            "Paris",
            ref_fact,
        ),
        _template(
            "duplicated_box",
            [_step(other.text, ref_other), _step(other.text, ref_other)],
            "Paris",
            ref_other,
        ),
        _template(
            "wrong_answer",
            [_step(other.text, ref_other)],
            "Berlin",
            ref_other,
        ),
        TrajectoryTemplate(name="malformed", response="The capital is Paris, obviously."),
    )

    return SyntheticWorld(
        pages=(page,), page_refs=(page_ref,), record=record, templates=templates
    )


def world_to_mapping(world: SyntheticWorld) -> dict:
    from .imaging import synthetic_page_to_mapping

    return {
        "pages": [
            {
                "page_id": ref.page_id,
                "image_locator": ref.image_locator,
                **synthetic_page_to_mapping(page),
            }
            for ref, page in zip(world.page_refs, world.pages)
        ],
        "record": {
            "query_id": world.record.query_id,
            "question": world.record.question,
            "gold_answer": world.record.gold_answer,
            "gold_box": (
                list(world.record.gold_box.as_tuple()) if world.record.gold_box else None
            ),
            "pos_idx": world.record.pos_idx,
        },
        "templates": [
            {"name": t.name, "response": t.response} for t in world.templates
        ],
    }


def world_from_mapping(payload: dict) -> SyntheticWorld:
    from .core import page_index_for_pos, validate_box
    from .imaging import synthetic_page_from_mapping

    pages = []
    refs = []
    for entry in payload["pages"]:
        page = synthetic_page_from_mapping(entry, source=entry.get("page_id", "?"))
        pages.append(page)
        refs.append(
            PageRef(
                page_id=str(entry["page_id"]),
                image_locator=str(entry["image_locator"]),
                width=page.width,
                height=page.height,
            )
        )
    rec = payload["record"]
    pos_idx = int(rec["pos_idx"])
    gold_box = rec.get("gold_box")
    record = GroundTruthRecord(
        query_id=str(rec["query_id"]),
        question=str(rec["question"]),
        gold_answer=str(rec["gold_answer"]),
        gold_page_index=page_index_for_pos(pos_idx),
        gold_box=validate_box(*gold_box) if gold_box is not None else None,
        pages=tuple(refs),
        pos_idx=pos_idx,
    )
    templates = tuple(
        TrajectoryTemplate(name=str(t["name"]), response=str(t["response"]))
        for t in payload["templates"]
    )
    return SyntheticWorld(
        pages=tuple(pages), page_refs=tuple(refs), record=record, templates=templates
    )
