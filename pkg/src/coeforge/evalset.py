"""Dataset schemas, evaluation metrics, cold-start filtering, and the
multi-image candidate builder.

All file formats are line-delimited JSON with a schema tag as the first
line (the evaluation report is a single JSON document carrying its tag
inline).  See docs/file-formats.md.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import (
    NO_ANSWER_SENTINEL,
    GroundTruthRecord,
    PageRef,
    RewardBreakdown,
    RewardConfig,
    page_index_for_pos,
    validate_box,
)
from .embedding import EncoderProvider
from .errors import (
    DegenerateBox,
    InsufficientCandidates,
    NegativeCoordinate,
    ProviderUnavailable,
    SchemaError,
    UnresolvedQueryId,
)
from .geometry import iou
from .imaging import PageStore
from .parser import CoETrajectory, parse_response
from .rewards import accuracy_reward, grounding_reward, step_alignment, total_reward
from .textmatch import is_no_answer, recall, soft_em

DATASET_SCHEMA = "coe-dataset/v1"
PREDICTIONS_SCHEMA = "coe-predictions/v1"
CANDIDATES_SCHEMA = "coe-candidates/v1"
RETRIEVALS_SCHEMA = "coe-retrievals/v1"
SCORE_REPORT_SCHEMA = "coe-reward-report/v1"
EVAL_REPORT_SCHEMA = "coe-eval-report/v1"
TRACE_SCHEMA = "coe-sim-trace/v1"
WORLD_SCHEMA = "coe-world/v1"

_COMPACT = {"separators": (",", ":"), "sort_keys": True}


@dataclass(frozen=True)
class PredictionRecord:
    """One model response awaiting scoring."""

    query_id: str
    raw_response: str


@dataclass(frozen=True)
class SampleResult:
    """Per-record metric bits; None marks exclusion from that denominator."""

    query_id: str
    em_bit: int
    iou_bit: int | None
    sa_bit: int
    na_bit: int | None
    breakdown: RewardBreakdown


@dataclass(frozen=True)
class EvalReport:
    """Aggregated metrics plus the per-sample rows they were averaged from."""

    n_total: int
    em: float
    iou_at_05: float
    sa: float
    no_answer_accuracy: float | None
    per_sample: tuple[SampleResult, ...]


@dataclass(frozen=True)
class FilterOutcome:
    """Cold-start filter result: kept candidates plus rejection reasons."""

    retained: tuple[tuple[str, str], ...]
    rejected: tuple[tuple[int, str], ...]


# ---------------------------------------------------------------------------
# wire formats


def page_to_mapping(page: PageRef) -> dict:
    return {
        "page_id": page.page_id,
        "image": page.image_locator,
        "width": page.width,
        "height": page.height,
    }


def page_from_mapping(payload: Mapping) -> PageRef:
    try:
        return PageRef(
            page_id=str(payload["page_id"]),
            image_locator=str(payload["image"]),
            width=int(payload["width"]),
            height=int(payload["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed page entry: {exc}") from exc


def record_to_mapping(record: GroundTruthRecord) -> dict:
    payload: dict = {
        "query_id": record.query_id,
        "question": record.question,
        "gold_answer": record.gold_answer,
        "pages": [page_to_mapping(p) for p in record.pages],
        "pos_idx": record.pos_idx,
    }
    if record.gold_page_index is not None:
        payload["gold_page_index"] = record.gold_page_index
    if record.gold_box is not None:
        payload["gold_box"] = list(record.gold_box.as_tuple())
    return payload


def record_from_mapping(payload: Mapping) -> GroundTruthRecord:
    try:
        gold_box = payload.get("gold_box")
        return GroundTruthRecord(
            query_id=str(payload["query_id"]),
            question=str(payload["question"]),
            gold_answer=str(payload["gold_answer"]),
            gold_page_index=payload.get("gold_page_index"),
            gold_box=validate_box(*gold_box) if gold_box is not None else None,
            pages=tuple(page_from_mapping(p) for p in payload["pages"]),
            pos_idx=int(payload["pos_idx"]),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, DegenerateBox, NegativeCoordinate) as exc:
        raise SchemaError(f"malformed dataset record: {exc}") from exc


def breakdown_to_mapping(bd: RewardBreakdown) -> dict:
    return {
        "r_acc": bd.r_acc,
        "r_step": bd.r_step,
        "r_ground": bd.r_ground,
        "r_format": bd.r_format,
        "total": bd.total,
        "s_min": bd.s_min,
        "i_max": bd.i_max,
        "per_step_scores": [[ordinal, score] for ordinal, score in bd.per_step_scores],
    }


def breakdown_from_mapping(payload: Mapping) -> RewardBreakdown:
    return RewardBreakdown(
        r_acc=float(payload["r_acc"]),
        r_step=float(payload["r_step"]),
        r_ground=float(payload["r_ground"]),
        r_format=float(payload["r_format"]),
        total=float(payload["total"]),
        s_min=payload.get("s_min"),
        i_max=payload.get("i_max"),
        per_step_scores=tuple(
            (int(o), float(s)) for o, s in payload.get("per_step_scores", [])
        ),
    )


def _read_tagged_jsonl(path: Path | str, expected_schema: str) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise SchemaError(f"file not found: {path}") from exc
    if not lines:
        raise SchemaError(f"{path}: empty file, expected a schema tag line")
    try:
        tag = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:1: schema tag is not JSON: {exc.msg}") from exc
    if not isinstance(tag, dict) or tag.get("schema") != expected_schema:
        raise SchemaError(
            f"{path}: expected schema {expected_schema!r}, got {tag!r}"
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(row, dict):
            raise SchemaError(f"{path}:{lineno}: expected a JSON object")
        rows.append(row)
    return rows


def write_tagged_jsonl(
    path: Path | str, schema: str, rows: Iterable[Mapping], meta: Mapping | None = None
) -> None:
    tag: dict = {"schema": schema}
    if meta:
        tag.update(meta)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(tag, **_COMPACT) + "\n")
        for row in rows:
            handle.write(json.dumps(row, **_COMPACT) + "\n")


def load_dataset(path: Path | str) -> dict[str, GroundTruthRecord]:
    """Load a dataset file into an ordered query_id -> record mapping."""
    records: dict[str, GroundTruthRecord] = {}
    for row in _read_tagged_jsonl(path, DATASET_SCHEMA):
        try:
            record = record_from_mapping(row)
        except SchemaError:
            raise
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        if record.query_id in records:
            raise SchemaError(f"{path}: duplicate query_id {record.query_id!r}")
        records[record.query_id] = record
    return records


def load_predictions(path: Path | str) -> list[PredictionRecord]:
    predictions = []
    for row in _read_tagged_jsonl(path, PREDICTIONS_SCHEMA):
        try:
            predictions.append(
                PredictionRecord(
                    query_id=str(row["query_id"]), raw_response=str(row["response"])
                )
            )
        except KeyError as exc:
            raise SchemaError(f"{path}: prediction row missing {exc}") from exc
    return predictions


def load_candidates(path: Path | str) -> list[tuple[str, str]]:
    rows = _read_tagged_jsonl(path, CANDIDATES_SCHEMA)
    try:
        return [(str(r["response"]), str(r["gold_answer"])) for r in rows]
    except KeyError as exc:
        raise SchemaError(f"{path}: candidate row missing {exc}") from exc


def load_retrievals(path: Path | str) -> dict[str, list[PageRef]]:
    result: dict[str, list[PageRef]] = {}
    for row in _read_tagged_jsonl(path, RETRIEVALS_SCHEMA):
        try:
            result[str(row["query_id"])] = [
                page_from_mapping(p) for p in row["pages"]
            ]
        except KeyError as exc:
            raise SchemaError(f"{path}: retrieval row missing {exc}") from exc
    return result


# ---------------------------------------------------------------------------
# metric bits


def _resolve(
    predictions: Sequence[PredictionRecord],
    gts: Mapping[str, GroundTruthRecord],
) -> list[tuple[PredictionRecord, GroundTruthRecord]]:
    pairs = []
    for pred in predictions:
        if pred.query_id not in gts:
            raise UnresolvedQueryId(f"unknown query_id {pred.query_id!r}")
        pairs.append((pred, gts[pred.query_id]))
    return pairs


def _em_bit(t: CoETrajectory, gt: GroundTruthRecord) -> int:
    if not t.format_ok:
        return 0
    if not gt.answerable:
        return 1 if is_no_answer(t.answer_text) else 0
    return soft_em(t.answer_text, gt.gold_answer)


def _iou_bit(t: CoETrajectory, gt: GroundTruthRecord, threshold: float) -> int | None:
    if not gt.answerable:
        return None  # no gold box exists; excluded from the denominator
    if not t.format_ok or t.answer_evidence is None or gt.gold_box is None:
        return 0
    if t.answer_evidence.page_index != gt.gold_page_index:
        return 0
    return 1 if iou(t.answer_evidence.box, gt.gold_box) > threshold else 0


def _na_bit(t: CoETrajectory, gt: GroundTruthRecord) -> int | None:
    if gt.answerable:
        return None
    # Detection is judged on the extracted answer text alone, even when the
    # surrounding response violates the grammar.
    return 1 if is_no_answer(t.answer_text) else 0


def metric_em(
    predictions: Sequence[PredictionRecord], gts: Mapping[str, GroundTruthRecord]
) -> float:
    """Mean soft exact match; unanswerable records require "No answer"."""
    pairs = _resolve(predictions, gts)
    if not pairs:
        return 0.0
    bits = [_em_bit(parse_response(p.raw_response).trajectory, gt) for p, gt in pairs]
    return sum(bits) / len(bits)


def metric_iou_at(
    predictions: Sequence[PredictionRecord],
    gts: Mapping[str, GroundTruthRecord],
    threshold: float = 0.5,
) -> float:
    """Fraction of answerable records grounded above the IoU threshold."""
    pairs = _resolve(predictions, gts)
    bits = [
        _iou_bit(parse_response(p.raw_response).trajectory, gt, threshold)
        for p, gt in pairs
    ]
    applicable = [b for b in bits if b is not None]
    if not applicable:
        return 0.0
    return sum(applicable) / len(applicable)


def metric_sa(
    predictions: Sequence[PredictionRecord],
    gts: Mapping[str, GroundTruthRecord],
    enc: EncoderProvider,
    tau: float = 0.3,
    page_store: PageStore | None = None,
) -> float:
    """Fraction of records whose weakest step/evidence cosine clears tau.

    Judges attribution quality alone: no accuracy gate and no overlap term.
    Records with grammar violations or no step evidence score 0.
    """
    pairs = _resolve(predictions, gts)
    if not pairs:
        return 0.0
    bits = []
    for pred, gt in pairs:
        t = parse_response(pred.raw_response).trajectory
        bits.append(_sa_bit(t, gt, enc, tau, page_store))
    return sum(bits) / len(bits)


def _sa_bit(
    t: CoETrajectory,
    gt: GroundTruthRecord,
    enc: EncoderProvider,
    tau: float,
    page_store: PageStore | None,
) -> int:
    if not t.format_ok or t.evidence_count == 0:
        return 0
    alignment = step_alignment(t, gt.pages, enc, page_store)
    return 1 if (alignment.s_min is not None and alignment.s_min >= tau) else 0


def no_answer_accuracy(
    predictions: Sequence[PredictionRecord], gts: Mapping[str, GroundTruthRecord]
) -> float | None:
    """Detection rate over unanswerable records; None when none exist."""
    pairs = _resolve(predictions, gts)
    bits = [
        _na_bit(parse_response(p.raw_response).trajectory, gt) for p, gt in pairs
    ]
    applicable = [b for b in bits if b is not None]
    if not applicable:
        return None
    return sum(applicable) / len(applicable)


def evaluate(
    predictions: Sequence[PredictionRecord],
    gts: Mapping[str, GroundTruthRecord],
    enc: EncoderProvider,
    cfg: RewardConfig | None = None,
    page_store: PageStore | None = None,
    concurrency: int = 8,
    strict_answer_in_chain: bool = False,
) -> EvalReport:
    """Compute all metrics plus a reward breakdown for every prediction.

    Rows are processed concurrently but reduced in input order, so the
    report is deterministic for fixed inputs and config.
    """
    cfg = cfg if cfg is not None else RewardConfig()
    pairs = _resolve(predictions, gts)

    def one(pair: tuple[PredictionRecord, GroundTruthRecord]) -> SampleResult:
        pred, gt = pair
        t = parse_response(
            pred.raw_response, strict_answer_in_chain=strict_answer_in_chain
        ).trajectory
        resolvable = all(
            ref.page_index <= len(gt.pages)
            for step in t.steps
            for ref in step.evidence
        )
        if t.format_ok and not resolvable:
            # A step cites a page outside the candidate set: the attribution
            # is unverifiable, so the process component earns nothing; the
            # encoder-free components are still scored.
            breakdown = RewardBreakdown.from_components(
                accuracy_reward(t.answer_text, gt.gold_answer),
                0.0,
                grounding_reward(t, gt, cfg),
                1.0,
            )
        else:
            breakdown = total_reward(
                pred.raw_response,
                gt,
                enc,
                cfg,
                page_store=page_store,
                strict_answer_in_chain=strict_answer_in_chain,
            )
        sa = 1 if (breakdown.s_min is not None and breakdown.s_min >= cfg.tau) else 0
        return SampleResult(
            query_id=pred.query_id,
            em_bit=_em_bit(t, gt),
            iou_bit=_iou_bit(t, gt, cfg.iou_at),
            sa_bit=sa,
            na_bit=_na_bit(t, gt),
            breakdown=breakdown,
        )

    if pairs and concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            samples = list(pool.map(one, pairs))
    else:
        samples = [one(p) for p in pairs]

    def _mean(values: list[int]) -> float:
        return sum(values) / len(values) if values else 0.0

    iou_bits = [s.iou_bit for s in samples if s.iou_bit is not None]
    na_bits = [s.na_bit for s in samples if s.na_bit is not None]
    return EvalReport(
        n_total=len(samples),
        em=_mean([s.em_bit for s in samples]),
        iou_at_05=_mean(iou_bits),
        sa=_mean([s.sa_bit for s in samples]),
        no_answer_accuracy=_mean(na_bits) if na_bits else None,
        per_sample=tuple(samples),
    )


def eval_report_to_mapping(report: EvalReport, meta: Mapping | None = None) -> dict:
    doc: dict = {"schema": EVAL_REPORT_SCHEMA}
    if meta:
        doc["config"] = dict(meta)
    doc.update(
        {
            "n_total": report.n_total,
            "em": report.em,
            "iou_at_05": report.iou_at_05,
            "sa": report.sa,
            "no_answer_accuracy": report.no_answer_accuracy,
            "per_sample": [
                {
                    "query_id": s.query_id,
                    "em_bit": s.em_bit,
                    "iou_bit": s.iou_bit,
                    "sa_bit": s.sa_bit,
                    "na_bit": s.na_bit,
                    "breakdown": breakdown_to_mapping(s.breakdown),
                }
                for s in report.per_sample
            ],
        }
    )
    return doc


# ---------------------------------------------------------------------------
# data pipeline


def cold_start_filter(
    candidates: Sequence[tuple[str, str]], gamma: float
) -> FilterOutcome:
    """Keep candidates whose extracted answer reaches recall >= gamma.

    The boundary is inclusive: recall exactly gamma is retained.  Responses
    that violate the output grammar are dropped with the offending
    diagnostic as the reason.
    """
    retained = []
    rejected = []
    for index, (response, gold_answer) in enumerate(candidates):
        outcome = parse_response(response)
        if not outcome.trajectory.format_ok:
            first_fatal = outcome.fatal_diagnostics[0]
            rejected.append((index, f"unparseable: {first_fatal.code}"))
            continue
        value = recall(outcome.trajectory.answer_text, gold_answer)
        if value >= gamma:
            retained.append((response, gold_answer))
        else:
            rejected.append((index, f"recall {value:.4f} below {gamma}"))
    return FilterOutcome(retained=tuple(retained), rejected=tuple(rejected))


def build_candidate_set(
    source: PageRef,
    retrieved_topk: Sequence[PageRef],
    m: int,
    no_answer_prob: float,
    rng_seed: int | str,
) -> tuple[list[PageRef], int]:
    """Assemble one multi-image candidate list from retrieval results.

    With probability ``no_answer_prob`` the source page is left out entirely
    (pos_idx -1); otherwise m-1 distinct hard negatives are drawn and the
    source is inserted at a uniformly random slot.  Negatives never include
    the source.  Deterministic for a fixed seed.

    Raises:
        InsufficientCandidates: fewer than m distinct non-source pages
            are available in the retrieval list.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not 0.0 <= no_answer_prob <= 1.0:
        raise ValueError(f"no_answer_prob must be in [0, 1], got {no_answer_prob}")
    pool = []
    seen = {source.page_id}
    for page in retrieved_topk:
        if page.page_id not in seen:
            pool.append(page)
            seen.add(page.page_id)
    if len(pool) < m:
        raise InsufficientCandidates(
            f"need {m} distinct non-source pages, found {len(pool)}"
        )
    # String seeding hashes the seed material, decorrelating the streams of
    # adjacent integer seeds (raw small-int seeding biases the first draw).
    rng = random.Random(f"candidate-set:{rng_seed}")
    if rng.random() < no_answer_prob:
        return rng.sample(pool, m), -1
    negatives = rng.sample(pool, m - 1)
    position = rng.randrange(m)
    pages = negatives[:position] + [source] + negatives[position:]
    return pages, position


def build_multi_image_record(
    record: GroundTruthRecord,
    retrieved_topk: Sequence[PageRef],
    m: int,
    no_answer_prob: float,
    rng_seed: int | str,
) -> GroundTruthRecord:
    """Rewrite a single-source record into a multi-image candidate record.

    When the draw removes the source page, the record becomes unanswerable:
    the gold answer is replaced by the "No answer" sentinel and the gold
    evidence is dropped.
    """
    source = record.source_page
    if source is None:
        raise ValueError(f"record {record.query_id} has no source page")
    pages, pos_idx = build_candidate_set(
        source, retrieved_topk, m, no_answer_prob, rng_seed
    )
    if pos_idx == -1:
        return GroundTruthRecord(
            query_id=record.query_id,
            question=record.question,
            gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None,
            gold_box=None,
            pages=tuple(pages),
            pos_idx=-1,
        )
    return GroundTruthRecord(
        query_id=record.query_id,
        question=record.question,
        gold_answer=record.gold_answer,
        gold_page_index=page_index_for_pos(pos_idx),
        gold_box=record.gold_box,
        pages=tuple(pages),
        pos_idx=pos_idx,
    )


# ---------------------------------------------------------------------------
# batch scoring rows (the reward-report format)


def score_rows(
    predictions: Sequence[PredictionRecord],
    gts: Mapping[str, GroundTruthRecord],
    enc: EncoderProvider,
    cfg: RewardConfig | None = None,
    page_store: PageStore | None = None,
    concurrency: int = 8,
    ablate: frozenset[str] | set[str] = frozenset(),
    strict_answer_in_chain: bool = False,
) -> list[dict]:
    """Score a batch into report rows, one per prediction, in input order.

    Per-row scoring failures (encoder unavailable, out-of-range pages) are
    recorded as error rows instead of aborting the batch.
    """
    cfg = cfg if cfg is not None else RewardConfig()
    pairs = _resolve(predictions, gts)

    def one(pair: tuple[PredictionRecord, GroundTruthRecord]) -> dict:
        pred, gt = pair
        try:
            breakdown = total_reward(
                pred.raw_response,
                gt,
                enc,
                cfg,
                page_store=page_store,
                ablate=ablate,
                strict_answer_in_chain=strict_answer_in_chain,
            )
        except ProviderUnavailable as exc:
            return {
                "query_id": pred.query_id,
                "status": "error",
                "error": "ProviderUnavailable",
                "message": str(exc),
            }
        except Exception as exc:  # noqa: BLE001 - per-row fault isolation
            return {
                "query_id": pred.query_id,
                "status": "error",
                "error": type(exc).__name__,
                "message": str(exc),
            }
        row = {"query_id": pred.query_id, "status": "ok"}
        row.update(breakdown_to_mapping(breakdown))
        return row

    if pairs and concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]
