import json

import pytest

from coeforge.core import (
    NO_ANSWER_SENTINEL,
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    GroundTruthRecord,
    PageRef,
    ReasoningStep,
    RewardConfig,
)
from coeforge.embedding import MockEncoder
from coeforge.errors import InsufficientCandidates, SchemaError, UnresolvedQueryId
from coeforge.evalset import (
    DATASET_SCHEMA,
    PREDICTIONS_SCHEMA,
    PredictionRecord,
    build_candidate_set,
    build_multi_image_record,
    cold_start_filter,
    evaluate,
    load_dataset,
    load_predictions,
    metric_em,
    metric_iou_at,
    metric_sa,
    no_answer_accuracy,
    record_from_mapping,
    record_to_mapping,
    write_tagged_jsonl,
)
from coeforge.grpo import default_world
from coeforge.parser import serialize_trajectory
from coeforge.rewards import grounding_reward

CFG = RewardConfig()
WORLD = default_world()
ENC = MockEncoder(256)
STORE = WORLD.page_store()

GOLD_BOX = WORLD.record.gold_box
GOLD_REF = EvidenceRef(1, GOLD_BOX)


def response(answer="Paris", answer_ref=GOLD_REF, steps=None):
    if steps is None:
        steps = (ReasoningStep("the capital of france is paris", (GOLD_REF,)),)
    return serialize_trajectory(
        CoETrajectory(
            steps=tuple(steps),
            answer_text=answer,
            answer_evidence=answer_ref,
            raw="",
            format_ok=True,
        )
    )


def gts():
    return {WORLD.record.query_id: WORLD.record}


def preds(*responses):
    return [PredictionRecord(WORLD.record.query_id, r) for r in responses]


class TestMetricEm:
    def test_all_exact(self):
        assert metric_em(preds(response(), response()), gts()) == 1.0

    def test_one_of_four(self):
        rows = preds(response(), response("Lyon"), response("Nice"), response("Toulouse"))
        assert metric_em(rows, gts()) == 0.25

    def test_unparseable_scores_zero(self):
        assert metric_em(preds("no tags at all"), gts()) == 0.0

    def test_unanswerable_counts_no_answer_as_correct(self):
        record = GroundTruthRecord(
            query_id="na", question="?", gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None, gold_box=None, pages=WORLD.record.pages, pos_idx=-1,
        )
        rows = [PredictionRecord("na", response(NO_ANSWER_SENTINEL))]
        assert metric_em(rows, {"na": record}) == 1.0

    def test_unknown_query_id(self):
        with pytest.raises(UnresolvedQueryId):
            metric_em([PredictionRecord("ghost", response())], gts())

    def test_empty_predictions(self):
        assert metric_em([], gts()) == 0.0


class TestMetricIou:
    def test_same_box_counts(self):
        assert metric_iou_at(preds(response()), gts()) == 1.0

    def test_wrong_page_does_not_count(self):
        wrong_page = EvidenceRef(1, GOLD_BOX)
        record = GroundTruthRecord(
            query_id="two", question="?", gold_answer="Paris",
            gold_page_index=2, gold_box=GOLD_BOX,
            pages=(WORLD.record.pages[0],
                   PageRef("p2", "memory:p2", 1000, 800)),
            pos_idx=1,
        )
        rows = [PredictionRecord("two", response(answer_ref=wrong_page))]
        assert metric_iou_at(rows, {"two": record}) == 0.0

    def test_unanswerable_excluded_from_denominator(self):
        record = GroundTruthRecord(
            query_id="na", question="?", gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None, gold_box=None, pages=WORLD.record.pages, pos_idx=-1,
        )
        both = {**gts(), "na": record}
        rows = preds(response()) + [PredictionRecord("na", response(NO_ANSWER_SENTINEL))]
        assert metric_iou_at(rows, both) == 1.0  # denominator is the 1 answerable row

    def test_format_failure_scores_zero(self):
        assert metric_iou_at(preds("garbage"), gts()) == 0.0


class TestMetricSa:
    def test_grounded_passes(self):
        assert metric_sa(preds(response()), gts(), ENC, page_store=STORE) == 1.0

    def test_one_off_target_crop_fails_min(self):
        off = EvidenceRef(1, BoundingBox(600, 500, 760, 580))  # blank area
        steps = (
            ReasoningStep("the capital of france is paris", (GOLD_REF,)),
            ReasoningStep("another look", (off,)),
        )
        assert metric_sa(preds(response(steps=steps)), gts(), ENC, page_store=STORE) == 0.0

    def test_k0_fails(self):
        steps = (ReasoningStep("just thinking"),)
        assert metric_sa(preds(response(steps=steps)), gts(), ENC, page_store=STORE) == 0.0

    def test_no_accuracy_gate(self):
        # wrong answer, perfectly attributed steps: SA still passes
        rows = preds(response(answer="Berlin"))
        assert metric_sa(rows, gts(), ENC, page_store=STORE) == 1.0


class TestNoAnswerAccuracy:
    def _record(self, qid):
        return GroundTruthRecord(
            query_id=qid, question="?", gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None, gold_box=None, pages=WORLD.record.pages, pos_idx=-1,
        )

    def test_fraction(self):
        records = {f"na{i}": self._record(f"na{i}") for i in range(4)}
        rows = [
            PredictionRecord("na0", response(NO_ANSWER_SENTINEL)),
            PredictionRecord("na1", response(NO_ANSWER_SENTINEL)),
            PredictionRecord("na2", response("made up")),
            PredictionRecord("na3", response("also wrong")),
        ]
        assert no_answer_accuracy(rows, records) == 0.5

    def test_absent_without_unanswerable_records(self):
        assert no_answer_accuracy(preds(response()), gts()) is None

    def test_all_detected(self):
        records = {"na0": self._record("na0")}
        rows = [PredictionRecord("na0", response(NO_ANSWER_SENTINEL))]
        assert no_answer_accuracy(rows, records) == 1.0


class TestEvaluate:
    def test_report_aggregates_match_per_sample_means(self):
        rows = preds(response(), response("Berlin"), "garbage")
        report = evaluate(rows, gts(), ENC, CFG, page_store=STORE)
        assert report.n_total == 3
        assert report.em == sum(s.em_bit for s in report.per_sample) / 3
        iou_bits = [s.iou_bit for s in report.per_sample if s.iou_bit is not None]
        assert report.iou_at_05 == sum(iou_bits) / len(iou_bits)
        assert report.sa == sum(s.sa_bit for s in report.per_sample) / 3
        assert report.no_answer_accuracy is None

    def test_iou_bit_consistent_with_grounding_reward(self):
        from coeforge.parser import parse_response

        rows = preds(
            response(),
            response(answer_ref=EvidenceRef(1, BoundingBox(600, 500, 700, 580))),
            "garbage",
            response(answer="Berlin"),
        )
        report = evaluate(rows, gts(), ENC, CFG, page_store=STORE)
        for pred, sample in zip(rows, report.per_sample):
            t = parse_response(pred.raw_response).trajectory
            gated_ground = grounding_reward(t, WORLD.record, CFG) if t.format_ok else 0.0
            assert (sample.iou_bit == 1) == (gated_ground == 1.0)

    def test_deterministic_and_concurrency_independent(self):
        rows = preds(response(), response("Berlin"), "garbage")
        a = evaluate(rows, gts(), ENC, CFG, page_store=STORE, concurrency=8)
        b = evaluate(rows, gts(), ENC, CFG, page_store=STORE, concurrency=1)
        assert a == b

    def test_phantom_page_citation_degrades_instead_of_crashing(self):
        ev_ok = '{"bbox_2d": [50, 200, 460, 280], "image_index": 1}'
        ev_bad = '{"bbox_2d": [50, 200, 460, 280], "image_index": 9}'
        raw = f"<think>citing a phantom page {ev_bad}</think><answer>Paris {ev_ok}</answer>"
        report = evaluate(preds(raw), gts(), ENC, CFG, page_store=STORE)
        sample = report.per_sample[0]
        assert sample.em_bit == 1 and sample.iou_bit == 1
        assert sample.sa_bit == 0
        assert sample.breakdown.r_step == 0.0
        assert sample.breakdown.s_min is None
        assert sample.breakdown.r_format == 1.0


class TestColdStartFilter:
    def _candidate(self, answer, gold):
        return (response(answer), gold)

    def test_boundary_inclusive(self):
        gold = "alpha beta gamma delta epsilon"
        at_gamma = self._candidate("alpha beta gamma delta", gold)      # recall 0.8
        below = self._candidate(" ".join(f"t{i}" for i in range(79)),
                                " ".join(f"t{i}" for i in range(100)))  # recall 0.79
        outcome = cold_start_filter([at_gamma, below], 0.8)
        assert outcome.retained == (at_gamma,)
        assert [idx for idx, _ in outcome.rejected] == [1]

    def test_unparseable_dropped_with_reason(self):
        outcome = cold_start_filter([("no tags here", "gold words")], 0.8)
        assert outcome.retained == ()
        assert outcome.rejected[0][0] == 0
        assert "unparseable" in outcome.rejected[0][1]

    def test_low_recall_dropped(self):
        outcome = cold_start_filter([self._candidate("wrong", "right words")], 0.8)
        assert outcome.retained == ()


class TestBuildCandidateSet:
    SOURCE = PageRef("src", "src.json", 100, 100)
    POOL = [PageRef(f"n{i}", f"n{i}.json", 100, 100) for i in range(10)]

    def test_no_answer_branch(self):
        for seed in range(200):
            pages, pos = build_candidate_set(self.SOURCE, self.POOL, 3, 1.0, seed)
            assert pos == -1
            assert all(p.page_id != "src" for p in pages)
            assert len({p.page_id for p in pages}) == 3

    def test_answerable_branch(self):
        for seed in range(200):
            pages, pos = build_candidate_set(self.SOURCE, self.POOL, 3, 0.0, seed)
            assert pages[pos].page_id == "src"
            others = [p.page_id for i, p in enumerate(pages) if i != pos]
            assert "src" not in others
            assert len(set(others)) == 2

    def test_deterministic(self):
        a = build_candidate_set(self.SOURCE, self.POOL, 3, 0.2, 99)
        b = build_candidate_set(self.SOURCE, self.POOL, 3, 0.2, 99)
        assert ([p.page_id for p in a[0]], a[1]) == ([p.page_id for p in b[0]], b[1])

    def test_insufficient_candidates(self):
        with pytest.raises(InsufficientCandidates):
            build_candidate_set(self.SOURCE, self.POOL[:2], 3, 0.2, 1)

    def test_source_in_retrievals_is_excluded(self):
        pool = [self.SOURCE] + self.POOL[:3]
        pages, pos = build_candidate_set(self.SOURCE, pool, 3, 0.0, 5)
        assert [p for p in pages if p.page_id == "src"] == [pages[pos]]

    def test_probability_validation(self):
        with pytest.raises(ValueError):
            build_candidate_set(self.SOURCE, self.POOL, 3, 1.5, 0)


class TestBuildMultiImageRecord:
    def _single(self):
        page = PageRef("src", "src.json", 100, 100)
        return GroundTruthRecord(
            query_id="q1", question="?", gold_answer="answer words",
            gold_page_index=1, gold_box=BoundingBox(0, 0, 10, 10),
            pages=(page,), pos_idx=0,
        )

    def test_no_answer_conversion(self):
        record = build_multi_image_record(
            self._single(), TestBuildCandidateSet.POOL, 3, 1.0, 7
        )
        assert record.pos_idx == -1
        assert record.gold_answer == NO_ANSWER_SENTINEL
        assert record.gold_box is None

    def test_answerable_keeps_gold(self):
        record = build_multi_image_record(
            self._single(), TestBuildCandidateSet.POOL, 3, 0.0, 7
        )
        assert record.gold_answer == "answer words"
        assert record.pages[record.pos_idx].page_id == "src"
        assert record.gold_page_index == record.pos_idx + 1


class TestFileFormats:
    def test_dataset_round_trip(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_tagged_jsonl(
            path, DATASET_SCHEMA, [record_to_mapping(WORLD.record)]
        )
        loaded = load_dataset(path)
        assert loaded[WORLD.record.query_id] == WORLD.record

    def test_missing_schema_tag(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(record_to_mapping(WORLD.record)) + "\n")
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_tagged_jsonl(path, PREDICTIONS_SCHEMA, [])
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_duplicate_query_id(self, tmp_path):
        path = tmp_path / "d.jsonl"
        row = record_to_mapping(WORLD.record)
        write_tagged_jsonl(path, DATASET_SCHEMA, [row, row])
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({"schema": DATASET_SCHEMA}) + "\n{broken\n")
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_predictions_round_trip(self, tmp_path):
        path = tmp_path / "p.jsonl"
        write_tagged_jsonl(
            path, PREDICTIONS_SCHEMA, [{"query_id": "a", "response": "text"}]
        )
        assert load_predictions(path) == [PredictionRecord("a", "text")]

    def test_record_mapping_round_trip_unanswerable(self):
        record = GroundTruthRecord(
            query_id="na", question="?", gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None, gold_box=None, pages=WORLD.record.pages, pos_idx=-1,
        )
        assert record_from_mapping(record_to_mapping(record)) == record

    def test_degenerate_gold_box_rejected_at_load(self):
        row = record_to_mapping(WORLD.record)
        row["gold_box"] = [10, 10, 10, 20]
        with pytest.raises(SchemaError):
            record_from_mapping(row)

    def test_negative_gold_box_rejected_at_load(self):
        row = record_to_mapping(WORLD.record)
        row["gold_box"] = [-1, 10, 20, 20]
        with pytest.raises(SchemaError):
            record_from_mapping(row)
