import json

import pytest
from hypothesis import given, strategies as st

from coeforge.core import (
    NO_ANSWER_SENTINEL,
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    GroundTruthRecord,
    PageRef,
    ReasoningStep,
    RewardBreakdown,
    RewardConfig,
    page_index_for_pos,
    validate_box,
)
from coeforge.errors import DegenerateBox, NegativeCoordinate
from coeforge.evalset import record_from_mapping, record_to_mapping


class TestValidateBox:
    def test_area(self):
        box = validate_box(0, 0, 10, 10)
        assert box.area == 100

    def test_zero_width_rejected(self):
        with pytest.raises(DegenerateBox):
            validate_box(5, 5, 5, 9)

    def test_negative_rejected(self):
        with pytest.raises(NegativeCoordinate):
            validate_box(-1, 0, 4, 4)

    def test_inverted_rejected(self):
        with pytest.raises(DegenerateBox):
            validate_box(10, 0, 5, 5)

    def test_coordinates_stored_as_floats(self):
        box = validate_box(1, 2, 3, 4)
        assert all(isinstance(v, float) for v in box.as_tuple())
        assert box == BoundingBox(1.0, 2.0, 3.0, 4.0)


class TestEvidenceRef:
    def test_page_index_must_be_positive(self):
        with pytest.raises(ValueError):
            EvidenceRef(0, BoundingBox(0, 0, 1, 1))

    def test_page_index_must_be_int(self):
        with pytest.raises(TypeError):
            EvidenceRef(1.0, BoundingBox(0, 0, 1, 1))


class TestReasoningStep:
    def test_blank_text_rejected(self):
        with pytest.raises(ValueError):
            ReasoningStep("   ")


class TestTrajectory:
    def _ref(self):
        return EvidenceRef(1, BoundingBox(0, 0, 5, 5))

    def test_format_ok_requires_answer_evidence(self):
        with pytest.raises(ValueError):
            CoETrajectory(
                steps=(ReasoningStep("a"),),
                answer_text="x",
                answer_evidence=None,
                raw="",
                format_ok=True,
            )

    def test_format_ok_requires_steps(self):
        with pytest.raises(ValueError):
            CoETrajectory(
                steps=(),
                answer_text="x",
                answer_evidence=self._ref(),
                raw="",
                format_ok=True,
            )

    def test_evidence_count_and_chain_flag(self):
        ref = self._ref()
        other = EvidenceRef(1, BoundingBox(10, 10, 20, 20))
        t = CoETrajectory(
            steps=(ReasoningStep("a", (ref, other)), ReasoningStep("b")),
            answer_text="x",
            answer_evidence=ref,
            raw="",
            format_ok=True,
        )
        assert t.evidence_count == 2
        assert t.answer_evidence_in_chain
        t2 = CoETrajectory(
            steps=(ReasoningStep("a", (other,)),),
            answer_text="x",
            answer_evidence=ref,
            raw="",
            format_ok=True,
        )
        assert not t2.answer_evidence_in_chain


class TestRewardConfig:
    def test_defaults(self):
        cfg = RewardConfig()
        assert (cfg.tau, cfg.delta, cfg.epsilon, cfg.gamma, cfg.iou_at) == (
            0.3, 0.5, 0.4, 0.8, 0.5,
        )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tau": 0.0},
            {"tau": 1.0},
            {"delta": 0.0},
            {"delta": 1.5},
            {"epsilon": -0.1},
            {"gamma": 1.2},
            {"iou_at": 2.0},
        ],
    )
    def test_range_validation(self, kwargs):
        with pytest.raises(ValueError):
            RewardConfig(**kwargs)


class TestRewardBreakdown:
    def test_total_must_be_exact_sum(self):
        with pytest.raises(ValueError):
            RewardBreakdown(r_acc=0.5, r_step=0.5, r_ground=1.0, r_format=1.0, total=3.1)

    def test_from_components(self):
        bd = RewardBreakdown.from_components(0.75, 0.5, 1.0, 1.0)
        assert bd.total == 0.75 + 0.5 + 1.0 + 1.0

    @given(
        st.floats(0, 1, allow_nan=False),
        st.sampled_from([0.0, 0.5, 1.0]),
        st.sampled_from([0.0, 1.0]),
        st.sampled_from([-1.0, 1.0]),
    )
    def test_sum_invariant_holds_for_any_components(self, acc, step, ground, fmt):
        bd = RewardBreakdown.from_components(acc, step, ground, fmt)
        assert bd.total == bd.r_acc + bd.r_step + bd.r_ground + bd.r_format


class TestPageIndexConversion:
    def test_minus_one_is_none(self):
        assert page_index_for_pos(-1) is None

    def test_zero_based_to_one_based(self):
        assert page_index_for_pos(0) == 1
        assert page_index_for_pos(2) == 3

    def test_below_minus_one_rejected(self):
        with pytest.raises(ValueError):
            page_index_for_pos(-2)


def _pages(n):
    return tuple(
        PageRef(page_id=f"p{i}", image_locator=f"pages/p{i}.json", width=100, height=80)
        for i in range(n)
    )


class TestGroundTruthRecord:
    def test_unanswerable_coupling(self):
        record = GroundTruthRecord(
            query_id="q", question="?", gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None, gold_box=None, pages=_pages(3), pos_idx=-1,
        )
        assert not record.answerable
        assert record.source_page is None

    def test_unanswerable_requires_sentinel(self):
        with pytest.raises(ValueError):
            GroundTruthRecord(
                query_id="q", question="?", gold_answer="something",
                gold_page_index=None, gold_box=None, pages=_pages(3), pos_idx=-1,
            )

    def test_answerable_requires_gold_box(self):
        with pytest.raises(ValueError):
            GroundTruthRecord(
                query_id="q", question="?", gold_answer="x",
                gold_page_index=1, gold_box=None, pages=_pages(3), pos_idx=0,
            )

    def test_gold_page_index_must_match_pos(self):
        with pytest.raises(ValueError):
            GroundTruthRecord(
                query_id="q", question="?", gold_answer="x",
                gold_page_index=3, gold_box=BoundingBox(0, 0, 5, 5),
                pages=_pages(3), pos_idx=0,
            )

    def test_pos_must_be_inside_candidates(self):
        with pytest.raises(ValueError):
            GroundTruthRecord(
                query_id="q", question="?", gold_answer="x",
                gold_page_index=4, gold_box=BoundingBox(0, 0, 5, 5),
                pages=_pages(3), pos_idx=3,
            )

    def test_source_page(self):
        record = GroundTruthRecord(
            query_id="q", question="?", gold_answer="x",
            gold_page_index=2, gold_box=BoundingBox(0, 0, 5, 5),
            pages=_pages(3), pos_idx=1,
        )
        assert record.source_page == record.pages[1]


@st.composite
def records(draw):
    n_pages = draw(st.integers(1, 4))
    pages = tuple(
        PageRef(
            page_id=f"p{i}",
            image_locator=f"pages/p{i}.json",
            width=draw(st.integers(10, 2000)),
            height=draw(st.integers(10, 2000)),
        )
        for i in range(n_pages)
    )
    words = st.text(alphabet="abcdefgh ", min_size=1, max_size=20)
    unanswerable = draw(st.booleans())
    if unanswerable:
        return GroundTruthRecord(
            query_id=draw(st.uuids()).hex,
            question=draw(words),
            gold_answer=NO_ANSWER_SENTINEL,
            gold_page_index=None,
            gold_box=None,
            pages=pages,
            pos_idx=-1,
        )
    pos = draw(st.integers(0, n_pages - 1))
    x1 = draw(st.integers(0, 50))
    y1 = draw(st.integers(0, 50))
    gold_box = BoundingBox(x1, y1, x1 + draw(st.integers(1, 40)), y1 + draw(st.integers(1, 40)))
    return GroundTruthRecord(
        query_id=draw(st.uuids()).hex,
        question=draw(words),
        gold_answer=draw(st.text(alphabet="abcdefgh", min_size=1, max_size=12)),
        gold_page_index=pos + 1,
        gold_box=gold_box,
        pages=pages,
        pos_idx=pos,
    )


@given(records())
def test_record_round_trips_through_dataset_format(record):
    wire = json.loads(json.dumps(record_to_mapping(record)))
    assert record_from_mapping(wire) == record


def test_record_round_trip_with_fractional_box():
    record = GroundTruthRecord(
        query_id="frac", question="?", gold_answer="x",
        gold_page_index=1,
        gold_box=BoundingBox(0.5, 1.25, 40.75, 40.125),
        pages=_pages(2), pos_idx=0,
    )
    assert record_from_mapping(json.loads(json.dumps(record_to_mapping(record)))) == record
