#!/usr/bin/env python3
"""Regenerate the shipped synthetic dataset, predictions, and golden reports.

Writes data/synthetic/ (pages, dataset.jsonl, predictions.jsonl) and then
runs the score/evaluate commands with the mock:256 encoder to refresh
tests/golden/.  Everything is deterministic: rerunning must be a no-op diff.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from coeforge.cli import main as cli_main  # noqa: E402
from coeforge.core import (  # noqa: E402
    NO_ANSWER_SENTINEL,
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    GroundTruthRecord,
    PageRef,
    ReasoningStep,
    page_index_for_pos,
)
from coeforge.evalset import (  # noqa: E402
    DATASET_SCHEMA,
    PREDICTIONS_SCHEMA,
    record_to_mapping,
    write_tagged_jsonl,
)
from coeforge.imaging import SyntheticPage, TextRegion, synthetic_page_to_mapping  # noqa: E402
from coeforge.parser import serialize_trajectory  # noqa: E402

DATA_DIR = REPO / "data" / "synthetic"
GOLDEN_DIR = REPO / "tests" / "golden"


def box(x1, y1, x2, y2) -> BoundingBox:
    return BoundingBox(x1, y1, x2, y2)


PAGES = {
    "alpha": SyntheticPage(
        width=1000,
        height=800,
        regions=(
            TextRegion(box(60, 40, 520, 110), "solar panel efficiency report for fiscal year 2031"),
            TextRegion(box(60, 160, 540, 240), "the prototype achieved a peak efficiency of 31.4 percent"),
            TextRegion(box(60, 300, 520, 380), "manufacturing costs fell by 12 percent compared to 2030"),
            TextRegion(box(600, 40, 940, 140), "figure 2 shows the temperature coefficient curve"),
        ),
    ),
    "beta": SyntheticPage(
        width=900,
        height=700,
        regions=(
            TextRegion(box(50, 50, 430, 120), "orbital survey of the jovian moons"),
            TextRegion(box(50, 180, 470, 260), "europa hides a subsurface ocean beneath its icy crust"),
            TextRegion(box(50, 320, 460, 400), "ganymede is the largest moon in the solar system"),
        ),
    ),
    "gamma": SyntheticPage(
        width=1100,
        height=850,
        regions=(
            TextRegion(box(80, 60, 560, 130), "annual rainfall statistics for coastal regions"),
            TextRegion(box(80, 200, 600, 280), "the wettest month was march with 340 millimeters of rain"),
            TextRegion(box(80, 340, 580, 420), "drought conditions persisted through august"),
        ),
    ),
}

# Two disjoint boxes per page that cover no region content at all.
EMPTY_BOXES = {
    "alpha": (box(650, 600, 800, 700), (box(820, 600, 960, 700))),
    "beta": (box(600, 500, 720, 600), (box(740, 500, 860, 600))),
    "gamma": (box(700, 600, 850, 750), (box(870, 600, 1020, 750))),
}


def page_ref(name: str) -> PageRef:
    page = PAGES[name]
    return PageRef(
        page_id=f"page-{name}",
        image_locator=f"pages/page_{name}.json",
        width=page.width,
        height=page.height,
    )


# (query_id, question, gold answer, page order, pos_idx, gold region idx,
#  support region idx on the gold page)
ANSWERABLE = [
    ("q-solar-eff", "what peak efficiency did the prototype achieve",
     "31.4 percent", ("alpha", "beta", "gamma"), 0, 1, 0),
    ("q-largest-moon", "which moon is the largest in the solar system",
     "Ganymede", ("alpha", "beta", "gamma"), 1, 2, 0),
    ("q-wettest-month", "which month was the wettest",
     "March", ("beta", "gamma", "alpha"), 1, 1, 0),
    ("q-europa-ocean", "what lies beneath europa's icy crust",
     "a subsurface ocean", ("gamma", "alpha", "beta"), 2, 1, 0),
    ("q-cost-drop", "by how much did manufacturing costs fall",
     "12 percent", ("alpha", "gamma", "beta"), 0, 2, 0),
    ("q-figure-topic", "what does figure 2 show",
     "the temperature coefficient curve", ("beta", "alpha", "gamma"), 1, 3, 0),
    ("q-drought", "through which month did drought conditions persist",
     "August", ("gamma", "alpha", "beta"), 0, 2, 0),
    ("q-report-year", "which fiscal year does the efficiency report cover",
     "2031", ("gamma", "beta", "alpha"), 2, 0, 1),
    ("q-survey-target", "what did the orbital survey examine",
     "the jovian moons", ("beta", "gamma", "alpha"), 0, 0, 1),
    ("q-rain-amount", "how many millimeters of rain fell in the wettest month",
     "340 millimeters", ("alpha", "gamma", "beta"), 1, 1, 0),
]

UNANSWERABLE = [
    ("q-na-boiling", "what is the boiling point of mercury",
     ("alpha", "beta", "gamma")),
    ("q-na-chess", "who won the city chess championship",
     ("gamma", "beta", "alpha")),
]


def build_records() -> list[GroundTruthRecord]:
    records = []
    for qid, question, answer, order, pos, gold_idx, _ in ANSWERABLE:
        gold_page = PAGES[order[pos]]
        records.append(
            GroundTruthRecord(
                query_id=qid,
                question=question,
                gold_answer=answer,
                gold_page_index=page_index_for_pos(pos),
                gold_box=gold_page.regions[gold_idx].box,
                pages=tuple(page_ref(name) for name in order),
                pos_idx=pos,
            )
        )
    for qid, question, order in UNANSWERABLE:
        records.append(
            GroundTruthRecord(
                query_id=qid,
                question=question,
                gold_answer=NO_ANSWER_SENTINEL,
                gold_page_index=None,
                gold_box=None,
                pages=tuple(page_ref(name) for name in order),
                pos_idx=-1,
            )
        )
    return records


def render(steps, answer, answer_ref) -> str:
    return serialize_trajectory(
        CoETrajectory(
            steps=tuple(ReasoningStep(text, tuple(refs)) for text, refs in steps),
            answer_text=answer,
            answer_evidence=answer_ref,
            raw="",
            format_ok=True,
        )
    )


def half_box(b: BoundingBox) -> BoundingBox:
    return BoundingBox(b.x1, b.y1, (b.x1 + b.x2) / 2, b.y2)


def answerable_predictions(entry) -> list[str]:
    qid, _question, answer, order, pos, gold_idx, support_idx = entry
    gold_name = order[pos]
    gold_page = PAGES[gold_name]
    gold_region = gold_page.regions[gold_idx]
    support_region = gold_page.regions[support_idx]
    page_no = pos + 1
    gold_ref = EvidenceRef(page_no, gold_region.box)
    support_ref = EvidenceRef(page_no, support_region.box)
    empty_a, empty_b = EMPTY_BOXES[gold_name]
    # A candidate page other than the gold one, for cross-page evidence.
    other_pos = (pos + 1) % len(order)
    other_name = order[other_pos]
    other_region = PAGES[other_name].regions[0]
    other_ref = EvidenceRef(other_pos + 1, other_region.box)
    off_page = BoundingBox(
        gold_page.width + 50, gold_page.height + 50,
        gold_page.width + 150, gold_page.height + 150,
    )

    return [
        # grounded: faithful steps, exact answer, gold answer box
        render([(support_region.text, [support_ref]), (gold_region.text, [gold_ref])],
               answer, gold_ref),
        # sloppy: right answer and box, but step crops over blank page areas
        render([("checking the page layout", [EvidenceRef(page_no, empty_a)]),
                ("the relevant value appears nearby", [EvidenceRef(page_no, empty_b)])],
               answer, gold_ref),
        # duplicated: the same support box cited twice
        render([(support_region.text, [support_ref]), (support_region.text, [support_ref])],
               answer, support_ref),
        # k0: no step evidence at all
        render([("reading the candidate pages", []), ("the answer is stated directly", [])],
               answer, gold_ref),
        # wrong: well-grounded steps but an unrelated answer
        render([(support_region.text, [support_ref])],
               "completely unrelated words", support_ref),
        # malformed: no grammar at all
        f"I think the answer to {qid} is {answer} but here are no tags.",
        # wrong_page: gold coordinates cited on the wrong candidate page
        render([(gold_region.text, [gold_ref])],
               answer, EvidenceRef(other_pos + 1, gold_region.box)),
        # iou_half: answer box covering exactly half the gold region
        render([(gold_region.text, [gold_ref])],
               answer, EvidenceRef(page_no, half_box(gold_region.box))),
        # crosspage: evidence drawn from two different candidate pages
        render([(other_region.text, [other_ref]), (gold_region.text, [gold_ref])],
               answer, gold_ref),
    ]


def unanswerable_predictions(entry) -> list[str]:
    qid, _question, order = entry
    first_page = PAGES[order[0]]
    region = first_page.regions[0]
    ref = EvidenceRef(1, region.box)
    empty_a, _ = EMPTY_BOXES[order[0]]
    return [
        render([(region.text, [ref])], NO_ANSWER_SENTINEL, ref),
        render([("searching every candidate page", [EvidenceRef(1, empty_a)])],
               NO_ANSWER_SENTINEL, EvidenceRef(1, empty_a)),
        render([(region.text, [ref])], "the value is 42", ref),
        render([("none of the pages mention this", [])], NO_ANSWER_SENTINEL, ref),
        f"No answer can be given for {qid} without tags.",
    ]


def main() -> int:
    pages_dir = DATA_DIR / "pages"
    pages_dir.mkdir(parents=True, exist_ok=True)
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)

    for name, page in PAGES.items():
        path = pages_dir / f"page_{name}.json"
        path.write_text(
            json.dumps(synthetic_page_to_mapping(page), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    records = build_records()
    write_tagged_jsonl(
        DATA_DIR / "dataset.jsonl",
        DATASET_SCHEMA,
        (record_to_mapping(r) for r in records),
    )

    rows = []
    for entry in ANSWERABLE:
        rows.extend({"query_id": entry[0], "response": r}
                    for r in answerable_predictions(entry))
    for entry in UNANSWERABLE:
        rows.extend({"query_id": entry[0], "response": r}
                    for r in unanswerable_predictions(entry))
    assert len(rows) == 100, f"expected 100 predictions, built {len(rows)}"
    write_tagged_jsonl(DATA_DIR / "predictions.jsonl", PREDICTIONS_SCHEMA, rows)

    common = [
        "--dataset", str(DATA_DIR / "dataset.jsonl"),
        "--predictions", str(DATA_DIR / "predictions.jsonl"),
        "--encoder", "mock:256",
    ]
    rc = cli_main(["score", *common, "--out", str(GOLDEN_DIR / "score_report.jsonl")])
    assert rc == 0, f"score exited {rc}"
    rc = cli_main(["evaluate", *common, "--out", str(GOLDEN_DIR / "eval_report.json")])
    assert rc == 0, f"evaluate exited {rc}"

    report = json.loads((GOLDEN_DIR / "eval_report.json").read_text())
    print(f"records={len(records)} predictions={len(rows)}")
    print(f"em={report['em']:.4f} iou@0.5={report['iou_at_05']:.4f} "
          f"sa={report['sa']:.4f} na={report['no_answer_accuracy']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
