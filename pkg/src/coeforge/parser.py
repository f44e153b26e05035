"""Parser and serializer for the structured response grammar.

A well-formed response is exactly one ``<think>...</think>`` block followed
by one ``<answer>...</answer>`` block, with nothing but whitespace between
and around them.  Evidence is attached inline as JSON objects of the shape
``{"bbox_2d": [x1, y1, x2, y2], "image_index": i}``; the think body is split
into reasoning steps at newline boundaries and the answer body must carry
exactly one evidence object.  See docs/response-format.md for the full
grammar.

Parsing never raises: every failure is reported as a diagnostic, and
``format_ok`` is False exactly when a FATAL diagnostic fired.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .core import CoETrajectory, EvidenceRef, ReasoningStep, validate_box
from .errors import DegenerateBox, NegativeCoordinate, UnserializableTrajectory

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

_EVIDENCE_KEY = '"bbox_2d"'
_ANSWER_PREFIX = "the answer is:"

# Diagnostic codes.  FATAL ones flip format_ok to False.
MISSING_TAG = "missing-tag"
DUPLICATE_TAG = "duplicate-tag"
MISORDERED_TAGS = "misordered-tags"
STRAY_CONTENT = "stray-content"
NO_STEPS = "no-steps"
EMPTY_STEP_TEXT = "empty-step-text"
MALFORMED_EVIDENCE = "malformed-evidence"
DEGENERATE_BOX = "degenerate-box"
NEGATIVE_COORDINATE = "negative-coordinate"
BAD_PAGE_INDEX = "bad-page-index"
DANGLING_EVIDENCE_MARKER = "dangling-evidence-marker"
MISSING_ANSWER_EVIDENCE = "missing-answer-evidence"
MULTIPLE_ANSWER_EVIDENCE = "multiple-answer-evidence"
ANSWER_EVIDENCE_NOT_IN_CHAIN = "answer-evidence-not-in-chain"
NO_STEP_EVIDENCE = "no-step-evidence"


class Severity(Enum):
    FATAL = "fatal"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    severity: Severity
    message: str
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class ParseOutcome:
    """Parsed trajectory plus everything the grammar check had to say."""

    trajectory: CoETrajectory
    diagnostics: tuple[Diagnostic, ...]

    @property
    def fatal_diagnostics(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity is Severity.FATAL)


@dataclass(frozen=True)
class _EvidenceSpan:
    start: int  # offsets into the raw response
    end: int
    ref: EvidenceRef | None  # None when the object was malformed


def _balanced_spans(text: str) -> dict[int, int]:
    """Open-to-close index for every balanced brace pair, in one pass.

    Pure brace counting: valid evidence objects carry no string values, so
    braces inside JSON strings cannot occur in well-formed evidence, and a
    quote-confused span just fails JSON parsing downstream.  Linear time
    even for adversarial brace floods.
    """
    matches: dict[int, int] = {}
    stack: list[int] = []
    for index, ch in enumerate(text):
        if ch == "{":
            stack.append(index)
        elif ch == "}" and stack:
            matches[stack.pop()] = index
    return matches


def _coerce_coordinates(values: object) -> tuple[float, float, float, float] | str:
    if not isinstance(values, list) or len(values) != 4:
        return "bbox_2d must be a 4-element array"
    coords = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return f"non-numeric coordinate {v!r}"
        coords.append(float(v))
    return (coords[0], coords[1], coords[2], coords[3])


def _validate_evidence(obj: dict, span: tuple[int, int], diags: list[Diagnostic]) -> EvidenceRef | None:
    if set(obj.keys()) != {"bbox_2d", "image_index"}:
        diags.append(
            Diagnostic(
                MALFORMED_EVIDENCE,
                Severity.FATAL,
                f"evidence object must have exactly the keys bbox_2d and "
                f"image_index, got {sorted(obj.keys())}",
                span,
            )
        )
        return None
    coords = _coerce_coordinates(obj["bbox_2d"])
    if isinstance(coords, str):
        diags.append(Diagnostic(MALFORMED_EVIDENCE, Severity.FATAL, coords, span))
        return None
    page = obj["image_index"]
    if isinstance(page, bool) or not isinstance(page, int):
        diags.append(
            Diagnostic(
                BAD_PAGE_INDEX,
                Severity.FATAL,
                f"image_index must be an integer, got {page!r}",
                span,
            )
        )
        return None
    if page < 1:
        diags.append(
            Diagnostic(
                BAD_PAGE_INDEX,
                Severity.FATAL,
                f"image_index must be >= 1, got {page}",
                span,
            )
        )
        return None
    try:
        box = validate_box(*coords)
    except NegativeCoordinate as exc:
        diags.append(Diagnostic(NEGATIVE_COORDINATE, Severity.FATAL, str(exc), span))
        return None
    except DegenerateBox as exc:
        diags.append(Diagnostic(DEGENERATE_BOX, Severity.FATAL, str(exc), span))
        return None
    return EvidenceRef(page_index=page, box=box)


def _scan_evidence(body: str, offset: int, diags: list[Diagnostic]) -> list[_EvidenceSpan]:
    """Find evidence objects in a tag body via balanced-brace scanning.

    Only balanced ``{...}`` spans containing the literal ``"bbox_2d"`` key
    are treated as evidence; other braces are ordinary prose.  Offsets in
    the returned spans (and diagnostics) are relative to the raw response.
    """
    spans: list[_EvidenceSpan] = []
    matches = _balanced_spans(body)
    i = 0
    while i < len(body):
        if body[i] != "{":
            i += 1
            continue
        close = matches.get(i)
        if close is None:
            i += 1
            continue
        candidate = body[i : close + 1]
        if _EVIDENCE_KEY not in candidate:
            i = close + 1
            continue
        span = (offset + i, offset + close + 1)
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError as exc:
            diags.append(
                Diagnostic(
                    MALFORMED_EVIDENCE,
                    Severity.FATAL,
                    f"evidence object is not valid JSON: {exc.msg}",
                    span,
                )
            )
            spans.append(_EvidenceSpan(i, close + 1, None))
        else:
            if isinstance(obj, dict):
                ref = _validate_evidence(obj, span, diags)
                spans.append(_EvidenceSpan(i, close + 1, ref))
            else:
                diags.append(
                    Diagnostic(
                        MALFORMED_EVIDENCE,
                        Severity.FATAL,
                        "evidence span is not a JSON object",
                        span,
                    )
                )
                spans.append(_EvidenceSpan(i, close + 1, None))
        i = close + 1
    return spans


def _strip_spans(body: str, spans: list[_EvidenceSpan], lo: int, hi: int) -> str:
    """Text of body[lo:hi] with the given spans (all inside [lo, hi)) cut out."""
    pieces = []
    cursor = lo
    for span in spans:
        pieces.append(body[cursor : span.start])
        cursor = span.end
    pieces.append(body[cursor:hi])
    return "".join(pieces)


def _collapse(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _segment_bounds(body: str, spans: list[_EvidenceSpan]) -> list[tuple[int, int]]:
    """Newline-delimited segments, ignoring newlines inside evidence spans.

    Spans arrive in ascending, non-overlapping order, so one pointer walk
    keeps this linear.
    """
    bounds = []
    seg_start = 0
    span_index = 0
    for idx, ch in enumerate(body):
        while span_index < len(spans) and idx >= spans[span_index].end:
            span_index += 1
        inside = (
            span_index < len(spans)
            and spans[span_index].start <= idx < spans[span_index].end
        )
        if ch == "\n" and not inside:
            bounds.append((seg_start, idx))
            seg_start = idx + 1
    bounds.append((seg_start, len(body)))
    return bounds


def _spans_per_segment(
    bounds: list[tuple[int, int]], spans: list[_EvidenceSpan]
) -> list[list[_EvidenceSpan]]:
    """Assign each span to the segment containing it (spans never straddle)."""
    per_segment: list[list[_EvidenceSpan]] = [[] for _ in bounds]
    b = 0
    for span in spans:
        while b < len(bounds) and span.start >= bounds[b][1]:
            b += 1
        per_segment[b].append(span)
    return per_segment


def _tag_positions(raw: str, tag: str) -> list[int]:
    positions = []
    start = 0
    while True:
        idx = raw.find(tag, start)
        if idx == -1:
            return positions
        positions.append(idx)
        start = idx + 1


def parse_response(raw: str, *, strict_answer_in_chain: bool = False) -> ParseOutcome:
    """Parse a raw model response into a trajectory plus diagnostics.

    Always returns a (possibly best-effort) trajectory; ``format_ok`` is
    False iff any FATAL diagnostic fired.  With ``strict_answer_in_chain``
    the answer evidence must repeat one of the step evidence refs or the
    response is treated as malformed.
    """
    diags: list[Diagnostic] = []

    positions = {
        tag: _tag_positions(raw, tag)
        for tag in (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
    }
    for tag, occurrences in positions.items():
        if not occurrences:
            diags.append(
                Diagnostic(MISSING_TAG, Severity.FATAL, f"missing {tag} tag")
            )
        elif len(occurrences) > 1:
            diags.append(
                Diagnostic(
                    DUPLICATE_TAG,
                    Severity.FATAL,
                    f"{tag} appears {len(occurrences)} times",
                    (occurrences[1], occurrences[1] + len(tag)),
                )
            )

    ordered = all(len(v) == 1 for v in positions.values())
    if ordered:
        t_open = positions[THINK_OPEN][0]
        t_close = positions[THINK_CLOSE][0]
        a_open = positions[ANSWER_OPEN][0]
        a_close = positions[ANSWER_CLOSE][0]
        if not (t_open < t_close < a_open < a_close):
            diags.append(
                Diagnostic(
                    MISORDERED_TAGS,
                    Severity.FATAL,
                    "blocks must appear as <think>...</think><answer>...</answer>",
                )
            )
            ordered = False
        else:
            for lo, hi, where in (
                (0, t_open, "before the think block"),
                (t_close + len(THINK_CLOSE), a_open, "between the blocks"),
                (a_close + len(ANSWER_CLOSE), len(raw), "after the answer block"),
            ):
                if raw[lo:hi].strip():
                    diags.append(
                        Diagnostic(
                            STRAY_CONTENT,
                            Severity.FATAL,
                            f"non-whitespace content {where}",
                            (lo, hi),
                        )
                    )

    def _body(open_tag: str, close_tag: str) -> tuple[str, int] | None:
        opens = positions[open_tag]
        closes = positions[close_tag]
        if not opens or not closes:
            return None
        start = opens[0] + len(open_tag)
        end = closes[0]
        if end < start:
            return None
        return raw[start:end], start

    steps: list[ReasoningStep] = []
    think = _body(THINK_OPEN, THINK_CLOSE)
    if think is not None:
        body, offset = think
        spans = _scan_evidence(body, offset, diags)
        bounds = _segment_bounds(body, spans)
        for (lo, hi), segment_spans in zip(bounds, _spans_per_segment(bounds, spans)):
            segment_refs = [s.ref for s in segment_spans if s.ref is not None]
            text = _collapse(_strip_spans(body, segment_spans, lo, hi))
            if not text:
                if segment_spans:
                    diags.append(
                        Diagnostic(
                            EMPTY_STEP_TEXT,
                            Severity.FATAL,
                            "evidence must be accompanied by step text",
                            (offset + lo, offset + hi),
                        )
                    )
                continue
            if _EVIDENCE_KEY in text:
                diags.append(
                    Diagnostic(
                        DANGLING_EVIDENCE_MARKER,
                        Severity.FATAL,
                        "bbox_2d marker outside a balanced evidence object",
                        (offset + lo, offset + hi),
                    )
                )
                continue
            steps.append(ReasoningStep(text=text, evidence=tuple(segment_refs)))
        if not steps:
            diags.append(
                Diagnostic(NO_STEPS, Severity.FATAL, "think block contains no steps")
            )
        elif all(not step.evidence for step in steps):
            diags.append(
                Diagnostic(
                    NO_STEP_EVIDENCE,
                    Severity.WARNING,
                    "no reasoning step carries evidence",
                )
            )

    answer_text = ""
    answer_evidence: EvidenceRef | None = None
    answer = _body(ANSWER_OPEN, ANSWER_CLOSE)
    if answer is not None:
        body, offset = answer
        spans = _scan_evidence(body, offset, diags)
        if len(spans) == 0:
            diags.append(
                Diagnostic(
                    MISSING_ANSWER_EVIDENCE,
                    Severity.FATAL,
                    "answer block must contain exactly one evidence object",
                )
            )
        elif len(spans) > 1:
            diags.append(
                Diagnostic(
                    MULTIPLE_ANSWER_EVIDENCE,
                    Severity.FATAL,
                    f"answer block contains {len(spans)} evidence objects",
                )
            )
        else:
            answer_evidence = spans[0].ref
        text = _collapse(_strip_spans(body, spans, 0, len(body)))
        if text.lower().startswith(_ANSWER_PREFIX):
            text = text[len(_ANSWER_PREFIX) :].strip()
        if _EVIDENCE_KEY in text:
            diags.append(
                Diagnostic(
                    DANGLING_EVIDENCE_MARKER,
                    Severity.FATAL,
                    "bbox_2d marker outside a balanced evidence object",
                )
            )
            text = ""
        answer_text = text

    format_ok = not any(d.severity is Severity.FATAL for d in diags)
    if format_ok and answer_evidence is None:
        # Unreachable in practice (a missing ref always carries a FATAL
        # diagnostic); kept as a hard backstop for the trajectory invariant.
        format_ok = False

    trajectory = CoETrajectory(
        steps=tuple(steps),
        answer_text=answer_text,
        answer_evidence=answer_evidence,
        raw=raw,
        format_ok=format_ok,
    )

    if answer_evidence is not None and not trajectory.answer_evidence_in_chain:
        severity = Severity.FATAL if strict_answer_in_chain else Severity.WARNING
        diags.append(
            Diagnostic(
                ANSWER_EVIDENCE_NOT_IN_CHAIN,
                severity,
                "answer evidence does not repeat any step evidence ref",
            )
        )
        if strict_answer_in_chain and trajectory.format_ok:
            trajectory = CoETrajectory(
                steps=trajectory.steps,
                answer_text=trajectory.answer_text,
                answer_evidence=trajectory.answer_evidence,
                raw=raw,
                format_ok=False,
            )

    return ParseOutcome(trajectory=trajectory, diagnostics=tuple(diags))


def _format_number(value: float) -> int | float:
    as_int = int(value)
    return as_int if as_int == value else value


def evidence_json(ref: EvidenceRef) -> str:
    """Render an evidence ref in the response grammar's JSON shape."""
    payload = {
        "bbox_2d": [_format_number(v) for v in ref.box.as_tuple()],
        "image_index": ref.page_index,
    }
    return json.dumps(payload, separators=(", ", ": "))


_RESERVED = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, _EVIDENCE_KEY)


def serialize_trajectory(t: CoETrajectory) -> str:
    """Render a well-formed trajectory back into the response grammar.

    Raises:
        UnserializableTrajectory: the trajectory is not format_ok, or its
            text fields contain grammar-reserved tokens.
    """
    if not t.format_ok or t.answer_evidence is None:
        raise UnserializableTrajectory("only format_ok trajectories serialize")
    texts = [step.text for step in t.steps] + [t.answer_text]
    for text in texts:
        for token in _RESERVED:
            if token in text:
                raise UnserializableTrajectory(
                    f"text contains reserved token {token!r}"
                )
    lines = []
    for step in t.steps:
        parts = [_collapse(step.text)]
        parts.extend(evidence_json(ref) for ref in step.evidence)
        lines.append(" ".join(parts))
    think = "\n".join(lines)
    answer = "The answer is:"
    collapsed_answer = _collapse(t.answer_text)
    if collapsed_answer:
        answer += f" {collapsed_answer}"
    answer += f" {evidence_json(t.answer_evidence)}"
    return f"{THINK_OPEN}\n{think}\n{THINK_CLOSE}\n{ANSWER_OPEN}\n{answer}\n{ANSWER_CLOSE}"


def extract_pairs(t: CoETrajectory) -> list[tuple[str, EvidenceRef]]:
    """The K (step text, evidence ref) pairs in step order.

    A step with several refs contributes its text once per ref; steps
    without evidence contribute nothing.
    """
    return [(step.text, ref) for step in t.steps for ref in step.evidence]


def trajectory_to_mapping(t: CoETrajectory) -> dict:
    """Plain-dict view of a trajectory (the report-side shape)."""
    return {
        "format_ok": t.format_ok,
        "steps": [
            {
                "text": step.text,
                "evidence": [
                    {"page_index": ref.page_index, "box": list(ref.box.as_tuple())}
                    for ref in step.evidence
                ],
            }
            for step in t.steps
        ],
        "answer_text": t.answer_text,
        "answer_evidence": (
            None
            if t.answer_evidence is None
            else {
                "page_index": t.answer_evidence.page_index,
                "box": list(t.answer_evidence.box.as_tuple()),
            }
        ),
        "evidence_count": t.evidence_count,
        "answer_evidence_in_chain": t.answer_evidence_in_chain,
    }
