"""Dict-in/dict-out scoring engine for external training loops.

A :class:`BoundEngine` wraps an immutable configuration plus an encoder and
exposes the four operations a rollout loop needs: score a response, parse a
response, normalize a reward group, and evaluate a prediction batch.  All
inputs and outputs are plain mappings in the report-file shapes, so callers
never touch the engine's domain types.

Calls are synchronous; batch parallelism belongs to the caller's scheduler.
Instances are safe to share across threads (the only serialization point is
the encoder client's in-flight bound).
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from coeforge.core import RewardConfig
from coeforge.embedding import EncoderProvider, MockEncoder, RemoteEncoder
from coeforge.evalset import (
    PredictionRecord,
    breakdown_to_mapping,
    eval_report_to_mapping,
    evaluate,
    record_from_mapping,
)
from coeforge.grpo import group_advantage
from coeforge.imaging import PageStore
from coeforge.parser import parse_response, trajectory_to_mapping
from coeforge.rewards import total_reward

_CONFIG_KEYS = ("tau", "delta", "epsilon", "gamma", "iou_at")


def _build_encoder(spec: str, timeout: float, retry_backoff: float) -> EncoderProvider:
    if spec.startswith("mock:"):
        return MockEncoder(int(spec.split(":", 1)[1]))
    if spec.startswith(("http://", "https://")):
        return RemoteEncoder(spec, timeout=timeout, retry_backoff=retry_backoff)
    raise ValueError(f"encoder must be mock:<dim> or an http(s) URL, got {spec!r}")


class BoundEngine:
    """An initialized scoring engine; configuration is fixed at construction.

    Args:
        config: optional overrides for tau / delta / epsilon / gamma / iou_at.
        encoder: ``mock:<dim>`` or the URL of an embedding service.
        base_dir: directory against which relative page locators resolve.
        strict_answer_in_chain: treat an answer box that repeats no step box
            as a format violation.
    """

    def __init__(
        self,
        config: Mapping[str, float] | None = None,
        encoder: str = "mock:256",
        base_dir: str | Path | None = None,
        strict_answer_in_chain: bool = False,
        encoder_timeout: float = 30.0,
        encoder_retry_backoff: float = 0.5,
    ):
        overrides = dict(config or {})
        unknown = set(overrides) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        self._config = RewardConfig(**{k: float(v) for k, v in overrides.items()})
        self._encoder_spec = encoder
        self._encoder = _build_encoder(encoder, encoder_timeout, encoder_retry_backoff)
        self._store = PageStore(base_dir=base_dir)
        self._strict = strict_answer_in_chain

    @property
    def config(self) -> dict:
        return {key: getattr(self._config, key) for key in _CONFIG_KEYS}

    @property
    def encoder_spec(self) -> str:
        return self._encoder_spec

    def score(self, response: str, record: Mapping) -> dict:
        """Score one raw response against a dataset-row-shaped record.

        Returns the reward breakdown in the report-row shape.  Raises the
        engine's typed exceptions (PageOutOfRange, ProviderUnavailable, ...)
        instead of recording error rows.
        """
        gt = record_from_mapping(record)
        breakdown = total_reward(
            response,
            gt,
            self._encoder,
            self._config,
            page_store=self._store,
            strict_answer_in_chain=self._strict,
        )
        return breakdown_to_mapping(breakdown)

    def parse(self, response: str) -> dict:
        """Parse one raw response into the trajectory report shape."""
        outcome = parse_response(response, strict_answer_in_chain=self._strict)
        mapping = trajectory_to_mapping(outcome.trajectory)
        mapping["diagnostics"] = [
            {
                "code": d.code,
                "severity": d.severity.value,
                "message": d.message,
                "span": list(d.span) if d.span else None,
            }
            for d in outcome.diagnostics
        ]
        return mapping

    def evaluate(
        self,
        dataset_rows: Sequence[Mapping],
        prediction_rows: Sequence[Mapping],
    ) -> dict:
        """Run the full metric pass over in-memory dataset/prediction rows."""
        gts = {}
        for row in dataset_rows:
            record = record_from_mapping(row)
            gts[record.query_id] = record
        predictions = [
            PredictionRecord(str(row["query_id"]), str(row["response"]))
            for row in prediction_rows
        ]
        report = evaluate(
            predictions,
            gts,
            self._encoder,
            self._config,
            page_store=self._store,
            strict_answer_in_chain=self._strict,
        )
        return eval_report_to_mapping(report, meta=self.config)


def bound_group_advantage(rewards: Sequence[float]) -> list[float]:
    """Group-relative advantages (z-scores) for one rollout group."""
    return list(group_advantage(list(rewards)).advantages)
