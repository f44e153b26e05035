"""Command-line surface tying the library into runnable commands.

Exit codes: 0 on success, 1 on schema or usage errors, 2 when the encoder
backend stayed unreachable after retries.  Option precedence is
command-line flag > config file > built-in default, and the effective
values are echoed into every report so runs are reproducible.  The
COEFORGE_ENCODER environment variable overrides --encoder.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from .core import RewardConfig
from .embedding import EncoderProvider, MockEncoder, RemoteEncoder
from .errors import CoeError, ProviderUnavailable, SchemaError, UnresolvedQueryId
from .evalset import (
    CANDIDATES_SCHEMA,
    DATASET_SCHEMA,
    SCORE_REPORT_SCHEMA,
    TRACE_SCHEMA,
    WORLD_SCHEMA,
    eval_report_to_mapping,
    evaluate,
    load_candidates,
    load_dataset,
    load_predictions,
    load_retrievals,
    build_multi_image_record,
    cold_start_filter,
    record_to_mapping,
    score_rows,
    write_tagged_jsonl,
)
from .grpo import default_world, run_simulation, world_from_mapping
from .imaging import PageStore
from .rewards import REWARD_COMPONENTS

ENCODER_ENV_VAR = "COEFORGE_ENCODER"

_DEFAULTS = {
    "tau": 0.3,
    "delta": 0.5,
    "epsilon": 0.4,
    "gamma": 0.8,
    "iou_at": 0.5,
    "encoder": "mock:256",
    "seed": 3407,
    "concurrency": 8,
    "ablate": "",
    "strict_answer_in_chain": False,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one command invocation."""

    rewards: RewardConfig
    encoder_spec: str
    seed: int
    concurrency: int
    ablate: frozenset[str]
    strict_answer_in_chain: bool

    def echo(self) -> dict:
        """Effective values for report metadata (never any file paths)."""
        return {
            "tau": self.rewards.tau,
            "delta": self.rewards.delta,
            "epsilon": self.rewards.epsilon,
            "gamma": self.rewards.gamma,
            "iou_at": self.rewards.iou_at,
            "encoder": self.encoder_spec,
            "seed": self.seed,
            "concurrency": self.concurrency,
            "ablate": sorted(self.ablate),
            "strict_answer_in_chain": self.strict_answer_in_chain,
        }


def _parse_ablate(value: str) -> frozenset[str]:
    names = frozenset(part.strip() for part in value.split(",") if part.strip())
    unknown = names - set(REWARD_COMPONENTS)
    if unknown:
        raise click.UsageError(
            f"--ablate accepts {', '.join(REWARD_COMPONENTS)}; "
            f"got {', '.join(sorted(unknown))}"
        )
    return names


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError as exc:
        raise SchemaError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise SchemaError(f"config file {path} must contain a JSON object")
    unknown = set(payload) - set(_DEFAULTS)
    if unknown:
        raise SchemaError(
            f"config file {path} has unknown keys: {sorted(unknown)}"
        )
    return payload


def _resolve_config(params: dict, config_path: str | None) -> RunConfig:
    file_values = _load_config_file(config_path)

    def pick(name: str):
        flag = params.get(name)
        if flag is not None:
            return flag
        if name in file_values:
            return file_values[name]
        return _DEFAULTS[name]

    encoder_spec = os.environ.get(ENCODER_ENV_VAR) or pick("encoder")
    try:
        rewards = RewardConfig(
            tau=float(pick("tau")),
            delta=float(pick("delta")),
            epsilon=float(pick("epsilon")),
            gamma=float(pick("gamma")),
            iou_at=float(pick("iou_at")),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    ablate = pick("ablate")
    if isinstance(ablate, str):
        ablate = _parse_ablate(ablate)
    else:
        ablate = frozenset(ablate)
    return RunConfig(
        rewards=rewards,
        encoder_spec=str(encoder_spec),
        seed=int(pick("seed")),
        concurrency=int(pick("concurrency")),
        ablate=ablate,
        strict_answer_in_chain=bool(pick("strict_answer_in_chain")),
    )


def make_encoder(spec: str) -> EncoderProvider:
    """Build an encoder from its spec: ``mock:<dim>`` or an endpoint URL."""
    if spec.startswith("mock:"):
        try:
            dim = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise click.UsageError(f"bad mock encoder spec {spec!r}") from exc
        return MockEncoder(dim)
    if spec.startswith(("http://", "https://")):
        return RemoteEncoder(spec)
    raise click.UsageError(
        f"--encoder must be mock:<dim> or an http(s) URL, got {spec!r}"
    )


def _common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="JSON config file with default option values."),
        click.option("--encoder", default=None,
                     help="mock:<dim> or encoder service URL."),
        click.option("--tau", type=float, default=None,
                     help="Step/evidence similarity threshold."),
        click.option("--delta", type=float, default=None,
                     help="Maximum allowed pairwise step-box IoU."),
        click.option("--epsilon", type=float, default=None,
                     help="Accuracy gate for the step reward."),
        click.option("--gamma", type=float, default=None,
                     help="Recall threshold for cold-start filtering."),
        click.option("--iou-at", "iou_at", type=float, default=None,
                     help="Grounding IoU threshold (strict greater-than)."),
        click.option("--seed", type=int, default=None, help="Random seed."),
        click.option("--concurrency", type=int, default=None,
                     help="Worker pool size for batch scoring."),
        click.option("--ablate", default=None,
                     help="Comma list of reward components to force to 0 "
                          "(acc,step,ground,format)."),
        click.option("--strict-answer-in-chain", "strict_answer_in_chain",
                     is_flag=True, default=None,
                     help="Treat an answer box absent from the step chain as "
                          "a format violation."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def cli() -> None:
    """Chain-of-evidence scoring, evaluation, and data-pipeline tools."""


@cli.command("score")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--predictions", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_common_options
def cmd_score(dataset, predictions, out, config_path, **params) -> int:
    """Score predictions into one reward-breakdown row each."""
    run = _resolve_config(params, config_path)
    gts = load_dataset(dataset)
    preds = load_predictions(predictions)
    enc = make_encoder(run.encoder_spec)
    store = PageStore(base_dir=Path(dataset).parent)
    rows = score_rows(
        preds,
        gts,
        enc,
        run.rewards,
        page_store=store,
        concurrency=run.concurrency,
        ablate=run.ablate,
        strict_answer_in_chain=run.strict_answer_in_chain,
    )
    write_tagged_jsonl(out, SCORE_REPORT_SCHEMA, rows, meta={"config": run.echo()})
    provider_failures = sum(
        1 for r in rows if r.get("error") == "ProviderUnavailable"
    )
    if provider_failures:
        click.echo(
            f"{provider_failures} row(s) failed: encoder unreachable", err=True
        )
        return 2
    return 0


@cli.command("evaluate")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--predictions", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_common_options
def cmd_evaluate(dataset, predictions, out, config_path, **params) -> int:
    """Evaluate predictions: EM, IoU@threshold, SA, no-answer accuracy."""
    run = _resolve_config(params, config_path)
    gts = load_dataset(dataset)
    preds = load_predictions(predictions)
    enc = make_encoder(run.encoder_spec)
    store = PageStore(base_dir=Path(dataset).parent)
    try:
        report = evaluate(
            preds,
            gts,
            enc,
            run.rewards,
            page_store=store,
            concurrency=run.concurrency,
            strict_answer_in_chain=run.strict_answer_in_chain,
        )
    except ProviderUnavailable as exc:
        click.echo(f"encoder unreachable: {exc}", err=True)
        return 2
    doc = eval_report_to_mapping(report, meta=run.echo())
    with open(out, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return 0


@cli.command("filter")
@click.option("--candidates", "candidates_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--rejects", default=None, type=click.Path(),
              help="Rejection log path (defaults to <out>.rejects.jsonl).")
@_common_options
def cmd_filter(candidates_path, out, rejects, config_path, **params) -> int:
    """Keep candidate responses whose answer recall reaches gamma."""
    run = _resolve_config(params, config_path)
    candidates = load_candidates(candidates_path)
    outcome = cold_start_filter(candidates, run.rewards.gamma)
    write_tagged_jsonl(
        out,
        CANDIDATES_SCHEMA,
        ({"response": r, "gold_answer": g} for r, g in outcome.retained),
        meta={"config": run.echo()},
    )
    rejects = rejects or f"{out}.rejects.jsonl"
    write_tagged_jsonl(
        rejects,
        CANDIDATES_SCHEMA + "+rejects",
        ({"line": index, "reason": reason} for index, reason in outcome.rejected),
        meta={"config": run.echo()},
    )
    click.echo(
        f"retained {len(outcome.retained)} of {len(candidates)} candidates"
    )
    return 0


@cli.command("build-candidates")
@click.option("--sources", required=True, type=click.Path(),
              help="Single-image dataset whose records get candidate sets.")
@click.option("--retrievals", required=True, type=click.Path(),
              help="Per-query retrieved pages (top-k).")
@click.option("--out", required=True, type=click.Path())
@click.option("-m", "--candidates-per-query", "m", type=int, default=3,
              show_default=True)
@click.option("--no-answer-prob", type=float, default=0.2, show_default=True)
@_common_options
def cmd_build_candidates(
    sources, retrievals, out, m, no_answer_prob, config_path, **params
) -> int:
    """Build a multi-image dataset with hard negatives and no-answer cases."""
    run = _resolve_config(params, config_path)
    records = load_dataset(sources)
    topk = load_retrievals(retrievals)
    rows = []
    for record in records.values():
        if record.query_id not in topk:
            raise SchemaError(f"no retrievals for query_id {record.query_id!r}")
        rebuilt = build_multi_image_record(
            record,
            topk[record.query_id],
            m=m,
            no_answer_prob=no_answer_prob,
            rng_seed=f"{run.seed}:{record.query_id}",
        )
        rows.append(record_to_mapping(rebuilt))
    write_tagged_jsonl(out, DATASET_SCHEMA, rows, meta={"config": run.echo()})
    return 0


@cli.command("train-sim")
@click.option("--world", "world_path", default=None, type=click.Path(),
              help="World description JSON (defaults to the built-in world).")
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--group-size", type=int, default=8, show_default=True)
@click.option("--learning-rate", type=float, default=0.2, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_common_options
def cmd_train_sim(
    world_path, steps, group_size, learning_rate, out, config_path, **params
) -> int:
    """Run the toy policy-optimization simulator and dump its trace."""
    run = _resolve_config(params, config_path)
    if world_path is None:
        world = default_world()
    else:
        try:
            with open(world_path, "r", encoding="utf-8") as handle:
                payload = json.load(handle)
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read world file {world_path}: {exc}") from exc
        if payload.get("schema") != WORLD_SCHEMA:
            raise SchemaError(f"world file must declare schema {WORLD_SCHEMA!r}")
        world = world_from_mapping(payload)
    trace = run_simulation(
        world,
        run.rewards,
        steps=steps,
        seed=run.seed,
        ablation=run.ablate,
        group_size=group_size,
        learning_rate=learning_rate,
    )
    meta = {"config": {**run.echo(), "steps": steps, "group_size": group_size,
                       "learning_rate": learning_rate}}
    write_tagged_jsonl(out, TRACE_SCHEMA, trace.iter_json_rows(), meta=meta)
    click.echo(f"modal template after {steps} iterations: {trace.modal_template}")
    return 0


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except (SchemaError, UnresolvedQueryId) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except ProviderUnavailable as exc:
        click.echo(f"encoder unreachable: {exc}", err=True)
        return 2
    except CoeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return int(result) if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
