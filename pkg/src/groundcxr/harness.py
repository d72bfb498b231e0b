"""Run orchestration: vocabulary construction, pre-training, downstream
fine-tuning with a frozen-grounding audit, the six-row ablation grid, and
metric report files (key = value text plus a JSON summary)."""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

from .atlas import DEFAULT_ATLAS
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .downstream import (
    FRACTIONS,
    evaluate_generation,
    evaluate_vqa,
    finetune_classification,
    finetune_generation,
    finetune_vqa,
    localization_probe,
    parameter_hash,
)
from .model import GroundedModel, build_model, collate
from .autodiff import no_grad
from .records import SampleRecord, load_manifest, split_records
from .synth import single_finding_records
from .tokenizer import Vocabulary, build_tokenizer
from .training import TrainLog, train_pretrain

TASKS = ("cls", "loc", "gen", "vqa")

ABLATION_GRID = (
    ("off", "none"),
    ("on", "none"),
    ("off", "concat"),
    ("off", "cross_attention"),
    ("on", "concat"),
    ("on", "cross_attention"),
)

ABLATION_COLUMNS = (
    "ecls",
    "grounding_concat",
    "grounding_ca",
    "bleu4",
    "rougeL",
    "auroc_1pct",
    "auroc_10pct",
    "auroc_100pct",
)


def build_vocab(records: list[SampleRecord]) -> Vocabulary:
    """Tokenizer corpus covers reports, prompts, questions, and the atlas
    phrase inventory, so no in-domain string maps to the unknown token."""
    from .prompts import render_prompt_text

    corpus = [r.report for r in records]
    corpus += [render_prompt_text(r.prompt) for r in records]
    corpus += [q for r in records for q, _ in r.qa_pairs]
    corpus += list(DEFAULT_ATLAS.entities) + list(DEFAULT_ATLAS.negative_phrases)
    corpus += list(DEFAULT_ATLAS.regions)
    return build_tokenizer(corpus)


def prompt_sentence_spans(record: SampleRecord) -> list[tuple[int, list[int]]]:
    """(region, token positions) pairs locating each positive sentence's
    words inside the encoded prompt sequence ([CLS] at position 0)."""
    from .tokenizer import split_words

    spans = []
    offset = 1  # leading [CLS]
    rendered = iter(record.prompt.rendered)
    for triple in record.prompt.positive_triples:
        words = split_words(next(rendered))
        positions = list(range(offset, offset + len(words)))
        for region in triple.regions:
            spans.append((region, positions))
        offset += len(words) + 1  # '.' separator between sentences
    return spans


def grounding_alignment(model: GroundedModel, records: list[SampleRecord]) -> dict:
    """How sharply region queries attend to their own prompt sentence.

    For every planted (entity, region) pair the fuse_local attention mass
    from the region's query row onto the sentence's tokens is compared to
    the uniform baseline (span length / valid prompt length); attention is
    averaged over fusion layers and heads.  Returns the mean ratio and the
    per-pair values; ratio 1 means no better than uniform.
    """
    import numpy as np

    positives = [r for r in records if r.prompt.positive_triples]
    if not positives:
        raise ValueError("no positive samples to score")
    from .prompts import render_prompt_text

    images = np.stack([r.image for r in positives])
    boxes = np.stack([r.region_boxes for r in positives])
    prompts = [render_prompt_text(r.prompt) for r in positives]
    trace: list = []
    with no_grad():
        tokens, _ = model.image_encoder(images)
        model.ground(tokens, boxes, prompts, trace=trace)
    if not trace:
        raise ValueError("grounding trace is empty; is the fusion pathway enabled?")
    attn = np.mean(np.stack(trace), axis=(0, 2))  # layers, heads -> (B, 29, L)
    _, prompt_mask = model.prompt_branch.encode_prompt_batch(prompts)
    ratios = []
    for i, record in enumerate(positives):
        valid = int(prompt_mask[i].sum())
        for region, span in prompt_sentence_spans(record):
            mass = float(attn[i, region, span].sum())
            baseline = len(span) / valid
            ratios.append(mass / baseline)
    return {
        "mean_ratio": float(np.mean(ratios)),
        "num_pairs": len(ratios),
        "ratios": ratios,
    }


def write_report(prefix: Path, metrics: dict, extra: dict | None = None) -> None:
    """`<prefix>.txt` holds one `key = value` per line; `<prefix>.json`
    carries the same metrics plus run context."""
    prefix.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {_fmt(value)}" for key, value in metrics.items()]
    prefix.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    payload = {"metrics": metrics}
    if extra:
        payload.update(extra)
    prefix.with_suffix(".json").write_text(json.dumps(payload, indent=2, default=str) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def load_records(config: RunConfig) -> list[SampleRecord]:
    if not config.manifest_dir:
        raise ValueError("config.manifest_dir is not set")
    return load_manifest(config.manifest_dir)


def run_pretrain(
    config: RunConfig,
    records: list[SampleRecord] | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    """Pre-train on the records tagged `pretrain` and checkpoint the result."""
    if records is None:
        records = load_records(config)
    by_split = split_records(records)
    train_set = by_split.get("pretrain") or records
    vocab = build_vocab(records)
    model = build_model(config.model_config(len(vocab)), vocab, seed=config.seed)
    log = train_pretrain(
        model,
        train_set,
        config.optimizer,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=config.seed,
    )
    result = {"model": model, "log": log, "vocab": vocab, "records": records}
    if out_dir is not None:
        out_dir = Path(out_dir)
        result["checkpoint"] = save_checkpoint(
            out_dir / "checkpoint.npz", model, config, step=len(log.steps)
        )
        first, last = log.steps[0], log.steps[-1]
        write_report(
            out_dir / "pretrain_report",
            {
                "steps": len(log.steps),
                "first_total": first["total"],
                "final_total": last["total"],
                "final_itc": last["itc"],
                "final_itm": last["itm"],
                "final_lm": last["lm"],
                "final_entity": last["entity"],
                "final_itm_accuracy": last["itm_accuracy"],
            },
            extra={"curve": log.steps},
        )
    return result


def finetune_splits(records: list[SampleRecord]) -> tuple[list, list]:
    by_split = split_records(records)
    train = by_split.get("train") or records
    test = by_split.get("test") or records
    return train, test


def run_finetune(
    config: RunConfig,
    task: str,
    model: GroundedModel | None = None,
    checkpoint: str | Path | None = None,
    records: list[SampleRecord] | None = None,
    fraction: float = 1.0,
    out_dir: str | Path | None = None,
) -> dict:
    """Dispatch one downstream task.  Grounding-module parameters are
    hash-compared before and after; any drift is an error."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    if model is None:
        if checkpoint is None:
            raise ValueError("need a model or a checkpoint path")
        model, _, _ = load_checkpoint(checkpoint)
    if records is None:
        records = load_records(config)
    train, test = finetune_splits(records)
    gk_before = parameter_hash(model.gk_parameters())

    if task == "cls":
        report = finetune_classification(
            model, train, test, fraction=fraction, seed=config.seed
        )
        metrics = {
            "task": "cls",
            "fraction": fraction,
            "num_train": report.num_train,
            "mean_auroc": report.mean_auroc,
        }
        for e, value in enumerate(report.per_entity):
            metrics[f"auroc_{DEFAULT_ATLAS.entities[e].replace(' ', '_')}"] = (
                "undefined" if value is None else value
            )
    elif task == "loc":
        train_single = single_finding_records(train)
        test_single = single_finding_records(test)
        if not train_single or not test_single:
            raise ValueError("localization needs single-finding samples in both splits")
        report = localization_probe(model, train_single, test_single, seed=config.seed)
        metrics = {
            "task": "loc",
            "accuracy": report.accuracy,
            "map50": report.map50,
            "num_eval": report.num_eval,
        }
    elif task == "gen":
        finetune_generation(
            model, train, seed=config.seed, epochs=config.finetune_epochs,
            batch_size=min(config.batch_size, 8),
        )
        report = evaluate_generation(model, test)
        metrics = {
            "task": "gen",
            "bleu4": report.bleu4,
            "rougeL": report.rougeL,
            "num_eval": report.num_eval,
        }
    else:
        head = finetune_vqa(
            model, train, seed=config.seed, epochs=config.finetune_epochs,
            batch_size=config.batch_size, lr=config.finetune_lr,
        )
        report = evaluate_vqa(model, head, test)
        metrics = {
            "task": "vqa",
            "closed_accuracy": report.closed_accuracy,
            "open_accuracy": report.open_accuracy,
            "overall_accuracy": report.overall_accuracy,
            "num_closed": report.num_closed,
            "num_open": report.num_open,
        }

    gk_after = parameter_hash(model.gk_parameters())
    if gk_before != gk_after:
        raise RuntimeError("grounding-module parameters changed during fine-tuning")
    metrics["gk_hash_unchanged"] = True
    if out_dir is not None:
        write_report(Path(out_dir) / f"finetune_{task}_report", metrics)
    return {"model": model, "report": report, "metrics": metrics}


def evaluate_objectives(model: GroundedModel, records: list[SampleRecord],
                        seed: int = 0) -> dict:
    """No-update forward pass of all four objectives over one batch of the
    given records; used by the `eval` subcommand."""
    import numpy as np

    batch = collate(records, model.vocab, model.config.encoder)
    with no_grad():
        losses = model.forward_losses(batch, np.random.default_rng(seed))
    return {k: float(v.data) if hasattr(v, "data") else v for k, v in losses.items()}


def run_eval(
    config: RunConfig,
    model: GroundedModel | None = None,
    checkpoint: str | Path | None = None,
    records: list[SampleRecord] | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    if model is None:
        if checkpoint is None:
            raise ValueError("need a model or a checkpoint path")
        model, _, _ = load_checkpoint(checkpoint)
    if records is None:
        records = load_records(config)
    by_split = split_records(records)
    subset = by_split.get("val") or records
    metrics = evaluate_objectives(model, subset, seed=config.seed)
    metrics["num_samples"] = len(subset)
    if out_dir is not None:
        write_report(Path(out_dir) / "eval_report", metrics)
    return metrics


def run_ablation(
    config: RunConfig,
    records: list[SampleRecord] | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Pre-train and evaluate all six (entity loss, grounding) toggle rows
    under one seed; returns the rows and optionally writes ablation.csv."""
    if records is None:
        records = load_records(config)
    train, test = finetune_splits(records)
    rows = []
    for ecls, grounding in ABLATION_GRID:
        row_config = dataclasses.replace(config, ecls=ecls, grounding=grounding)
        result = run_pretrain(row_config, records=records)
        model = result["model"]
        finetune_generation(
            model, train, seed=config.seed, epochs=config.finetune_epochs,
            batch_size=min(config.batch_size, 8),
        )
        gen_report = evaluate_generation(model, test)
        aurocs = {}
        for fraction in FRACTIONS:
            cls_report = finetune_classification(
                model, train, test, fraction=fraction, seed=config.seed
            )
            aurocs[fraction] = cls_report.mean_auroc
        rows.append(
            {
                "ecls": ecls,
                "grounding_concat": "x" if grounding == "concat" else "-",
                "grounding_ca": "x" if grounding == "cross_attention" else "-",
                "bleu4": round(gen_report.bleu4, 6),
                "rougeL": round(gen_report.rougeL, 6),
                "auroc_1pct": round(aurocs[0.01], 6),
                "auroc_10pct": round(aurocs[0.10], 6),
                "auroc_100pct": round(aurocs[1.0], 6),
            }
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation.csv", "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=ABLATION_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return rows
