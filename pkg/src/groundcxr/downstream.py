"""Downstream fine-tuning and evaluation.

Four tasks run off a pre-trained model: multi-label classification from the
projected image class token, a region probe over grounded features, report
generation, and question answering.  The grounding module stays frozen
throughout; only backbone components and task heads receive updates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .atlas import NUM_ENTITIES, NUM_REGIONS
from .autodiff import Tensor, concat, log_softmax, no_grad
from .fusion import boxes_to_patch_masks
from .metrics import (
    UndefinedMetricError,
    auroc,
    average_precision_at_iou,
    text_metrics,
)
from .model import GroundedModel, collate
from .modules import Linear
from .losses import lm_loss
from .records import ANSWER_NO, ANSWER_YES, NUM_ANSWERS, SampleRecord
from .tokenizer import ENC, EOS, encode_text, pad_batch
from .training import AdamW, OptimizerConfig, epoch_batches

FRACTIONS = (0.01, 0.10, 1.0)


def parameter_hash(params: dict[str, Tensor]) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params[name].data).tobytes())
    return digest.hexdigest()


def subsample(records: list[SampleRecord], fraction: float, seed: int) -> list[SampleRecord]:
    """Seed-deterministic subset of at least one sample."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    count = max(1, int(round(fraction * len(records))))
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(records), size=count, replace=False))
    return [records[i] for i in picked]


def head_optimizer(params: dict[str, Tensor], lr: float) -> AdamW:
    return AdamW(params, OptimizerConfig(lr=lr, weight_decay=0.0, warmup_steps=0))


# -- multi-label classification ----------------------------------------------


@dataclass
class ClassificationReport:
    fraction: float
    num_train: int
    per_entity: list
    mean_auroc: float


def _binary_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Stable element-wise binary cross-entropy via a two-column softmax."""
    column = logits.reshape(*logits.shape, 1)
    paired = concat([column, column * 0.0], axis=-1)
    log_probs = log_softmax(paired, axis=-1)
    picked = np.where(labels, 0, 1)
    b, k = labels.shape
    bi, ki = np.meshgrid(np.arange(b), np.arange(k), indexing="ij")
    return -log_probs[bi, ki, picked].mean()


def image_projections(model: GroundedModel, records: list[SampleRecord]) -> np.ndarray:
    with no_grad():
        _, proj = model.image_encoder(np.stack([r.image for r in records]))
    return proj.data


def finetune_classification(
    model: GroundedModel,
    train_records: list[SampleRecord],
    test_records: list[SampleRecord],
    fraction: float = 1.0,
    seed: int = 0,
    steps: int = 300,
    lr: float = 0.05,
) -> ClassificationReport:
    """Linear head over the projected image class token, trained with
    binary cross-entropy on a seed-deterministic fraction of the train
    split.  Entities missing a class in the test split report None and are
    excluded from the mean."""
    subset = subsample(train_records, fraction, seed)
    feats = image_projections(model, subset)
    labels = np.stack([r.label_vector for r in subset])
    head = Linear(np.random.default_rng(seed), feats.shape[1], NUM_ENTITIES)
    opt = head_optimizer(head.parameters("head"), lr)
    x = Tensor(feats)
    for _ in range(steps):
        loss = _binary_ce(head(x), labels)
        opt.zero_grad()
        loss.backward()
        opt.step()

    test_feats = image_projections(model, test_records)
    with no_grad():
        scores = head(Tensor(test_feats)).data
    test_labels = np.stack([r.label_vector for r in test_records])
    per_entity = []
    for e in range(NUM_ENTITIES):
        try:
            per_entity.append(auroc(scores[:, e], test_labels[:, e]))
        except UndefinedMetricError:
            per_entity.append(None)
    defined = [v for v in per_entity if v is not None]
    if not defined:
        raise UndefinedMetricError("every entity is single-class in the test split")
    return ClassificationReport(
        fraction=fraction,
        num_train=len(subset),
        per_entity=per_entity,
        mean_auroc=float(np.mean(defined)),
    )


# -- localization probe -------------------------------------------------------


@dataclass
class LocalizationReport:
    accuracy: float
    map50: float
    num_eval: int


def grounded_region_features(model: GroundedModel, records: list[SampleRecord]) -> np.ndarray:
    """(N, 29, hidden) pooled grounded patch states per atlas region."""
    out = []
    with no_grad():
        for r in records:
            tokens, _ = model.image_encoder(r.image[None])
            fused = model.ground(tokens, r.region_boxes[None],
                                 [_prompt_text(r)])
            masks = boxes_to_patch_masks(
                r.region_boxes.astype(np.float64), model.config.encoder
            )
            counts = np.maximum(masks.sum(axis=-1, keepdims=True), 1)
            weights = masks.astype(np.float64) / counts
            out.append(weights @ fused.data[0, 1:, :])
    return np.stack(out)


def _prompt_text(record: SampleRecord) -> str:
    from .prompts import render_prompt_text

    return render_prompt_text(record.prompt)


def planted_region(record: SampleRecord) -> int:
    pos = record.prompt.positive_triples
    if len(pos) != 1 or len(pos[0].regions) != 1:
        raise ValueError(f"{record.sample_id} does not have exactly one planted region")
    return pos[0].regions[0]


def localization_probe(
    model: GroundedModel,
    train_records: list[SampleRecord],
    eval_records: list[SampleRecord],
    seed: int = 0,
    steps: int = 200,
    lr: float = 0.05,
) -> LocalizationReport:
    """Shared-weight linear scorer over the 29 grounded region rows; the
    predicted box is the atlas box of the top-scoring region."""
    train_feats = grounded_region_features(model, train_records)
    train_targets = np.array([planted_region(r) for r in train_records])
    probe = Linear(np.random.default_rng(seed), train_feats.shape[-1], 1)
    opt = head_optimizer(probe.parameters("probe"), lr)
    x = Tensor(train_feats)
    rows = np.arange(len(train_records))
    for _ in range(steps):
        scores = probe(x)[:, :, 0]  # (N, 29)
        loss = -log_softmax(scores, axis=-1)[rows, train_targets].mean()
        opt.zero_grad()
        loss.backward()
        opt.step()

    eval_feats = grounded_region_features(model, eval_records)
    with no_grad():
        scores = probe(Tensor(eval_feats)).data[:, :, 0]
    predicted = scores.argmax(axis=1)
    truth = np.array([planted_region(r) for r in eval_records])
    probs = np.exp(scores - scores.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    confidence = probs[np.arange(len(eval_records)), predicted]
    pred_boxes = [eval_records[i].region_boxes[predicted[i]] for i in range(len(eval_records))]
    true_boxes = [eval_records[i].region_boxes[truth[i]] for i in range(len(eval_records))]
    return LocalizationReport(
        accuracy=float((predicted == truth).mean()),
        map50=average_precision_at_iou(pred_boxes, confidence, true_boxes),
        num_eval=len(eval_records),
    )


# -- report generation --------------------------------------------------------


@dataclass
class GenerationReport:
    bleu4: float
    rougeL: float
    num_eval: int
    samples: list


def _grounded_states(model: GroundedModel, records: list[SampleRecord]) -> Tensor:
    tokens, _ = model.image_encoder(np.stack([r.image for r in records]))
    boxes = np.stack([r.region_boxes for r in records])
    return model.ground(tokens, boxes, [_prompt_text(r) for r in records])


def finetune_generation(
    model: GroundedModel,
    train_records: list[SampleRecord],
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 8,
    lr: float = 3e-4,
) -> list[float]:
    """Continue decoder training with the generation loss only; grounding
    parameters receive no updates.  Returns the per-step loss curve."""
    opt = AdamW(model.backbone_parameters(), OptimizerConfig(lr=lr, warmup_steps=0))
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(epochs):
        for idx in epoch_batches(len(train_records), min(batch_size, len(train_records)), rng):
            chunk = [train_records[i] for i in idx]
            batch = collate(chunk, model.vocab, model.config.encoder)
            fused = _grounded_states(model, chunk)
            logits = model.backbone.decode_logits(
                batch.lm_ids[:, :-1], batch.lm_mask[:, :-1], fused
            )
            loss = lm_loss(logits, batch.lm_ids[:, 1:], batch.lm_mask[:, 1:])
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.data))
    return curve


def generate_reports(model: GroundedModel, records: list[SampleRecord]) -> list[str]:
    texts = []
    with no_grad():
        for r in records:
            fused = _grounded_states(model, [r])
            ids = model.backbone.greedy_decode(fused, model.config.encoder.max_text_len - 1)
            texts.append(model.vocab.decode(ids))
    return texts


def evaluate_generation(model: GroundedModel, records: list[SampleRecord]) -> GenerationReport:
    candidates = generate_reports(model, records)
    references = [r.report for r in records]
    scores = text_metrics(candidates, references)
    return GenerationReport(
        bleu4=scores["bleu4"],
        rougeL=scores["rougeL"],
        num_eval=len(records),
        samples=list(zip(candidates, references))[:4],
    )


# -- question answering -------------------------------------------------------


@dataclass
class VqaReport:
    closed_accuracy: float
    open_accuracy: float
    overall_accuracy: float
    num_closed: int
    num_open: int


def _qa_items(records: list[SampleRecord]) -> list[tuple[int, str, int]]:
    items = []
    for i, r in enumerate(records):
        for question, answer in r.qa_pairs:
            items.append((i, question, answer))
    return items


def finetune_vqa(
    model: GroundedModel,
    train_records: list[SampleRecord],
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 16,
    lr: float = 1e-3,
) -> Linear:
    """Train an answer head over the cross-modal class state for question
    tokens attending to frozen image states; the cross-modal backbone is
    tuned jointly.  Returns the trained head."""
    items = _qa_items(train_records)
    if not items:
        raise ValueError("no question-answer pairs in the training records")
    with no_grad():
        tokens, _ = model.image_encoder(np.stack([r.image for r in train_records]))
    image_states = tokens.data
    head = Linear(np.random.default_rng(seed), model.config.encoder.hidden_dim, NUM_ANSWERS)
    params = dict(model.backbone.parameters("backbone"))
    params.update(head.parameters("vqa_head"))
    opt = AdamW(params, OptimizerConfig(lr=lr, warmup_steps=0))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in epoch_batches(len(items), min(batch_size, len(items)), rng):
            chunk = [items[i] for i in idx]
            logits = _answer_logits(
                model, head, [q for _, q, _ in chunk],
                Tensor(image_states[[i for i, _, _ in chunk]]),
            )
            answers = np.array([a for _, _, a in chunk])
            loss = -log_softmax(logits, axis=-1)[np.arange(len(chunk)), answers].mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    return head


def _answer_logits(model: GroundedModel, head: Linear, questions: list[str],
                   visual: Tensor) -> Tensor:
    seqs = [
        encode_text(q, model.vocab, ENC, max_len=model.config.encoder.max_text_len)
        for q in questions
    ]
    ids, mask = pad_batch(seqs)
    states, _ = model.backbone.encode_pair(ids, mask, visual)
    return head(states[:, 0, :])


def evaluate_vqa(model: GroundedModel, head: Linear,
                 records: list[SampleRecord]) -> VqaReport:
    items = _qa_items(records)
    if not items:
        raise ValueError("no question-answer pairs in the evaluation records")
    with no_grad():
        tokens, _ = model.image_encoder(np.stack([r.image for r in records]))
        logits = _answer_logits(
            model, head, [q for _, q, _ in items],
            Tensor(tokens.data[[i for i, _, _ in items]]),
        )
    predicted = logits.data.argmax(axis=1)
    answers = np.array([a for _, _, a in items])
    closed = answers <= max(ANSWER_YES, ANSWER_NO)
    correct = predicted == answers
    num_closed = int(closed.sum())
    num_open = int((~closed).sum())
    closed_acc = float(correct[closed].mean()) if num_closed else 0.0
    open_acc = float(correct[~closed].mean()) if num_open else 0.0
    return VqaReport(
        closed_accuracy=closed_acc,
        open_accuracy=open_acc,
        overall_accuracy=float(correct.mean()),
        num_closed=num_closed,
        num_open=num_open,
    )
