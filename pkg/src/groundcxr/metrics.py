"""Evaluation metrics: AUROC, corpus BLEU-4, ROUGE-L, IoU, and one-class
average precision for region localization."""

from __future__ import annotations

from collections import Counter

import numpy as np
from scipy.stats import rankdata

from .tokenizer import split_words


class UndefinedMetricError(ValueError):
    """A metric has no defined value on the given inputs."""


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties
    count one half.  Rank-based, so any strictly increasing transform of
    the scores leaves the value unchanged."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    pos = int(labels.sum())
    neg = int(labels.size - pos)
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks implement the tie = 1/2 rule
    return float((ranks[labels].sum() - pos * (pos + 1) / 2) / (pos * neg))


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[str], references: list[str]) -> float:
    """Corpus BLEU with uniform weights over 1..4-grams and the standard
    brevity penalty; no smoothing, so any empty modified precision gives 0."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists must have equal length")
    if not candidates:
        raise ValueError("empty corpus")
    matches = np.zeros(4)
    totals = np.zeros(4)
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c_tokens, r_tokens = split_words(cand), split_words(ref)
        cand_len += len(c_tokens)
        ref_len += len(r_tokens)
        for n in range(1, 5):
            c_counts = _ngrams(c_tokens, n)
            r_counts = _ngrams(r_tokens, n)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
            totals[n - 1] += sum(c_counts.values())
    if (totals == 0).any() or (matches == 0).any():
        return 0.0
    log_precision = np.mean(np.log(matches / totals))
    brevity = 1.0 if cand_len > ref_len else np.exp(1.0 - ref_len / max(cand_len, 1))
    return float(brevity * np.exp(log_precision))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for x in a:
        cur = np.zeros_like(prev)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return int(prev[-1])


def rouge_l(candidates: list[str], references: list[str], beta_sq: float = 1.2) -> float:
    """Mean LCS-based F-measure with recall weighted by beta squared."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists must have equal length")
    if not candidates:
        raise ValueError("empty corpus")
    values = []
    for cand, ref in zip(candidates, references):
        c_tokens, r_tokens = split_words(cand), split_words(ref)
        lcs = _lcs_length(c_tokens, r_tokens)
        if lcs == 0:
            values.append(0.0)
            continue
        precision = lcs / len(c_tokens)
        recall = lcs / len(r_tokens)
        values.append((1 + beta_sq) * recall * precision / (recall + beta_sq * precision))
    return float(np.mean(values))


def text_metrics(candidates: list[str], references: list[str]) -> dict[str, float]:
    if any(not r for r in references):
        raise ValueError("references must be nonempty strings")
    return {
        "bleu4": bleu4(candidates, references),
        "rougeL": rouge_l(candidates, references),
    }


def iou(box_a, box_b) -> float:
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    ix = max(0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union) if union > 0 else 0.0


def average_precision_at_iou(
    predicted_boxes, scores, true_boxes, threshold: float = 0.5
) -> float:
    """One-class average precision: one predicted box per sample, scored by
    confidence, counted correct when IoU with that sample's true box meets
    the threshold.  Sample order does not affect the result."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if not (len(predicted_boxes) == n == len(true_boxes)) or n == 0:
        raise ValueError("need equal nonzero numbers of predictions and targets")
    hits = np.array(
        [iou(predicted_boxes[i], true_boxes[i]) >= threshold for i in range(n)]
    )
    # equal-score predictions are processed as one block sharing the
    # precision at the block end, so sample order cannot matter
    ap = 0.0
    seen = tp = 0
    for value in np.unique(scores)[::-1]:
        block = scores == value
        seen += int(block.sum())
        tp_block = int(hits[block].sum())
        tp += tp_block
        if tp_block:
            ap += (tp / seen) * tp_block
    return float(ap / n)
