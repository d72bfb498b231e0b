"""Evaluation metric oracles: AUROC, BLEU, ROUGE-L, IoU, AP."""

import numpy as np
import pytest

from groundcxr.metrics import (
    UndefinedMetricError,
    auroc,
    average_precision_at_iou,
    bleu4,
    iou,
    rouge_l,
    text_metrics,
)


# -- auroc ---------------------------------------------------------------


def test_auroc_hand_oracle():
    assert auroc([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(0.5)


def test_auroc_perfect_and_inverted():
    assert auroc([0.9, 0.7, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)
    assert auroc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == pytest.approx(0.0)


def test_auroc_ties_count_half():
    assert auroc([0.5, 0.5], [1, 0]) == pytest.approx(0.5)
    assert auroc([0.5, 0.5, 0.9], [0, 1, 1]) == pytest.approx(0.75)


def test_auroc_monotone_transform_invariant():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=40)
    labels = rng.random(40) < 0.4
    labels[:2] = [True, False]
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == pytest.approx(base)
    assert auroc(3 * scores - 7, labels) == pytest.approx(base)


def test_auroc_undefined_single_class():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.9], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.9], [0, 0])
    with pytest.raises(ValueError, match="equal-length"):
        auroc([0.1], [1, 0])


# -- bleu ----------------------------------------------------------------


def test_bleu4_hand_oracle():
    value = bleu4(["a b c d e"], ["a b c d f"])
    expect = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    assert value == pytest.approx(expect, abs=1e-9)
    assert value == pytest.approx(0.6687, abs=5e-5)


def test_bleu4_identity_one():
    sents = ["effusion is located at left lung", "no abnormality is found"]
    assert bleu4(sents, sents) == pytest.approx(1.0)


def test_bleu4_disjoint_zero():
    assert bleu4(["a b c d"], ["e f g h"]) == 0.0


def test_bleu4_short_candidate_zero():
    # fewer than four tokens leaves no 4-grams
    assert bleu4(["a b c"], ["a b c"]) == 0.0


def test_bleu4_brevity_penalty():
    # candidate shorter than reference: penalty exp(1 - ref/cand)
    value = bleu4(["a b c d"], ["a b c d e f g h"])
    assert value == pytest.approx(np.exp(1 - 8 / 4) * (1 * 1 * 1 * 1) ** 0.25, abs=1e-9)


def test_bleu4_corpus_level_pools_counts():
    # two-sentence corpus shares one n-gram pool, so the result is not the
    # mean of per-sentence scores
    corpus = bleu4(["a b c d", "x y z w"], ["a b c d", "a b c d"])
    assert 0.0 < corpus < 1.0


def test_bleu4_validation():
    with pytest.raises(ValueError, match="equal length"):
        bleu4(["a"], [])
    with pytest.raises(ValueError, match="empty"):
        bleu4([], [])


# -- rouge ---------------------------------------------------------------


def test_rouge_identity_one():
    sents = ["the lungs are clear"]
    assert rouge_l(sents, sents) == pytest.approx(1.0)


def test_rouge_disjoint_zero():
    assert rouge_l(["a b"], ["c d"]) == 0.0


def test_rouge_hand_oracle():
    # cand "a b c", ref "a c d": LCS = 2, P = 2/3, R = 2/3
    p = r = 2 / 3
    expect = (1 + 1.2) * r * p / (r + 1.2 * p)
    assert rouge_l(["a b c"], ["a c d"]) == pytest.approx(expect, abs=1e-9)


def test_rouge_mean_over_pairs():
    value = rouge_l(["a b", "c d"], ["a b", "x y"])
    assert value == pytest.approx(0.5)


def test_text_metrics_bundle():
    out = text_metrics(["a b c d e"], ["a b c d f"])
    assert set(out) == {"bleu4", "rougeL"}
    assert out["bleu4"] == pytest.approx(0.6687, abs=5e-5)
    with pytest.raises(ValueError, match="nonempty"):
        text_metrics(["a"], [""])


# -- boxes ---------------------------------------------------------------


def test_iou_cases():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_ap_all_correct_one():
    boxes = [(0, 0, 5, 5), (5, 5, 9, 9)]
    assert average_precision_at_iou(boxes, [0.9, 0.8], boxes) == pytest.approx(1.0)


def test_ap_hand_oracle():
    true = [(0, 0, 4, 4), (4, 4, 8, 8), (8, 8, 12, 12)]
    pred = [true[0], (0, 0, 1, 1), true[2]]
    # ranked by score: hit, miss, hit -> AP = (1/1 + 2/3) / 3
    value = average_precision_at_iou(pred, [0.9, 0.8, 0.7], true)
    assert value == pytest.approx((1.0 + 2.0 / 3.0) / 3.0)


def test_ap_order_independent_under_ties():
    true = [(0, 0, 4, 4), (4, 4, 8, 8), (8, 8, 12, 12), (12, 12, 16, 16)]
    pred = [true[0], (0, 0, 1, 1), true[2], true[3]]
    scores = [0.5, 0.5, 0.5, 0.9]
    base = average_precision_at_iou(pred, scores, true)
    order = [2, 0, 3, 1]
    shuffled = average_precision_at_iou(
        [pred[i] for i in order], [scores[i] for i in order], [true[i] for i in order]
    )
    assert base == pytest.approx(shuffled)
    # tie block shares the precision at its end: (1/1)*1 + (3/4)*2 all over 4
    assert base == pytest.approx((1.0 + 2 * 3.0 / 4.0) / 4.0)


def test_ap_threshold_matters():
    pred = [(0, 0, 8, 8)]
    true = [(0, 0, 8, 10)]  # IoU = 64/80 = 0.8
    assert average_precision_at_iou(pred, [0.9], true, threshold=0.5) == 1.0
    assert average_precision_at_iou(pred, [0.9], true, threshold=0.9) == 0.0


def test_ap_validation():
    with pytest.raises(ValueError, match="equal"):
        average_precision_at_iou([(0, 0, 1, 1)], [0.5, 0.6], [(0, 0, 1, 1)])
    with pytest.raises(ValueError, match="equal"):
        average_precision_at_iou([], [], [])
