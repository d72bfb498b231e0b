"""Region pooling, two-stage grounding fusion, frozen prompt branch, and
the entity contrastive loss."""

import numpy as np
import pytest

from groundcxr.atlas import DEFAULT_ATLAS, NUM_REGIONS
from groundcxr.autodiff import Tensor, check_gradient
from groundcxr.encoders import EncoderConfig, ImageEncoder, ReportEncoder
from groundcxr.fusion import (
    FusionConfig,
    GroundingFusion,
    PromptBranch,
    RegionPooler,
    boxes_to_patch_masks,
    entity_contrastive_loss,
)
from groundcxr.synth import atlas_grid_boxes
from groundcxr.tokenizer import build_tokenizer

CFG = EncoderConfig(
    patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
    region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
    max_text_len=16, vocab_size=24,
)
FUSE = FusionConfig(num_fusion_layers=2, num_heads=2)


def tiny_vocab():
    return build_tokenizer([
        "cardiomegaly is located at cardiac silhouette",
        "effusion is located at left lung and right lung",
        "no abnormality is found",
    ] + list(DEFAULT_ATLAS.entities) + list(DEFAULT_ATLAS.negative_phrases))


def image_tokens(batch=2, seed=0):
    enc = ImageEncoder(np.random.default_rng(seed), CFG)
    images = np.random.default_rng(seed + 1).uniform(size=(batch, 16, 16))
    states, _ = enc(images)
    return states


def test_boxes_to_patch_masks_membership():
    boxes = atlas_grid_boxes(16)
    masks = boxes_to_patch_masks(boxes, CFG)
    assert masks.shape == (29, 16)
    # patch centers tile the image, so every center lands in exactly one of
    # the 30 grid cells; 29 kept boxes leave at most the last cell uncovered
    assert masks.sum(axis=0).max() == 1
    with pytest.raises(ValueError, match="29"):
        boxes_to_patch_masks(boxes[:5], CFG)


def test_pooler_full_image_box_is_patch_mean():
    tokens = image_tokens(batch=1)
    pooler = RegionPooler(np.random.default_rng(3), CFG)
    boxes = np.zeros((29, 4))
    boxes[0] = [0, 0, 16, 16]      # all patch centers
    boxes[1:] = [0, 0, 1, 1]       # no patch centers
    out = pooler(tokens, boxes)
    mean_state = tokens.data[:, 1:, :].mean(axis=1)
    expect = mean_state @ pooler.to_region.weight.data + pooler.to_region.bias.data
    assert np.allclose(out.features.data[:, 0, :], expect, atol=1e-9)
    assert out.valid[:, 0].all() and not out.valid[:, 1:].any()


def test_pooler_empty_columns_zero():
    tokens = image_tokens()
    pooler = RegionPooler(np.random.default_rng(4), CFG)
    boxes = np.zeros((29, 4))
    boxes[5] = [0, 0, 16, 16]
    boxes[np.arange(29) != 5] = [3, 3, 4, 4]  # between patch centers
    out = pooler(tokens, boxes)
    off = np.arange(29) != 5
    assert np.abs(out.features.data[:, off, :]).max() == 0.0


def test_pooler_all_empty_raises():
    tokens = image_tokens()
    pooler = RegionPooler(np.random.default_rng(5), CFG)
    boxes = np.tile([0.0, 0.0, 1.0, 1.0], (29, 1))
    with pytest.raises(ValueError, match="malformed geometry"):
        pooler(tokens, boxes)


def test_pooler_batch_of_boxes():
    # at 64px every atlas grid cell holds at least one patch center
    cfg = EncoderConfig(
        patch_size=8, image_size=64, hidden_dim=16, projection_dim=8,
        region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=24,
    )
    enc = ImageEncoder(np.random.default_rng(6), cfg)
    tokens, _ = enc(np.random.default_rng(7).uniform(size=(2, 64, 64)))
    pooler = RegionPooler(np.random.default_rng(6), cfg)
    grid = atlas_grid_boxes(64)
    out = pooler(tokens, np.stack([grid, grid]))
    assert out.features.shape == (2, 29, 16)
    assert out.valid.all()
    # shared (29, 4) boxes broadcast across the batch
    shared = pooler(tokens, grid)
    assert np.allclose(shared.features.data, out.features.data, atol=1e-12)
    with pytest.raises(ValueError, match="box sets"):
        pooler(tokens, np.stack([grid, grid, grid]))


def test_region_projection_linear_part():
    """The projection is affine, so differences transform linearly."""
    fusion = GroundingFusion(np.random.default_rng(7), CFG, FUSE)
    rng = np.random.default_rng(8)
    valid = np.ones((1, 29), dtype=bool)
    x = rng.normal(size=(1, 29, 16))
    y = rng.normal(size=(1, 29, 16))

    from groundcxr.fusion import RegionFeatures

    def project(a):
        return fusion.project_regions(RegionFeatures(Tensor(a), valid)).data

    zero = project(np.zeros_like(x))
    lhs = project(x + y) - zero
    rhs = (project(x) - zero) + (project(y) - zero)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_fuse_local_prompt_permutation_invariant():
    fusion = GroundingFusion(np.random.default_rng(9), CFG, FUSE)
    rng = np.random.default_rng(10)
    rows = Tensor(rng.normal(size=(1, 29, 16)))
    prompt = rng.normal(size=(1, 7, 16))
    mask = np.array([[True, True, True, True, True, False, False]])
    perm = rng.permutation(7)
    out1 = fusion.fuse_local(rows, Tensor(prompt), mask).data
    out2 = fusion.fuse_local(rows, Tensor(prompt[:, perm]), mask[:, perm]).data
    assert np.allclose(out1, out2, atol=1e-6)
    assert fusion.local_calls == 2


def test_fuse_global_region_permutation_invariant():
    fusion = GroundingFusion(np.random.default_rng(11), CFG, FUSE)
    rng = np.random.default_rng(12)
    tokens = Tensor(rng.normal(size=(1, 17, 16)))
    rows = rng.normal(size=(1, 29, 16))
    perm = rng.permutation(29)
    out1 = fusion.fuse_global(tokens, Tensor(rows)).data
    out2 = fusion.fuse_global(tokens, Tensor(rows[:, perm])).data
    assert np.allclose(out1, out2, atol=1e-6)
    assert fusion.global_calls == 2


def test_fuse_global_zero_rows_reduces_to_residual_ffn():
    """With all-zero fused rows and zero-bias init the cross-attention term
    vanishes, leaving x + ffn(norm(x))."""
    fusion = GroundingFusion(np.random.default_rng(13), CFG, FUSE)
    rng = np.random.default_rng(14)
    tokens = Tensor(rng.normal(size=(2, 17, 16)))
    out = fusion.fuse_global(tokens, Tensor(np.zeros((2, 29, 16))))
    layer = fusion.global_layer
    expect = tokens + layer.ffn(layer.norm_ffn(tokens))
    assert np.allclose(out.data, expect.data, atol=1e-9)


def test_fuse_local_trace_shapes():
    fusion = GroundingFusion(np.random.default_rng(15), CFG, FUSE)
    rng = np.random.default_rng(16)
    rows = Tensor(rng.normal(size=(2, 29, 16)))
    prompt = Tensor(rng.normal(size=(2, 6, 16)))
    mask = np.ones((2, 6), dtype=bool)
    trace = []
    fusion.fuse_local(rows, prompt, mask, trace=trace)
    assert len(trace) == 2  # one per fusion layer
    for attn in trace:
        assert attn.shape == (2, 2, 29, 6)
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)


def test_fuse_local_concat_counts_and_shape():
    fusion = GroundingFusion(np.random.default_rng(17), CFG, FUSE)
    rng = np.random.default_rng(18)
    rows = Tensor(rng.normal(size=(2, 29, 16)))
    prompt = Tensor(rng.normal(size=(2, 5, 16)))
    mask = np.ones((2, 5), dtype=bool)
    out = fusion.fuse_local_concat(rows, prompt, mask)
    assert out.shape == (2, 29, 16)
    assert fusion.concat_calls == 1 and fusion.local_calls == 0


def test_adapter_present_only_when_dims_differ():
    fusion_same = GroundingFusion(np.random.default_rng(19), CFG, FUSE)
    assert not fusion_same.needs_adapter
    mixed = EncoderConfig(
        patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
        region_dim=12, prompt_dim=8, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=24,
    )
    fusion_mixed = GroundingFusion(np.random.default_rng(20), mixed, FUSE)
    assert fusion_mixed.needs_adapter
    rng = np.random.default_rng(21)
    tokens = Tensor(rng.normal(size=(1, 17, 16)))
    rows = Tensor(rng.normal(size=(1, 29, 8)))
    assert fusion_mixed.fuse_global(tokens, rows).shape == (1, 17, 16)


def test_prompt_branch_snapshots_report_encoder_at_init():
    vocab = tiny_vocab()
    cfg = EncoderConfig(
        patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
        region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=len(vocab),
    )
    enc = ReportEncoder(np.random.default_rng(22), cfg)
    branch = PromptBranch(enc, vocab)
    text = "cardiomegaly is located at cardiac silhouette"
    states, seq = branch.encode_prompt(text)
    direct, _ = enc(seq.ids, seq.mask)
    assert np.allclose(states.data, direct.data[0], atol=1e-12)
    # later edits to the report encoder leave the snapshot untouched
    enc.token_embed.data[int(seq.ids[1]), 3] += 0.5
    states2, _ = branch.encode_prompt(text)
    assert np.allclose(states.data, states2.data, atol=1e-12)
    # the snapshot arrays are exposed as named, non-trainable buffers
    buffers = branch.buffers()
    assert buffers and all(k.startswith("prompt_branch.") for k in buffers)
    assert not any(t.requires_grad for t in buffers.values())


def test_prompt_branch_rejects_empty_text():
    vocab = tiny_vocab()
    cfg = EncoderConfig(
        patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
        region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=len(vocab),
    )
    branch = PromptBranch(ReportEncoder(np.random.default_rng(23), cfg), vocab)
    with pytest.raises(ValueError, match="non-empty"):
        branch.encode_prompt("")


def test_prompt_branch_entities_unit_and_tied():
    vocab = tiny_vocab()
    cfg = EncoderConfig(
        patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
        region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=len(vocab),
    )
    enc = ReportEncoder(np.random.default_rng(24), cfg)
    branch = PromptBranch(enc, vocab)
    pos, neg = branch.encode_entities(DEFAULT_ATLAS)
    assert pos.shape == (14, 8) and neg.shape == (14, 8)
    assert np.allclose(np.linalg.norm(pos.data, axis=-1), 1.0, atol=1e-6)
    assert np.allclose(np.linalg.norm(neg.data, axis=-1), 1.0, atol=1e-6)
    assert not np.allclose(pos.data, neg.data, atol=1e-3)


def test_frozen_branch_receives_no_gradient():
    """Losses flowing through prompt-branch outputs leave the report
    encoder untouched: its parameters end with no gradient at all."""
    vocab = tiny_vocab()
    cfg = EncoderConfig(
        patch_size=4, image_size=16, hidden_dim=16, projection_dim=8,
        region_dim=16, prompt_dim=16, num_layers=1, num_heads=2,
        max_text_len=16, vocab_size=len(vocab),
    )
    enc = ReportEncoder(np.random.default_rng(25), cfg)
    branch = PromptBranch(enc, vocab)
    fusion = GroundingFusion(np.random.default_rng(26), cfg, FUSE)
    states, mask = branch.encode_prompt_batch(["effusion is located at left lung"])
    rows = Tensor(np.random.default_rng(27).normal(size=(1, 29, 16)), requires_grad=True)
    loss = (fusion.fuse_local(rows, states, mask) ** 2).sum()
    loss.backward()
    assert rows.grad is not None
    for name, p in enc.parameters("report").items():
        assert p.grad is None, name


def test_entity_loss_equal_similarity_single_entity_ln2():
    pos = Tensor(np.array([[0.3, 0.4]]))
    neg = Tensor(np.array([[0.3, 0.4]]))
    proj = Tensor(np.array([0.5, 0.1]))
    loss = entity_contrastive_loss(proj, pos, neg, np.array([True]), temperature=0.2)
    assert abs(loss.item() - np.log(2.0)) < 1e-9


def test_entity_loss_uniform_fourteen_ln28():
    rng = np.random.default_rng(28)
    pos = Tensor(np.zeros((14, 6)))
    neg = Tensor(np.zeros((14, 6)))
    proj = Tensor(rng.normal(size=6))
    labels = np.zeros(14, dtype=bool)
    labels[[0, 5]] = True
    loss = entity_contrastive_loss(proj, pos, neg, labels, temperature=0.2)
    assert abs(loss.item() - np.log(28.0)) < 1e-9


def test_entity_loss_confident_margin():
    # (sim_pos - sim_neg) / temperature == 10
    pos = Tensor(np.array([[2.0]]))
    neg = Tensor(np.array([[0.0]]))
    proj = Tensor(np.array([1.0]))
    loss = entity_contrastive_loss(proj, pos, neg, np.array([True]), temperature=0.2)
    assert abs(loss.item() - np.log1p(np.exp(-10.0))) < 1e-9


def test_entity_loss_nonnegative_and_permutation_invariant():
    rng = np.random.default_rng(29)
    for trial in range(5):
        pos = rng.normal(size=(14, 8))
        neg = rng.normal(size=(14, 8))
        proj = Tensor(rng.normal(size=8))
        labels = rng.random(14) < 0.5
        labels[0] = True
        loss = entity_contrastive_loss(proj, Tensor(pos), Tensor(neg), labels, 0.2)
        assert loss.item() >= 0.0
        perm = rng.permutation(14)
        permuted = entity_contrastive_loss(
            proj, Tensor(pos[perm]), Tensor(neg[perm]), labels[perm], 0.2
        )
        assert abs(loss.item() - permuted.item()) < 1e-9


def test_entity_loss_validation():
    pos = Tensor(np.zeros((14, 4)))
    neg = Tensor(np.zeros((14, 4)))
    proj = Tensor(np.zeros(4))
    with pytest.raises(ValueError, match="present"):
        entity_contrastive_loss(proj, pos, neg, np.zeros(14, dtype=bool), 0.2)
    with pytest.raises(ValueError, match="temperature"):
        entity_contrastive_loss(proj, pos, neg, np.ones(14, dtype=bool), 0.0)
    with pytest.raises(ValueError, match="count"):
        entity_contrastive_loss(proj, Tensor(np.zeros((13, 4))), neg, np.ones(14, dtype=bool), 0.2)


def test_entity_loss_gradient():
    rng = np.random.default_rng(30)
    proj = Tensor(rng.normal(size=8), requires_grad=True)
    pos = Tensor(rng.normal(size=(14, 8)), requires_grad=True)
    neg = Tensor(rng.normal(size=(14, 8)), requires_grad=True)
    labels = np.zeros(14, dtype=bool)
    labels[[1, 4, 9]] = True
    params = {"proj": proj, "pos": pos, "neg": neg}
    errors = check_gradient(
        lambda: entity_contrastive_loss(proj, pos, neg, labels, 0.2), params, max_entries=20
    )
    assert max(errors.values()) <= 1e-4
