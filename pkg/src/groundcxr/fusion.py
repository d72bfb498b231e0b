"""Grounding fusion: anatomical region features, frozen prompt/entity
encoding, two-stage cross-attention fusion, and the entity contrastive loss.

Region queries attend to prompt token states to bind each abnormality
sentence to its anatomical zone (local stage); image patch states then
attend to the fused region rows (global stage).  The prompt and entity
branches run on a frozen snapshot of the report encoder taken at
construction, so prompt states and entity prototypes stay stationary
while the report encoder trains.
"""

from __future__ import annotations

import copy

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, l2_normalize, no_grad
from .encoders import EncoderConfig, ImageEncoder, ReportEncoder, patch_centers
from .modules import CrossAttentionLayer, Linear, Module
from .tokenizer import CLS, TokenSequence, Vocabulary, encode_text, pad_batch
from .atlas import NUM_ENTITIES, NUM_REGIONS, AtlasVocab


@dataclass
class FusionConfig:
    num_fusion_layers: int = 2
    num_heads: int = 4
    temperature: float = 0.2  # entity contrastive temperature

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.num_fusion_layers <= 0 or self.num_heads <= 0:
            raise ValueError("fusion layers and heads must be positive")


@dataclass
class RegionFeatures:
    """One column of pooled patch features per atlas region."""

    features: Tensor        # (B, 29, region_dim)
    valid: np.ndarray       # (B, 29) booleans; invalid columns are zero

    def __post_init__(self):
        if self.features.shape[-2] != NUM_REGIONS:
            raise ValueError(f"expected {NUM_REGIONS} region rows")


def boxes_to_patch_masks(boxes: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """(29, 4) pixel boxes -> (29, num_patches) membership by patch center."""
    centers = patch_centers(config)  # (P, 2) as (x, y)
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.shape != (NUM_REGIONS, 4):
        raise ValueError(f"expected ({NUM_REGIONS}, 4) boxes, got {boxes.shape}")
    x0, y0, x1, y1 = boxes[:, 0:1], boxes[:, 1:2], boxes[:, 2:3], boxes[:, 3:4]
    cx, cy = centers[None, :, 0], centers[None, :, 1]
    return (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)


class RegionPooler(Module):
    """Mean-pools patch token states inside each region box, then maps to
    the region feature space with an affine layer."""

    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        self.config = config
        self.to_region = Linear(rng, config.hidden_dim, config.region_dim)

    def __call__(self, image_tokens: Tensor, boxes: np.ndarray) -> RegionFeatures:
        """image_tokens (B, 1+P, D) from the image encoder; boxes (B, 29, 4)."""
        boxes = np.asarray(boxes, dtype=np.float64)
        batch = image_tokens.shape[0]
        if boxes.ndim == 2:
            boxes = np.broadcast_to(boxes[None], (batch,) + boxes.shape)
        if boxes.shape[0] != batch:
            raise ValueError(f"{boxes.shape[0]} box sets for a batch of {batch}")
        masks = np.stack([boxes_to_patch_masks(boxes[i], self.config) for i in range(batch)])
        valid = masks.any(axis=-1)
        if not valid.any(axis=-1).all():
            raise ValueError("malformed geometry: a sample has all 29 region boxes empty")
        counts = np.maximum(masks.sum(axis=-1, keepdims=True), 1).astype(np.float64)
        weights = masks.astype(np.float64) / counts  # (B, 29, P)
        patch_states = image_tokens[:, 1:, :]
        pooled = Tensor(weights) @ patch_states  # zero rows where no patch falls inside
        mapped = self.to_region(pooled) * Tensor(valid[:, :, None].astype(np.float64))
        return RegionFeatures(features=mapped, valid=valid)


class GroundingFusion(Module):
    """Two-stage fusion producing locally grounded region rows and globally
    fused image token states.

    Call counters track how often each stage runs so ablation toggles can be
    audited externally.
    """

    def __init__(self, rng: np.random.Generator, enc: EncoderConfig, cfg: FusionConfig):
        self.enc = enc
        self.cfg = cfg
        self.region_proj = Linear(rng, enc.region_dim, enc.prompt_dim)
        self.local_layers = [
            CrossAttentionLayer(rng, enc.prompt_dim, cfg.num_heads)
            for _ in range(cfg.num_fusion_layers)
        ]
        # Query space (image hidden) may differ from the fused row space.
        self.needs_adapter = enc.hidden_dim != enc.prompt_dim
        if self.needs_adapter:
            self.adapter = Linear(rng, enc.prompt_dim, enc.hidden_dim)
        self.global_layer = CrossAttentionLayer(
            rng, enc.hidden_dim, cfg.num_heads,
            kv_dim=None if self.needs_adapter else enc.prompt_dim,
        )
        self.concat_proj = Linear(rng, enc.prompt_dim * 2, enc.prompt_dim)
        self.local_calls = 0
        self.global_calls = 0
        self.concat_calls = 0

    def project_regions(self, regions: RegionFeatures) -> Tensor:
        """Affine map of region features into the prompt space; invalid
        columns stay exactly zero."""
        projected = self.region_proj(regions.features)
        return projected * Tensor(regions.valid[:, :, None].astype(np.float64))

    def fuse_local(
        self,
        region_rows: Tensor,
        prompt_states: Tensor,
        prompt_mask: np.ndarray,
        trace: list | None = None,
    ) -> Tensor:
        """Region rows iteratively cross-attend to prompt token states.

        trace, when provided, receives one (B, H, 29, L) attention array per
        fusion layer.
        """
        self.local_calls += 1
        x = region_rows
        for layer in self.local_layers:
            x = layer(x, prompt_states, key_mask=prompt_mask, collect=trace)
        return x

    def fuse_local_concat(self, region_rows: Tensor, prompt_states: Tensor,
                          prompt_mask: np.ndarray) -> Tensor:
        """Attention-free variant: each region row is concatenated with the
        mean-pooled prompt state and affinely recombined."""
        self.concat_calls += 1
        mask = np.asarray(prompt_mask, dtype=np.float64)
        weights = mask / mask.sum(axis=-1, keepdims=True)  # (B, L)
        pooled = Tensor(weights[:, None, :]) @ prompt_states  # (B, 1, D)
        tiled = pooled + Tensor(np.zeros((region_rows.shape[0], NUM_REGIONS, 1)))
        return self.concat_proj(concat([region_rows, tiled], axis=-1))

    def fuse_global(self, image_tokens: Tensor, local_rows: Tensor) -> Tensor:
        """Image token states attend to the fused region rows; output keeps
        the image token shape."""
        self.global_calls += 1
        kv = self.adapter(local_rows) if self.needs_adapter else local_rows
        return self.global_layer(image_tokens, kv)


class PromptBranch:
    """Frozen snapshot of the report encoder for prompts and entity phrases.

    The snapshot is taken once at construction and never updated, so prompt
    token states and entity prototypes are stationary targets throughout
    training.  Everything here runs under no_grad; the snapshot arrays are
    exposed as named buffers so checkpoints can restore them exactly.
    """

    def __init__(self, report_encoder: ReportEncoder, vocab: Vocabulary):
        snapshot = copy.deepcopy(report_encoder)
        self._buffers = {
            f"prompt_branch.{name}": t for name, t in snapshot.parameters().items()
        }
        for t in self._buffers.values():
            t.requires_grad = False
        self.report_encoder = snapshot
        self.vocab = vocab

    def buffers(self) -> dict[str, Tensor]:
        """Named frozen arrays, for checkpointing; never optimized."""
        return dict(self._buffers)

    def encode_prompt(self, prompt_text: str) -> tuple[Tensor, TokenSequence]:
        """Prompt sentence text -> constant token states (L, prompt_dim)."""
        if not prompt_text:
            raise ValueError("prompt text must be non-empty")
        seq = encode_text(prompt_text, self.vocab, start_token=CLS,
                          max_len=self.report_encoder.config.max_text_len)
        with no_grad():
            states, _ = self.report_encoder(seq.ids, seq.mask)
        return states[0], seq

    def encode_prompt_batch(self, prompt_texts: list[str]) -> tuple[Tensor, np.ndarray]:
        seqs = [
            encode_text(t, self.vocab, start_token=CLS,
                        max_len=self.report_encoder.config.max_text_len)
            for t in prompt_texts
        ]
        ids, mask = pad_batch(seqs)
        with no_grad():
            states, _ = self.report_encoder(ids, mask)
        return states, mask

    def encode_entities(self, atlas: AtlasVocab) -> tuple[Tensor, Tensor]:
        """Positive and negated entity phrases -> unit rows (14, proj_dim) each.

        Phrase embeddings are centered across the set before normalization:
        an untrained frozen encoder maps every phrase close to one shared
        direction, and without centering the contrastive logits barely
        distinguish the prototypes.
        """
        phrases = list(atlas.entities) + list(atlas.negative_phrases)
        seqs = [encode_text(p, self.vocab, start_token=CLS) for p in phrases]
        ids, mask = pad_batch(seqs)
        with no_grad():
            states, _ = self.report_encoder(ids, mask)
            projected = self.report_encoder.proj(states[:, 0, :])
            projected = l2_normalize(projected - projected.mean(axis=0, keepdims=True))
        return projected[:NUM_ENTITIES], projected[NUM_ENTITIES:]


def entity_contrastive_loss(
    image_proj: Tensor,
    pos_entities: Tensor,
    neg_entities: Tensor,
    labels: np.ndarray,
    temperature: float,
) -> Tensor:
    """Contrastive alignment of the projected image class token with entity
    phrase embeddings.

    For each entity the selected similarity (positive phrase when the entity
    is present, negated phrase otherwise) competes against every positive
    and negated phrase in a shared softmax denominator.  Requires at least
    one present entity; callers skip all-negative samples.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    labels = np.asarray(labels, dtype=bool)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D boolean vector")
    if not labels.any():
        raise ValueError("entity loss requires at least one present entity")
    n_ent = labels.size
    if pos_entities.shape[0] != n_ent or neg_entities.shape[0] != n_ent:
        raise ValueError("entity embedding count disagrees with label length")

    inv_t = 1.0 / temperature
    sim_pos = (pos_entities @ image_proj.reshape(-1, 1)).reshape(n_ent) * inv_t
    sim_neg = (neg_entities @ image_proj.reshape(-1, 1)).reshape(n_ent) * inv_t
    all_sims = concat([sim_pos, sim_neg], axis=0)

    # log-sum-exp with a constant shift for stability
    shift = float(all_sims.data.max())
    log_denominator = ((all_sims - shift).exp().sum()).log() + shift

    select = labels.astype(np.float64)
    chosen = sim_pos * Tensor(select) + sim_neg * Tensor(1.0 - select)
    per_entity = chosen - log_denominator
    return -per_entity.mean()
