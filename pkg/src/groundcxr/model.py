"""Full pre-training model: encoders, grounding fusion, and loss heads.

`GroundedModel.forward_losses` computes the four pre-training objectives on
a collated batch.  The grounding pathway is switchable (`none`, `concat`,
`cross_attention`) and the entity loss can be disabled, which together give
the six ablation configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atlas import DEFAULT_ATLAS, AtlasVocab
from .autodiff import Tensor, concat, l2_normalize
from .encoders import EncoderConfig, ImageEncoder, ReportEncoder
from .backbone import CrossModalBackbone
from .fusion import (
    FusionConfig,
    GroundingFusion,
    PromptBranch,
    RegionPooler,
    entity_contrastive_loss,
)
from .modules import Linear, Module
from .losses import (
    LossWeights,
    derangement,
    itc_loss,
    itm_accuracy,
    itm_loss,
    lm_loss,
    total_loss,
)
from .prompts import render_prompt_text
from .records import SampleRecord
from .tokenizer import BOS, CLS, ENC, Vocabulary, encode_text, pad_batch

GROUNDING_MODES = ("none", "concat", "cross_attention")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    grounding: str = "cross_attention"
    use_entity_loss: bool = True

    def __post_init__(self):
        if self.grounding not in GROUNDING_MODES:
            raise ValueError(f"grounding must be one of {GROUNDING_MODES}")


@dataclass
class Batch:
    """Collated training inputs; token arrays are (B, L) ids plus masks."""

    images: np.ndarray
    boxes: np.ndarray
    labels: np.ndarray
    prompt_texts: list[str]
    cls_ids: np.ndarray
    cls_mask: np.ndarray
    enc_ids: np.ndarray
    enc_mask: np.ndarray
    lm_ids: np.ndarray
    lm_mask: np.ndarray
    sample_ids: list[str]

    @property
    def size(self) -> int:
        return self.images.shape[0]


def collate(records: list[SampleRecord], vocab: Vocabulary, config: EncoderConfig) -> Batch:
    """Stack records into one batch; reports are tokenized three ways for the
    contrastive, matching, and generation heads."""
    if not records:
        raise ValueError("cannot collate an empty batch")
    limit = config.max_text_len
    cls_seqs = [encode_text(r.report, vocab, CLS, max_len=limit) for r in records]
    enc_seqs = [encode_text(r.report, vocab, ENC, max_len=limit) for r in records]
    lm_seqs = [
        encode_text(r.report, vocab, BOS, max_len=limit, append_eos=True) for r in records
    ]
    cls_ids, cls_mask = pad_batch(cls_seqs)
    enc_ids, enc_mask = pad_batch(enc_seqs)
    lm_ids, lm_mask = pad_batch(lm_seqs)
    return Batch(
        images=np.stack([r.image for r in records]),
        boxes=np.stack([r.region_boxes for r in records]),
        labels=np.stack([r.label_vector for r in records]),
        prompt_texts=[render_prompt_text(r.prompt) for r in records],
        cls_ids=cls_ids,
        cls_mask=cls_mask,
        enc_ids=enc_ids,
        enc_mask=enc_mask,
        lm_ids=lm_ids,
        lm_mask=lm_mask,
        sample_ids=[r.sample_id for r in records],
    )


class GroundedModel(Module):
    """Pre-training model with switchable grounding pathway."""

    def __init__(self, rng: np.random.Generator, config: ModelConfig, vocab: Vocabulary,
                 atlas: AtlasVocab = DEFAULT_ATLAS):
        enc = config.encoder
        if enc.vocab_size != len(vocab):
            raise ValueError(
                f"encoder vocab_size {enc.vocab_size} != tokenizer size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        self.atlas = atlas
        self.image_encoder = ImageEncoder(rng, enc)
        self.report_encoder = ReportEncoder(rng, enc)
        self.backbone = CrossModalBackbone(rng, enc)
        self.pooler = RegionPooler(rng, enc)
        self.fusion = GroundingFusion(rng, enc, config.fusion)
        self.itc_log_temp = Tensor(
            np.asarray(np.log(config.weights.itc_temperature_init)), requires_grad=True
        )
        self.prompt_branch = PromptBranch(self.report_encoder, vocab)
        self.entity_proj = Linear(rng, enc.projection_dim, enc.projection_dim)
        self.entity_calls = 0

    # -- feature paths -------------------------------------------------------

    def temperature(self) -> Tensor:
        return self.itc_log_temp.exp()

    def encode_images(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        return self.image_encoder(images)

    def ground(
        self,
        image_tokens: Tensor,
        boxes: np.ndarray,
        prompt_texts: list[str],
        trace: list | None = None,
    ) -> Tensor:
        """Grounded visual states z_fused; identity pass-through when the
        grounding pathway is disabled."""
        if self.config.grounding == "none":
            return image_tokens
        prompt_states, prompt_mask = self.prompt_branch.encode_prompt_batch(prompt_texts)
        regions = self.pooler(image_tokens, boxes)
        rows = self.fusion.project_regions(regions)
        if self.config.grounding == "concat":
            local = self.fusion.fuse_local_concat(rows, prompt_states, prompt_mask)
        else:
            local = self.fusion.fuse_local(rows, prompt_states, prompt_mask, trace=trace)
        return self.fusion.fuse_global(image_tokens, local)

    def entity_loss(self, image_proj: Tensor, labels: np.ndarray) -> Tensor:
        """Mean contrastive entity loss over samples with at least one
        positive entity; zero when disabled or no sample qualifies.

        The global image projection passes through a dedicated entity head
        before comparison, so entity alignment does not compete with the
        image-text contrastive geometry for the same vector.
        """
        if not self.config.use_entity_loss:
            return Tensor(np.asarray(0.0))
        self.entity_calls += 1
        view = l2_normalize(self.entity_proj(image_proj))
        pos, neg = self.prompt_branch.encode_entities(self.atlas)
        terms = []
        for i in range(labels.shape[0]):
            if labels[i].any():
                terms.append(
                    entity_contrastive_loss(
                        view[i], pos, neg, labels[i], self.config.fusion.temperature
                    )
                )
        if not terms:
            return Tensor(np.asarray(0.0))
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc * (1.0 / len(terms))

    # -- training objective --------------------------------------------------

    def forward_losses(
        self, batch: Batch, rng: np.random.Generator, trace: list | None = None
    ) -> dict:
        """All four objectives on one batch.  Returns loss Tensors under
        keys total/itc/itm/lm/entity plus the float itm_accuracy."""
        v_tokens, v_proj = self.image_encoder(batch.images)
        _, t_proj = self.report_encoder(batch.cls_ids, batch.cls_mask)
        itc = itc_loss(v_proj, t_proj, self.temperature())

        z_fused = self.ground(v_tokens, batch.boxes, batch.prompt_texts, trace=trace)
        entity = self.entity_loss(v_proj, batch.labels)

        perm = derangement(batch.size, rng)
        pair_ids = np.concatenate([batch.enc_ids, batch.enc_ids[perm]])
        pair_mask = np.concatenate([batch.enc_mask, batch.enc_mask[perm]])
        pair_visual = concat([z_fused, z_fused], axis=0)
        _, match_logits = self.backbone.encode_pair(pair_ids, pair_mask, pair_visual)
        pair_labels = np.concatenate(
            [np.ones(batch.size, dtype=bool), np.zeros(batch.size, dtype=bool)]
        )
        itm = itm_loss(match_logits, pair_labels)

        step_logits = self.backbone.decode_logits(
            batch.lm_ids[:, :-1], batch.lm_mask[:, :-1], z_fused
        )
        lm = lm_loss(step_logits, batch.lm_ids[:, 1:], batch.lm_mask[:, 1:])

        return {
            "total": total_loss(itc, itm, lm, entity, self.config.weights),
            "itc": itc,
            "itm": itm,
            "lm": lm,
            "entity": entity,
            "itm_accuracy": itm_accuracy(match_logits, pair_labels),
        }

    # -- parameter groups ----------------------------------------------------

    def gk_parameters(self) -> dict[str, Tensor]:
        """Grounding-module parameters: region pooling/projection and fusion.
        These stay frozen during downstream fine-tuning."""
        params = {}
        params.update(self.pooler.parameters("pooler"))
        params.update(self.fusion.parameters("fusion"))
        return params

    def backbone_parameters(self) -> dict[str, Tensor]:
        """Everything that downstream fine-tuning may update."""
        gk = set(self.gk_parameters())
        return {k: v for k, v in self.parameters().items() if k not in gk}

    def buffers(self) -> dict[str, Tensor]:
        """Frozen prompt-branch snapshot; checkpointed but never optimized."""
        return self.prompt_branch.buffers()


def build_model(config: ModelConfig, vocab: Vocabulary, seed: int,
                atlas: AtlasVocab = DEFAULT_ATLAS) -> GroundedModel:
    """Construct a model whose initial weights are a pure function of seed."""
    rng = np.random.default_rng(seed)
    return GroundedModel(rng, config, vocab, atlas)
