"""Grounded knowledge-prompt vision-language pre-training for chest
radiographs, at desk scale: a pure numpy stack with its own reverse-mode
autodiff, a synthetic grounded dataset with planted abnormality textures,
four pre-training objectives, and downstream task heads."""

from .atlas import DEFAULT_ATLAS, ENTITY_NAMES, NUM_ENTITIES, NUM_REGIONS, REGION_NAMES
from .autodiff import Tensor, check_gradient, no_grad
from .config import RunConfig, load_run_config
from .checkpoint import load_checkpoint, save_checkpoint
from .downstream import (
    evaluate_generation,
    evaluate_vqa,
    finetune_classification,
    finetune_generation,
    finetune_vqa,
    localization_probe,
)
from .encoders import EncoderConfig, ImageEncoder, ReportEncoder
from .fusion import FusionConfig, GroundingFusion, PromptBranch, RegionPooler
from .harness import grounding_alignment, run_ablation, run_eval, run_finetune, run_pretrain
from .losses import LossWeights, itc_loss, itm_loss, lm_loss
from .metrics import auroc, bleu4, rouge_l, text_metrics
from .model import GroundedModel, ModelConfig, build_model, collate
from .prompts import KnowledgePrompt, build_prompt_set, render_prompt_text
from .records import SampleRecord, load_manifest, save_manifest
from .synth import SynthConfig, generate_dataset
from .tokenizer import Vocabulary, build_tokenizer
from .training import OptimizerConfig, train_pretrain

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_ATLAS",
    "ENTITY_NAMES",
    "EncoderConfig",
    "FusionConfig",
    "GroundedModel",
    "GroundingFusion",
    "ImageEncoder",
    "KnowledgePrompt",
    "LossWeights",
    "ModelConfig",
    "NUM_ENTITIES",
    "NUM_REGIONS",
    "OptimizerConfig",
    "PromptBranch",
    "REGION_NAMES",
    "RegionPooler",
    "ReportEncoder",
    "RunConfig",
    "SampleRecord",
    "SynthConfig",
    "Tensor",
    "Vocabulary",
    "auroc",
    "bleu4",
    "build_model",
    "build_prompt_set",
    "build_tokenizer",
    "check_gradient",
    "collate",
    "evaluate_generation",
    "evaluate_vqa",
    "finetune_classification",
    "finetune_generation",
    "finetune_vqa",
    "generate_dataset",
    "grounding_alignment",
    "itc_loss",
    "itm_loss",
    "lm_loss",
    "load_checkpoint",
    "load_manifest",
    "load_run_config",
    "localization_probe",
    "no_grad",
    "render_prompt_text",
    "rouge_l",
    "run_ablation",
    "run_eval",
    "run_finetune",
    "run_pretrain",
    "save_checkpoint",
    "save_manifest",
    "text_metrics",
    "train_pretrain",
]
