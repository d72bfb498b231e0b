"""Fine-tune one small pre-trained model on all four downstream tasks:
multi-label classification, abnormality localization, report generation,
and visual question answering.  Grounding-module parameters stay frozen
throughout; the script checks that at the end.

Run from the repository root:  python3 demos/05_downstream_tasks.py
(takes a couple of minutes on one core)
"""

import copy

from groundcxr.atlas import REGION_NAMES
from groundcxr.downstream import (
    evaluate_generation,
    evaluate_vqa,
    finetune_classification,
    finetune_generation,
    finetune_vqa,
    localization_probe,
    parameter_hash,
)
from groundcxr.encoders import EncoderConfig
from groundcxr.fusion import FusionConfig
from groundcxr.harness import build_vocab
from groundcxr.model import ModelConfig, build_model
from groundcxr.records import split_records
from groundcxr.synth import SynthConfig, generate_dataset, single_finding_records
from groundcxr.training import OptimizerConfig, train_pretrain

records = generate_dataset(
    SynthConfig(num_samples=64, image_size=32, seed=9,
                split_fractions=(0.5, 0.25, 0.0, 0.25))
)
splits = split_records(records)
vocab = build_vocab(records)
config = ModelConfig(
    encoder=EncoderConfig(patch_size=8, image_size=32, hidden_dim=32,
                          projection_dim=16, region_dim=32, prompt_dim=32,
                          num_layers=1, num_heads=2, max_text_len=48,
                          vocab_size=len(vocab)),
    fusion=FusionConfig(num_fusion_layers=1, num_heads=2),
)
model = build_model(config, vocab, seed=0)
train_pretrain(model, splits["pretrain"],
               OptimizerConfig(lr=1e-3, decay_rate=1.0, warmup_steps=5),
               batch_size=8, epochs=10, seed=0)
gk_hash = parameter_hash(model.gk_parameters())
print("pre-training done\n")

cls = finetune_classification(model, splits["train"], splits["test"], fraction=1.0)
print(f"classification: mean AUROC {cls.mean_auroc:.3f} "
      f"({cls.num_train} train samples)")

# The localization probe wants exactly one finding per sample, so it gets
# its own single-finding records.
loc_records = generate_dataset(
    SynthConfig(num_samples=48, image_size=32, seed=10,
                max_entities_per_sample=1, prob_normal=0.0,
                multi_region_prob=0.0, split_fractions=(0.0, 0.667, 0.0, 0.333))
)
loc_splits = split_records(loc_records)
loc = localization_probe(model, loc_splits["train"], loc_splits["test"])
print(f"localization:   region accuracy {loc.accuracy:.3f} "
      f"(chance {1 / len(REGION_NAMES):.3f}), mAP@0.5 {loc.map50:.3f}")

gen_model = copy.deepcopy(model)
finetune_generation(gen_model, splits["train"], epochs=8)
gen = evaluate_generation(gen_model, splits["test"])
print(f"generation:     bleu4 {gen.bleu4:.3f}, rougeL {gen.rougeL:.3f}")
cand, ref = gen.samples[0]
print(f"  sample candidate: {cand!r}")
print(f"  sample reference: {ref!r}")

vqa_model = copy.deepcopy(model)
head = finetune_vqa(vqa_model, splits["train"], epochs=8)
vqa = evaluate_vqa(vqa_model, head, splits["test"])
print(f"vqa:            closed {vqa.closed_accuracy:.3f}, "
      f"open {vqa.open_accuracy:.3f}")

unchanged = all(
    parameter_hash(m.gk_parameters()) == gk_hash for m in (gen_model, vqa_model)
) and parameter_hash(model.gk_parameters()) == gk_hash
print(f"\ngrounding parameters untouched by fine-tuning: {unchanged}")
