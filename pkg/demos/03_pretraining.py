"""Pre-train the grounded model on a small synthetic set and watch the
four objectives (alignment, matching, generation, entity-prompt
contrastive) fall together.

Run from the repository root:  python3 demos/03_pretraining.py
"""

import dataclasses
import time

from groundcxr.encoders import EncoderConfig
from groundcxr.fusion import FusionConfig
from groundcxr.harness import build_vocab
from groundcxr.model import ModelConfig, build_model
from groundcxr.synth import SynthConfig, generate_dataset
from groundcxr.training import OptimizerConfig, train_pretrain

records = generate_dataset(
    SynthConfig(num_samples=24, image_size=32, seed=1,
                split_fractions=(1.0, 0.0, 0.0, 0.0))
)
vocab = build_vocab(records)
config = ModelConfig(
    encoder=EncoderConfig(patch_size=8, image_size=32, hidden_dim=32,
                          projection_dim=16, region_dim=32, prompt_dim=32,
                          num_layers=1, num_heads=2, max_text_len=48,
                          vocab_size=len(vocab)),
    fusion=FusionConfig(num_fusion_layers=1, num_heads=2),
)
model = build_model(config, vocab, seed=0)
n_params = sum(p.data.size for p in model.parameters().values())
print(f"model: {n_params:,} parameters, vocab {len(vocab)}")

t0 = time.time()
log = train_pretrain(
    model, records,
    OptimizerConfig(lr=1e-3, decay_rate=1.0, warmup_steps=5),
    batch_size=8, epochs=12, seed=0,
)
print(f"{len(log.steps)} steps in {time.time() - t0:.1f}s\n")

print(f"{'step':>4} {'total':>8} {'itc':>7} {'itm':>7} {'lm':>7} {'entity':>7} {'itm_acc':>7}")
for entry in log.steps[:: max(1, len(log.steps) // 8)] + [log.steps[-1]]:
    print(f"{entry['step']:>4} {entry['total']:>8.3f} {entry['itc']:>7.3f} "
          f"{entry['itm']:>7.3f} {entry['lm']:>7.3f} {entry['entity']:>7.3f} "
          f"{entry['itm_accuracy']:>7.2f}")

first, last = log.totals[0], log.totals[-1]
print(f"\ntotal loss {first:.3f} -> {last:.3f} "
      f"({100 * (1 - last / first):.0f}% drop)")
