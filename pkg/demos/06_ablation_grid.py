"""Run the six-row ablation grid: entity loss on/off crossed with the
grounding pathway (none, concatenation, cross-attention), each row
pre-trained from scratch under one seed and scored on generation and
classification.

Run from the repository root:  python3 demos/06_ablation_grid.py
(several minutes on one core; every row is a full small training run)
"""

import tempfile
from pathlib import Path

from groundcxr.config import RunConfig
from groundcxr.encoders import EncoderConfig
from groundcxr.fusion import FusionConfig
from groundcxr.harness import ABLATION_COLUMNS, run_ablation
from groundcxr.synth import SynthConfig, generate_dataset
from groundcxr.training import OptimizerConfig

records = generate_dataset(
    SynthConfig(num_samples=48, image_size=32, seed=3,
                split_fractions=(0.5, 0.25, 0.0, 0.25))
)
config = RunConfig(
    encoder=EncoderConfig(patch_size=8, image_size=32, hidden_dim=32,
                          projection_dim=16, region_dim=32, prompt_dim=32,
                          num_layers=1, num_heads=2, max_text_len=48),
    fusion=FusionConfig(num_fusion_layers=1, num_heads=2),
    optimizer=OptimizerConfig(lr=1e-3, decay_rate=1.0, warmup_steps=5),
    batch_size=8, epochs=8, finetune_epochs=16, seed=0,
)

with tempfile.TemporaryDirectory() as tmp:
    rows = run_ablation(config, records=records, out_dir=tmp)
    print((Path(tmp) / "ablation.csv").read_text())

widths = [max(len(c), 8) for c in ABLATION_COLUMNS]
print("  ".join(c.ljust(w) for c, w in zip(ABLATION_COLUMNS, widths)))
for row in rows:
    print("  ".join(str(row[c]).ljust(w) for c, w in zip(ABLATION_COLUMNS, widths)))
