"""Build knowledge prompts from (entity, regions, existence) triples, look
at the anatomical atlas behind them, and tokenize the rendered text.

Run from the repository root:  python3 demos/02_prompts_and_tokens.py
"""

from groundcxr.atlas import DEFAULT_ATLAS, ENTITY_NAMES, REGION_NAMES
from groundcxr.prompts import build_prompt_set, entity_label_vector, render_prompt_text
from groundcxr.tokenizer import CLS, build_tokenizer, encode_text

print(f"atlas: {len(ENTITY_NAMES)} abnormality entities, "
      f"{len(REGION_NAMES)} anatomical regions")
print("entities:", ", ".join(ENTITY_NAMES[:7]) + ", ...")
print("regions :", ", ".join(REGION_NAMES[:5]) + ", ...")

# A prompt is a set of triples; positive ones render as location sentences,
# everything else stays a structured negation.
effusion = ENTITY_NAMES.index("effusion")
edema = ENTITY_NAMES.index("edema")
right_lung = REGION_NAMES.index("right lung")
left_lower = REGION_NAMES.index("left lower lung zone")
prompt = build_prompt_set([
    (effusion, (right_lung,), True),
    (edema, (left_lower, right_lung), True),
])
print("\nrendered prompt:", render_prompt_text(prompt))
print("label vector (present entities):",
      [ENTITY_NAMES[i] for i, v in enumerate(entity_label_vector(prompt)) if v])

normal = build_prompt_set([])
print("normal-study sentinel:", render_prompt_text(normal))

# The tokenizer is frequency-built over whatever corpus it is given; the
# atlas phrases keep every prompt word in-vocabulary.
corpus = [render_prompt_text(prompt)] + list(ENTITY_NAMES) + list(REGION_NAMES)
vocab = build_tokenizer(corpus)
print(f"\nvocabulary size {len(vocab)} (first ids are special tokens)")
seq = encode_text(render_prompt_text(prompt), vocab, CLS, max_len=32)
print("token ids :", seq.ids.tolist())
print("round trip:", vocab.decode(seq.ids))
