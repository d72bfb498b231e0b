"""Knowledge-prompt construction: (entity, regions, existence) triples and
their rendered sentence forms.

Each positive triple renders as "<Entity> is located at <region(s)>"; a
prompt with no positive finding renders the sentinel sentence so the prompt
encoder always receives non-empty text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import NUM_ENTITIES, NUM_REGIONS, AtlasVocab, DEFAULT_ATLAS

NO_FINDING_SENTENCE = "No abnormality is found"


class PromptValidationError(ValueError):
    """Raised when annotations violate prompt constraints."""


@dataclass(frozen=True)
class PromptTriple:
    entity: int
    regions: tuple[int, ...]  # atlas order
    exist: bool


@dataclass(frozen=True)
class KnowledgePrompt:
    """Deduplicated triples plus the rendered sentences for positive ones."""

    triples: tuple[PromptTriple, ...]
    rendered: tuple[str, ...]

    @property
    def positive_triples(self) -> tuple[PromptTriple, ...]:
        return tuple(t for t in self.triples if t.exist)

    @property
    def is_normal(self) -> bool:
        return not any(t.exist for t in self.triples)


def _sentence(entity: int, regions: tuple[int, ...], vocab: AtlasVocab) -> str:
    names = [vocab.regions[r] for r in regions]
    place = " and ".join(names)
    entity_name = vocab.entities[entity]
    return f"{entity_name[0].upper()}{entity_name[1:]} is located at {place}"


def build_prompt_set(
    annotations: list[tuple[int, list[int] | tuple[int, ...], bool]],
    vocab: AtlasVocab = DEFAULT_ATLAS,
) -> KnowledgePrompt:
    """Validate raw (entity, regions, exist) annotations into a prompt.

    Duplicate annotations for one entity must agree exactly; indices are
    range-checked against the atlas.
    """
    by_entity: dict[int, PromptTriple] = {}
    for entity, regions, exist in annotations:
        if not 0 <= entity < NUM_ENTITIES:
            raise PromptValidationError(f"entity index {entity} out of range 0..{NUM_ENTITIES - 1}")
        regions = tuple(sorted(set(int(r) for r in regions)))
        for r in regions:
            if not 0 <= r < NUM_REGIONS:
                raise PromptValidationError(f"region index {r} out of range 0..{NUM_REGIONS - 1}")
        if exist and not regions:
            raise PromptValidationError(
                f"entity {vocab.entities[entity]!r} marked present without regions"
            )
        triple = PromptTriple(entity, regions, bool(exist))
        if entity in by_entity and by_entity[entity] != triple:
            raise PromptValidationError(
                f"conflicting annotations for entity {vocab.entities[entity]!r}"
            )
        by_entity[entity] = triple

    triples = tuple(by_entity[e] for e in sorted(by_entity))
    rendered = tuple(_sentence(t.entity, t.regions, vocab) for t in triples if t.exist)
    if not rendered:
        rendered = (NO_FINDING_SENTENCE,)
    return KnowledgePrompt(triples=triples, rendered=rendered)


def render_prompt_text(prompt: KnowledgePrompt) -> str:
    """Join rendered sentences in entity-index order with '. ' separators."""
    return ". ".join(prompt.rendered)


def entity_label_vector(prompt: KnowledgePrompt) -> np.ndarray:
    """Boolean (14,) vector: true where the prompt marks the entity present."""
    labels = np.zeros(NUM_ENTITIES, dtype=bool)
    for t in prompt.triples:
        if t.exist:
            labels[t.entity] = True
    return labels
