"""Region/entity vocabularies and knowledge-prompt construction."""

import numpy as np
import pytest

from groundcxr.atlas import (
    DEFAULT_ATLAS,
    ENTITY_NAMES,
    NUM_ENTITIES,
    NUM_REGIONS,
    REGION_NAMES,
    AtlasVocab,
)
from groundcxr.prompts import (
    NO_FINDING_SENTENCE,
    PromptValidationError,
    build_prompt_set,
    entity_label_vector,
    render_prompt_text,
)


def test_vocabulary_sizes():
    assert NUM_REGIONS == 29
    assert NUM_ENTITIES == 14
    assert len(set(REGION_NAMES)) == 29
    assert len(set(ENTITY_NAMES)) == 14


def test_atlas_negations_default():
    assert DEFAULT_ATLAS.negative_phrases == tuple(f"no {e}" for e in ENTITY_NAMES)
    assert DEFAULT_ATLAS.region_index("trachea") == 16
    assert DEFAULT_ATLAS.entity_index("cardiomegaly") == 1


def test_atlas_rejects_bad_shapes():
    with pytest.raises(ValueError):
        AtlasVocab(regions=REGION_NAMES[:5])
    with pytest.raises(ValueError):
        AtlasVocab(entities=ENTITY_NAMES + ("atelectasis",))
    with pytest.raises(ValueError):
        AtlasVocab(negative_phrases=("no",))


def test_single_positive_prompt_rendering():
    prompt = build_prompt_set([(1, [24], True)])
    assert prompt.rendered == ("Cardiomegaly is located at cardiac silhouette",)
    assert render_prompt_text(prompt) == "Cardiomegaly is located at cardiac silhouette"
    assert not prompt.is_normal


def test_multi_region_joined_with_and():
    prompt = build_prompt_set([(2, [6, 3], True)])
    # regions sorted ascending before rendering
    assert prompt.rendered[0] == (
        "Effusion is located at right lower lung zone and right costophrenic angle"
    )


def test_normal_prompt_gets_sentinel():
    prompt = build_prompt_set([(0, [], False), (5, [], False)])
    assert prompt.is_normal
    assert prompt.rendered == (NO_FINDING_SENTENCE,)
    assert render_prompt_text(prompt) == NO_FINDING_SENTENCE


def test_empty_annotations_also_sentinel():
    prompt = build_prompt_set([])
    assert prompt.rendered == (NO_FINDING_SENTENCE,)
    assert entity_label_vector(prompt).sum() == 0


def test_prompt_orders_by_entity_and_dedupes():
    prompt = build_prompt_set([(7, [2], True), (3, [10], True), (3, (10,), True)])
    assert [t.entity for t in prompt.triples] == [3, 7]
    assert len(prompt.positive_triples) == 2


def test_prompt_validation_errors():
    with pytest.raises(PromptValidationError, match="out of range"):
        build_prompt_set([(14, [0], True)])
    with pytest.raises(PromptValidationError, match="out of range"):
        build_prompt_set([(0, [29], True)])
    with pytest.raises(PromptValidationError, match="without regions"):
        build_prompt_set([(0, [], True)])
    with pytest.raises(PromptValidationError, match="conflicting"):
        build_prompt_set([(0, [1], True), (0, [2], True)])
    with pytest.raises(PromptValidationError, match="conflicting"):
        build_prompt_set([(0, [1], True), (0, [1], False)])


def test_entity_label_vector_marks_positives():
    prompt = build_prompt_set([(0, [1], True), (4, [], False), (13, [28], True)])
    labels = entity_label_vector(prompt)
    assert labels.dtype == bool and labels.shape == (14,)
    assert list(np.flatnonzero(labels)) == [0, 13]


def test_rendered_text_injective_over_single_triples():
    """Distinct (entity, region) positives never collide as sentences."""
    seen = {}
    for e in range(NUM_ENTITIES):
        for r in range(NUM_REGIONS):
            text = render_prompt_text(build_prompt_set([(e, [r], True)]))
            assert text not in seen, (seen.get(text), (e, r))
            seen[text] = (e, r)
    assert len(seen) == NUM_ENTITIES * NUM_REGIONS


def test_prompt_text_order_fixed_regardless_of_input_order():
    a = build_prompt_set([(5, [3], True), (2, [8], True)])
    b = build_prompt_set([(2, [8], True), (5, [3], True)])
    assert render_prompt_text(a) == render_prompt_text(b)
