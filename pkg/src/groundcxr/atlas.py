"""Fixed anatomical-region atlas and abnormality-entity vocabulary.

The atlas lists 29 chest zones used as grounding targets; the entity list
holds the 14 common chest X-ray abnormality labels, each with a negated
phrasing for contrastive entity supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

REGION_NAMES = (
    "right lung",
    "right upper lung zone",
    "right mid lung zone",
    "right lower lung zone",
    "right hilar structures",
    "right apical zone",
    "right costophrenic angle",
    "right hemidiaphragm",
    "left lung",
    "left upper lung zone",
    "left mid lung zone",
    "left lower lung zone",
    "left hilar structures",
    "left apical zone",
    "left costophrenic angle",
    "left hemidiaphragm",
    "trachea",
    "spine",
    "right clavicle",
    "left clavicle",
    "aortic arch",
    "mediastinum",
    "upper mediastinum",
    "superior vena cava",
    "cardiac silhouette",
    "cavoatrial junction",
    "right atrium",
    "carina",
    "abdomen",
)

ENTITY_NAMES = (
    "atelectasis",
    "cardiomegaly",
    "effusion",
    "infiltration",
    "mass",
    "nodule",
    "pneumonia",
    "pneumothorax",
    "consolidation",
    "edema",
    "emphysema",
    "fibrosis",
    "pleural thickening",
    "hernia",
)

NUM_REGIONS = len(REGION_NAMES)
NUM_ENTITIES = len(ENTITY_NAMES)


@dataclass(frozen=True)
class AtlasVocab:
    """Ordered region and entity vocabularies with per-entity negations."""

    regions: tuple[str, ...] = REGION_NAMES
    entities: tuple[str, ...] = ENTITY_NAMES
    negative_phrases: tuple[str, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.negative_phrases is None:
            object.__setattr__(
                self, "negative_phrases", tuple(f"no {e}" for e in self.entities)
            )
        if len(self.regions) != NUM_REGIONS:
            raise ValueError(f"expected {NUM_REGIONS} regions, got {len(self.regions)}")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("region names must be unique")
        if len(self.entities) != NUM_ENTITIES:
            raise ValueError(f"expected {NUM_ENTITIES} entities, got {len(self.entities)}")
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("entity names must be unique")
        if len(self.negative_phrases) != len(self.entities):
            raise ValueError("one negative phrase per entity required")

    def region_index(self, name: str) -> int:
        return self.regions.index(name)

    def entity_index(self, name: str) -> int:
        return self.entities.index(name)


DEFAULT_ATLAS = AtlasVocab()
