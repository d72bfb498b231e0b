"""Synthetic grounded dataset generator.

Each sample is a smooth background image with abnormality textures planted
inside known atlas grid cells, a templated report realizing the knowledge
prompt, boxes, labels, and question-answer pairs.  Every entity renders a
distinct parametric texture (blob / stripe / ring family with
entity-specific frequency and orientation), so a nearest-template matcher
can recover the planted identity exactly and every learning task downstream
is solvable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import NUM_ENTITIES, NUM_REGIONS, DEFAULT_ATLAS
from .prompts import build_prompt_set, entity_label_vector
from .records import (
    ANSWER_NO,
    ANSWER_YES,
    SampleRecord,
    answer_class_for_region,
    split_records,
)

GRID_COLS, GRID_ROWS = 6, 5  # 30 cells; the last is unused by the 29-region atlas

FILLER_SENTENCES = (
    "The cardiomediastinal silhouette is stable",
    "No acute osseous abnormality is seen",
    "The visualized soft tissues are unremarkable",
    "Lung volumes are adequate",
    "There is no significant interval change",
    "The imaged upper abdomen is unremarkable",
    "Support devices are in standard position",
    "Osseous structures are intact",
)

# Texture placement contrast: planted cells are overwritten with
# CELL_FLOOR + CELL_GAIN * texture, then 8-bit quantized with the image.
CELL_FLOOR, CELL_GAIN = 0.15, 0.7


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    num_samples: int = 256
    image_size: int = 64
    seed: int = 0
    max_entities_per_sample: int = 3
    prob_normal: float = 0.2
    multi_region_prob: float = 0.15
    closed_questions: int = 3
    split_fractions: tuple[float, float, float, float] = (0.5, 0.25, 0.10, 0.15)

    def __post_init__(self):
        if self.num_samples <= 0:
            raise SynthConfigError("num_samples must be positive")
        if not 0 <= self.prob_normal <= 1:
            raise SynthConfigError("prob_normal must lie in [0, 1]")
        if not 0 <= self.max_entities_per_sample <= NUM_ENTITIES:
            raise SynthConfigError("max_entities_per_sample must lie in 0..14")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise SynthConfigError("split fractions must sum to 1")
        # grid feasibility check happens in atlas_grid_boxes
        atlas_grid_boxes(self.image_size)


def atlas_grid_boxes(image_size: int) -> np.ndarray:
    """Fixed (29, 4) integer grid tiling in atlas order.

    Cells are laid out row-major on a 6x5 grid; the 30th cell is unused.
    """
    if image_size // GRID_COLS < 2 or image_size // GRID_ROWS < 2:
        raise SynthConfigError(
            f"image_size {image_size} too small for the {GRID_COLS}x{GRID_ROWS} atlas grid"
        )
    xs = np.round(np.linspace(0, image_size, GRID_COLS + 1)).astype(int)
    ys = np.round(np.linspace(0, image_size, GRID_ROWS + 1)).astype(int)
    boxes = []
    for k in range(NUM_REGIONS):
        row, col = divmod(k, GRID_COLS)
        boxes.append([xs[col], ys[row], xs[col + 1], ys[row + 1]])
    return np.asarray(boxes, dtype=int)


# Fixed designated-region table: entity e may appear in one of four zones.
ENTITY_REGION_CANDIDATES = tuple(
    tuple(sorted({(2 * e + 7 * j) % NUM_REGIONS for j in range(4)}))
    for e in range(NUM_ENTITIES)
)


def render_texture(entity: int, height: int, width: int) -> np.ndarray:
    """Deterministic [0, 1] texture for one entity at a given cell size."""
    if not 0 <= entity < NUM_ENTITIES:
        raise ValueError(f"entity index {entity} out of range")
    family, level = entity % 3, entity // 3
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u = (xx + 0.5) / width
    v = (yy + 0.5) / height
    if family == 0:
        # grid of gaussian bumps, (level+2) per side
        k = level + 2
        cx = (np.arange(k) + 0.5) / k
        du = u[..., None] - cx[None, None, :]
        dv = v[..., None] - cx[None, None, :]
        sigma = 0.22 / k
        bumps = np.exp(-(du ** 2) / (2 * sigma ** 2)).sum(-1) * \
            np.exp(-(dv ** 2) / (2 * sigma ** 2)).sum(-1)
        tex = bumps / bumps.max()
    elif family == 1:
        # oriented stripes, frequency and angle stepped by level
        freq = 2.0 + level
        theta = np.deg2rad(22.0 + 36.0 * level)
        phase = u * np.cos(theta) + v * np.sin(theta)
        tex = 0.5 + 0.5 * np.sin(2 * np.pi * freq * phase)
    else:
        # concentric rings around the cell center
        freq = 1.5 + level
        r = np.sqrt((u - 0.5) ** 2 + (v - 0.5) ** 2) / np.sqrt(0.5)
        tex = 0.5 + 0.5 * np.cos(2 * np.pi * freq * r)
    return tex


def render_planted_cell(entity: int, height: int, width: int) -> np.ndarray:
    """Exact pixel content of a planted cell after 8-bit quantization."""
    raw = CELL_FLOOR + CELL_GAIN * render_texture(entity, height, width)
    return np.round(raw * 255.0) / 255.0


def nearest_texture_entity(cell: np.ndarray) -> int:
    """Reference matcher: nearest planted-cell template by L2 distance."""
    h, w = cell.shape
    dists = [
        float(((cell - render_planted_cell(e, h, w)) ** 2).sum())
        for e in range(NUM_ENTITIES)
    ]
    return int(np.argmin(dists))


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth low-contrast field: a few broad gaussian blobs plus a ramp."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    field = 0.3 * (xx + yy) / 2.0
    for _ in range(3):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        s = rng.uniform(0.18, 0.4)
        a = rng.uniform(0.3, 1.0)
        field += a * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    field -= field.min()
    field /= max(field.max(), 1e-9)
    return 0.2 + 0.25 * field


def _sample_entities(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, tuple[int, ...]]]:
    """Choose entities and one (occasionally two) free designated regions each."""
    if cfg.max_entities_per_sample == 0 or rng.random() < cfg.prob_normal:
        return []
    count = int(rng.integers(1, cfg.max_entities_per_sample + 1))
    entities = rng.choice(NUM_ENTITIES, size=count, replace=False)
    used: set[int] = set()
    placements = []
    for e in sorted(int(x) for x in entities):
        free = [r for r in ENTITY_REGION_CANDIDATES[e] if r not in used]
        if not free:
            continue
        want_two = len(free) >= 2 and rng.random() < cfg.multi_region_prob
        picked = rng.choice(len(free), size=2 if want_two else 1, replace=False)
        regions = tuple(sorted(free[i] for i in picked))
        used.update(regions)
        placements.append((e, regions))
    return placements


def make_qa_pairs(record: SampleRecord, closed_questions: int = 3) -> list[tuple[str, int]]:
    """Closed presence questions for a few entities plus one location
    question per present entity; deterministic in the sample id."""
    rng = np.random.default_rng(_record_seed(record.sample_id))
    atlas = DEFAULT_ATLAS
    pairs: list[tuple[str, int]] = []
    asked = rng.choice(NUM_ENTITIES, size=min(closed_questions, NUM_ENTITIES), replace=False)
    for e in sorted(int(x) for x in asked):
        answer = ANSWER_YES if record.label_vector[e] else ANSWER_NO
        pairs.append((f"Is {atlas.entities[e]} present?", answer))
    for t in record.prompt.positive_triples:
        region = t.regions[0]
        pairs.append((f"Where is {atlas.entities[t.entity]}?", answer_class_for_region(region)))
    return pairs


def _record_seed(sample_id: str) -> int:
    import hashlib

    digest = hashlib.sha256(sample_id.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _assign_splits(cfg: SynthConfig) -> list[str]:
    edges = np.round(np.cumsum((0.0,) + cfg.split_fractions) * cfg.num_samples).astype(int)
    names = ("pretrain", "train", "val", "test")
    out = []
    for i, name in enumerate(names):
        out.extend([name] * (edges[i + 1] - edges[i]))
    return out


def generate_sample(cfg: SynthConfig, index: int, split: str) -> SampleRecord:
    """Pure function of (cfg, index); parallel generation stays reproducible."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(index,)))
    size = cfg.image_size
    boxes = atlas_grid_boxes(size)
    image = _background(rng, size)

    placements = _sample_entities(rng, cfg)
    for entity, regions in placements:
        for region in regions:
            x0, y0, x1, y1 = boxes[region]
            image[y0:y1, x0:x1] = CELL_FLOOR + CELL_GAIN * render_texture(
                entity, y1 - y0, x1 - x0
            )
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0

    prompt = build_prompt_set([(e, list(r), True) for e, r in placements])
    filler = FILLER_SENTENCES[int(rng.integers(len(FILLER_SENTENCES)))]
    report = ". ".join(list(prompt.rendered) + [filler]) + "."

    record = SampleRecord(
        sample_id=f"synth-{cfg.seed:x}-{index:05d}",
        image=image,
        report=report,
        prompt=prompt,
        region_boxes=boxes,
        label_vector=entity_label_vector(prompt),
        qa_pairs=[],
        split=split,
    )
    record.qa_pairs = make_qa_pairs(record, cfg.closed_questions)
    record.validate()
    return record


def generate_dataset(cfg: SynthConfig) -> list[SampleRecord]:
    splits = _assign_splits(cfg)
    return [generate_sample(cfg, i, splits[i]) for i in range(cfg.num_samples)]


def single_finding_records(records: list[SampleRecord]) -> list[SampleRecord]:
    """Samples with exactly one planted entity in exactly one region."""
    out = []
    for r in records:
        pos = r.prompt.positive_triples
        if len(pos) == 1 and len(pos[0].regions) == 1:
            out.append(r)
    return out


__all__ = [
    "SynthConfig",
    "SynthConfigError",
    "atlas_grid_boxes",
    "generate_dataset",
    "generate_sample",
    "make_qa_pairs",
    "nearest_texture_entity",
    "render_texture",
    "render_planted_cell",
    "single_finding_records",
    "split_records",
    "ENTITY_REGION_CANDIDATES",
    "FILLER_SENTENCES",
]
