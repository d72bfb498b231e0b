"""Paired sample records and line-delimited manifest serialization.

A manifest is one JSON object per line referencing an 8-bit grayscale
raster (PGM or PNG) relative to the manifest's directory.  Loading
re-validates every record invariant and reports the offending line or
sample on failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .atlas import NUM_ENTITIES, NUM_REGIONS, AtlasVocab, DEFAULT_ATLAS
from .prompts import KnowledgePrompt, build_prompt_set, entity_label_vector

SPLITS = ("pretrain", "train", "val", "test")

# Fixed answer vocabulary for question answering: yes, no, then region names.
ANSWER_YES = 0
ANSWER_NO = 1
NUM_ANSWERS = 2 + NUM_REGIONS


def answer_class_for_region(region: int) -> int:
    return 2 + region


def answer_name(cls: int, atlas: AtlasVocab = DEFAULT_ATLAS) -> str:
    if cls == ANSWER_YES:
        return "yes"
    if cls == ANSWER_NO:
        return "no"
    return atlas.regions[cls - 2]


class ManifestError(ValueError):
    """Raised for malformed manifest lines or record invariant violations."""


@dataclass
class SampleRecord:
    sample_id: str
    image: np.ndarray               # (H, W) float64 in [0, 1]
    report: str
    prompt: KnowledgePrompt
    region_boxes: np.ndarray        # (29, 4) ints, atlas order, x0 y0 x1 y1
    label_vector: np.ndarray        # (14,) booleans
    qa_pairs: list = field(default_factory=list)  # (question, answer-class)
    split: str = "pretrain"

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise ManifestError(f"sample {self.sample_id}: unknown split {self.split!r}")
        if self.image.ndim != 2:
            raise ManifestError(f"sample {self.sample_id}: image must be 2-D")
        if self.image.min() < 0 or self.image.max() > 1:
            raise ManifestError(f"sample {self.sample_id}: image values outside [0, 1]")
        boxes = np.asarray(self.region_boxes)
        if boxes.shape != (NUM_REGIONS, 4):
            raise ManifestError(
                f"sample {self.sample_id}: region_boxes must be ({NUM_REGIONS}, 4)"
            )
        h, w = self.image.shape
        if (boxes[:, 0] < 0).any() or (boxes[:, 1] < 0).any() \
                or (boxes[:, 2] > w).any() or (boxes[:, 3] > h).any() \
                or (boxes[:, 0] >= boxes[:, 2]).any() or (boxes[:, 1] >= boxes[:, 3]).any():
            raise ManifestError(f"sample {self.sample_id}: region_boxes outside image bounds")
        labels = np.asarray(self.label_vector, dtype=bool)
        if labels.shape != (NUM_ENTITIES,):
            raise ManifestError(f"sample {self.sample_id}: label_vector must have {NUM_ENTITIES} entries")
        expected = entity_label_vector(self.prompt)
        if (labels != expected).any():
            bad = int(np.argmax(labels != expected))
            raise ManifestError(
                f"sample {self.sample_id}: label_vector disagrees with prompt "
                f"existence for entity index {bad}"
            )
        for q, a in self.qa_pairs:
            if not isinstance(q, str) or not 0 <= int(a) < NUM_ANSWERS:
                raise ManifestError(f"sample {self.sample_id}: invalid qa pair {(q, a)!r}")


def save_image(image: np.ndarray, path: Path) -> None:
    """Write a [0, 1] float image as 8-bit grayscale (format from suffix)."""
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        data = np.asarray(img.convert("L"), dtype=np.float64)
    return data / 255.0


def _record_to_json(record: SampleRecord, image_rel: str, atlas: AtlasVocab) -> dict:
    entities = [
        {
            "name": atlas.entities[t.entity],
            "regions": [atlas.regions[r] for r in t.regions],
            "exist": t.exist,
        }
        for t in record.prompt.triples
    ]
    return {
        "sample_id": record.sample_id,
        "image": image_rel,
        "report": record.report,
        "entities": entities,
        "boxes": np.asarray(record.region_boxes, dtype=int).tolist(),
        "labels": [bool(v) for v in record.label_vector],
        "qa": [{"q": q, "a": int(a)} for q, a in record.qa_pairs],
        "split": record.split,
    }


def save_manifest(
    records: list[SampleRecord],
    directory: Path,
    atlas: AtlasVocab = DEFAULT_ATLAS,
    image_format: str = "png",
) -> Path:
    """Write rasters plus a `manifest.jsonl` into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image_dir = directory / "images"
    image_dir.mkdir(exist_ok=True)
    manifest_path = directory / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for record in records:
            record.validate()
            rel = f"images/{record.sample_id}.{image_format}"
            save_image(record.image, directory / rel)
            fh.write(json.dumps(_record_to_json(record, rel, atlas)) + "\n")
    return manifest_path


def _parse_record(obj: dict, base: Path, atlas: AtlasVocab) -> SampleRecord:
    annotations = []
    for ent in obj["entities"]:
        try:
            entity_idx = atlas.entity_index(ent["name"])
            region_idx = [atlas.region_index(r) for r in ent["regions"]]
        except ValueError as exc:
            raise ManifestError(f"sample {obj.get('sample_id')}: {exc}") from exc
        annotations.append((entity_idx, region_idx, bool(ent["exist"])))
    record = SampleRecord(
        sample_id=str(obj["sample_id"]),
        image=load_image(base / obj["image"]),
        report=str(obj["report"]),
        prompt=build_prompt_set(annotations, atlas),
        region_boxes=np.asarray(obj["boxes"], dtype=int),
        label_vector=np.asarray(obj["labels"], dtype=bool),
        qa_pairs=[(item["q"], int(item["a"])) for item in obj.get("qa", [])],
        split=str(obj["split"]),
    )
    record.validate()
    return record


def load_manifest(path: Path, atlas: AtlasVocab = DEFAULT_ATLAS) -> list[SampleRecord]:
    """Parse and validate every line; order is preserved.  `path` may be
    the manifest file or its containing directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    base = path.parent
    records: list[SampleRecord] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            try:
                records.append(_parse_record(obj, base, atlas))
            except (KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: missing or invalid field ({exc})") from exc
    return records


def split_records(records: list[SampleRecord]) -> dict[str, list[SampleRecord]]:
    out: dict[str, list[SampleRecord]] = {s: [] for s in SPLITS}
    for r in records:
        out[r.split].append(r)
    return out
