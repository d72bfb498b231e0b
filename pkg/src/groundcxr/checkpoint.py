"""Versioned checkpoints: named parameter arrays in an npz archive plus a
JSON header carrying the run config, tokenizer words, RNG state, and step.

load(save(model)) restores parameters bit-for-bit, so resumed forwards
match the originals exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, config_to_dict
from .model import GroundedModel, build_model
from .tokenizer import SPECIAL_TOKENS, Vocabulary

FORMAT_VERSION = 1
PARAM_PREFIX = "param::"
BUFFER_PREFIX = "buffer::"


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def rng_state_to_json(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def save_checkpoint(
    path: str | Path,
    model: GroundedModel,
    run_config: RunConfig,
    rng: np.random.Generator | None = None,
    step: int = 0,
) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = Path(str(path) + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": FORMAT_VERSION,
        "step": int(step),
        "config": config_to_dict(run_config),
        "grounding": model.config.grounding,
        "use_entity_loss": model.config.use_entity_loss,
        "words": list(model.vocab.id_to_word[len(SPECIAL_TOKENS):]),
        "seed": run_config.seed,
        "rng_state": rng_state_to_json(rng) if rng is not None else None,
    }
    arrays = {PARAM_PREFIX + k: p.data for k, p in model.parameters().items()}
    arrays.update({BUFFER_PREFIX + k: t.data for k, t in model.buffers().items()})
    np.savez(path, __meta__=np.asarray(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[GroundedModel, RunConfig, dict]:
    """Rebuild the model and restore every parameter by name.

    Returns (model, run_config, meta); meta keeps step and rng_state.
    """
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".npz").exists():
        path = path.with_suffix(path.suffix + ".npz")
    try:
        archive = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable or truncated checkpoint {path}: {exc}") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise CheckpointError(f"checkpoint {path} has no metadata record")
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format {meta.get('version')} != supported {FORMAT_VERSION}"
            )
        run_config = config_from_dict(meta["config"])
        vocab = Vocabulary(list(meta["words"]))
        model = build_model(run_config.model_config(len(vocab)), vocab, seed=run_config.seed)
        for prefix, tensors in (
            (PARAM_PREFIX, model.parameters()),
            (BUFFER_PREFIX, model.buffers()),
        ):
            stored = {
                name[len(prefix):] for name in archive.files if name.startswith(prefix)
            }
            missing = sorted(set(tensors) - stored)
            extra = sorted(stored - set(tensors))
            if missing or extra:
                raise CheckpointError(
                    f"parameter name mismatch: missing {missing[:3]}, extra {extra[:3]}"
                )
            for name, tensor in tensors.items():
                data = archive[prefix + name]
                if data.shape != tensor.data.shape:
                    raise CheckpointError(
                        f"shape mismatch for {name}: {data.shape} vs {tensor.data.shape}"
                    )
                tensor.data = data.astype(np.float64)
    return model, run_config, meta
