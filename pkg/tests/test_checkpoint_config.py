"""Run configuration parsing/overrides and checkpoint round-trips."""

import dataclasses

import numpy as np
import pytest

from groundcxr.checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    rng_from_state,
    rng_state_to_json,
    save_checkpoint,
)
from groundcxr.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_run_config,
    parse_config_text,
)
from groundcxr.model import build_model, collate
from groundcxr.prompts import render_prompt_text
from groundcxr.synth import SynthConfig, generate_dataset
from groundcxr.tokenizer import build_tokenizer
from groundcxr.atlas import DEFAULT_ATLAS


def small_run_config():
    return apply_overrides(RunConfig(), {
        "encoder.patch_size": "4",
        "encoder.image_size": "16",
        "encoder.hidden_dim": "16",
        "encoder.projection_dim": "8",
        "encoder.region_dim": "16",
        "encoder.prompt_dim": "16",
        "encoder.num_layers": "1",
        "encoder.num_heads": "2",
        "encoder.max_text_len": "32",
        "synth.num_samples": "4",
        "synth.image_size": "16",
    })


def small_model(config):
    records = generate_dataset(config.synth)
    corpus = [r.report for r in records]
    corpus += [render_prompt_text(r.prompt) for r in records]
    corpus += list(DEFAULT_ATLAS.entities) + list(DEFAULT_ATLAS.negative_phrases)
    vocab = build_tokenizer(corpus)
    return build_model(config.model_config(len(vocab)), vocab, seed=config.seed), vocab, records


# -- config --------------------------------------------------------------


def test_parse_config_text():
    text = """
    # a comment
    optimizer.lr = 0.001
    batch_size = 8   # trailing comment
    grounding = concat
    """
    assert parse_config_text(text) == {
        "optimizer.lr": "0.001", "batch_size": "8", "grounding": "concat",
    }


def test_parse_config_errors():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("a = 1\nb =")


def test_apply_overrides_types():
    config = apply_overrides(RunConfig(), {
        "optimizer.lr": "0.01",
        "batch_size": "4",
        "ecls": "off",
        "synth.split_fractions": "0.5, 0.25, 0.125, 0.125",
        "synth.prob_normal": "0.3",
    })
    assert config.optimizer.lr == 0.01
    assert config.batch_size == 4
    assert config.ecls == "off"
    assert config.synth.split_fractions == (0.5, 0.25, 0.125, 0.125)
    assert config.synth.prob_normal == 0.3
    # the original is untouched
    assert RunConfig().batch_size == 16


def test_apply_overrides_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides(RunConfig(), {"optimizer.momentum": "0.9"})
    with pytest.raises(ConfigError, match="unknown config section"):
        apply_overrides(RunConfig(), {"nothere.lr": "0.1"})


def test_apply_overrides_revalidates():
    with pytest.raises(ConfigError, match="batch_size"):
        apply_overrides(RunConfig(), {"batch_size": "1"})
    with pytest.raises(ValueError, match="divisible"):
        apply_overrides(RunConfig(), {"encoder.hidden_dim": "30"})
    with pytest.raises(ConfigError, match="ecls"):
        apply_overrides(RunConfig(), {"ecls": "maybe"})


def test_load_run_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("optimizer.lr = 0.005\nepochs = 3\n")
    config = load_run_config(path, overrides={"epochs": "7"})
    assert config.optimizer.lr == 0.005
    assert config.epochs == 7  # overrides win over the file
    assert load_run_config(None).epochs == RunConfig().epochs


def test_config_dict_round_trip():
    config = small_run_config()
    config = dataclasses.replace(config, grounding="concat", ecls="off")
    back = config_from_dict(config_to_dict(config))
    assert back == config
    assert back.synth.split_fractions == config.synth.split_fractions


def test_model_config_carries_ablation_flags():
    config = dataclasses.replace(RunConfig(), grounding="none", ecls="off")
    mc = config.model_config(vocab_size=100)
    assert mc.grounding == "none"
    assert mc.use_entity_loss is False
    assert mc.encoder.vocab_size == 100


# -- checkpoints ---------------------------------------------------------


def test_checkpoint_round_trip_exact(tmp_path):
    config = small_run_config()
    model, vocab, records = small_model(config)
    rng = np.random.default_rng(123)
    rng.integers(1000, size=5)  # advance the state
    path = save_checkpoint(tmp_path / "ckpt", model, config, rng=rng, step=17)
    assert path.suffix == ".npz"

    restored, config2, meta = load_checkpoint(path)
    assert meta["step"] == 17
    assert config2 == config
    p1, p2 = model.parameters(), restored.parameters()
    assert set(p1) == set(p2)
    for name in p1:
        assert np.array_equal(p1[name].data, p2[name].data), name
    b1, b2 = model.buffers(), restored.buffers()
    assert set(b1) == set(b2)
    for name in b1:
        assert np.array_equal(b1[name].data, b2[name].data), name
    assert restored.vocab.id_to_word == vocab.id_to_word

    # forward pass after restore matches bit for bit
    batch = collate(records, vocab, model.config.encoder)
    out1 = model.forward_losses(batch, np.random.default_rng(0))
    out2 = restored.forward_losses(batch, np.random.default_rng(0))
    assert float(out1["total"].data) == float(out2["total"].data)

    # restored rng continues the saved stream
    resumed = rng_from_state(meta["rng_state"])
    reference = np.random.default_rng(123)
    reference.integers(1000, size=5)
    assert resumed.integers(10**6, size=8).tolist() == reference.integers(10**6, size=8).tolist()


def test_checkpoint_restores_snapshot_across_seeds(tmp_path):
    """The frozen prompt snapshot rides in the archive, so a restored model
    matches even when the rebuild seed would regenerate different weights."""
    config = small_run_config()
    model, vocab, records = small_model(config)
    mismatched = dataclasses.replace(config, seed=config.seed + 1)
    path = save_checkpoint(tmp_path / "ckpt", model, mismatched)
    restored, _, _ = load_checkpoint(path)
    batch = collate(records, vocab, model.config.encoder)
    out1 = model.forward_losses(batch, np.random.default_rng(0))
    out2 = restored.forward_losses(batch, np.random.default_rng(0))
    assert float(out1["total"].data) == float(out2["total"].data)


def test_checkpoint_suffix_tolerance(tmp_path):
    config = small_run_config()
    model, _, _ = small_model(config)
    save_checkpoint(tmp_path / "model", model, config)
    # loading without the .npz suffix still resolves
    restored, _, _ = load_checkpoint(tmp_path / "model")
    assert set(restored.parameters()) == set(model.parameters())


def test_checkpoint_truncated_file(tmp_path):
    path = tmp_path / "broken.npz"
    path.write_bytes(b"PK\x03\x04 not a real archive")
    with pytest.raises(CheckpointError, match="unreadable"):
        load_checkpoint(path)


def test_checkpoint_missing_meta(tmp_path):
    path = tmp_path / "bare.npz"
    np.savez(path, some_array=np.zeros(3))
    with pytest.raises(CheckpointError, match="metadata"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    import json

    config = small_run_config()
    model, _, _ = small_model(config)
    path = save_checkpoint(tmp_path / "v", model, config)
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files}
    meta = json.loads(str(arrays["__meta__"]))
    meta["version"] = 99
    arrays["__meta__"] = np.asarray(json.dumps(meta))
    np.savez(path, **arrays)
    with pytest.raises(CheckpointVersionError, match="99"):
        load_checkpoint(path)


def test_checkpoint_parameter_name_mismatch(tmp_path):
    config = small_run_config()
    model, _, _ = small_model(config)
    path = save_checkpoint(tmp_path / "names", model, config)
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files}
    victim = next(n for n in arrays if n.startswith("param::"))
    arrays["param::rogue"] = arrays.pop(victim)
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    config = small_run_config()
    model, _, _ = small_model(config)
    path = save_checkpoint(tmp_path / "shapes", model, config)
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files}
    victim = next(n for n in arrays if n.startswith("param::") and arrays[n].ndim == 2)
    arrays[victim] = arrays[victim][:, :-1]
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(path)


def test_rng_state_json_serializable():
    import json

    rng = np.random.default_rng(5)
    state = rng_state_to_json(rng)
    json.dumps(state)  # must be plain JSON types
    clone = rng_from_state(state)
    assert clone.integers(100, size=4).tolist() == np.random.default_rng(5).integers(100, size=4).tolist()
