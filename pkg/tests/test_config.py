import pytest

from vugen.config import RunConfig, config_hash, load_run_config, shared_config_hash
from vugen.errors import ConfigError


def _write(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return str(path)


def test_missing_keys_take_defaults(tmp_path):
    cfg = load_run_config(_write(tmp_path, "stage: eval\n"))
    assert cfg == RunConfig(stage="eval")


def test_misspelled_key_is_rejected_with_its_path(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_run_config(_write(tmp_path, "generator:\n  learnig_rate: 0.1\n"))
    assert "learnig_rate" in str(exc.value)


def test_type_mismatch_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, "generator:\n  steps: many\n"))


def test_unknown_stage_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, "stage: finetune\n"))


def test_ratio_must_divide_embed_dim(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, "reducer:\n  ratio: 3\n"))


def test_overrides_apply_after_file(tmp_path):
    cfg = load_run_config(_write(tmp_path, "sampler:\n  cfg_scale: 1.0\n"), ["sampler.cfg_scale=4.0"])
    assert cfg.sampler.cfg_scale == 4.0


def test_config_hash_tracks_values():
    assert config_hash(RunConfig()) == config_hash(RunConfig())
    other = RunConfig()
    other.generator.steps += 1
    assert config_hash(other) != config_hash(RunConfig())


def test_shared_hash_ignores_the_evaluated_system_and_stage():
    a, b = RunConfig(stage="eval"), RunConfig(stage="sweep")
    b.eval.system = "decoupled"
    assert shared_config_hash(a) == shared_config_hash(b)
    b.generator.learning_rate = 1.0
    assert shared_config_hash(a) != shared_config_hash(b)
