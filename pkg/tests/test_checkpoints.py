import json

import pytest
import torch

from vugen.checkpoints import (
    checkpoint_exists,
    load_checkpoint,
    read_manifest,
    require_hash,
    save_checkpoint,
    split_prefix,
    tensor_hash,
    with_prefix,
)
from vugen.errors import DependencyError, StageMismatchError


def test_hash_depends_on_names_and_values_only():
    a = {"w": torch.arange(4.0), "b": torch.zeros(2)}
    b = {"b": torch.zeros(2), "w": torch.arange(4.0)}
    assert tensor_hash(a) == tensor_hash(b)
    b["w"] = b["w"] + 1e-3
    assert tensor_hash(a) != tensor_hash(b)


def test_save_load_keeps_hash_and_metadata(tmp_path):
    stem = tmp_path / "ckpt" / "model"
    digest = save_checkpoint(stem, {"w": torch.ones(3)}, metadata={"step": 5})
    assert checkpoint_exists(stem)
    tensors, manifest = load_checkpoint(stem)
    assert manifest["content_hash"] == digest
    assert manifest["metadata"]["step"] == 5
    assert read_manifest(stem)["tensors"]["w"]["shape"] == [3]
    assert torch.equal(tensors["w"], torch.ones(3))


def test_tampered_manifest_is_refused(tmp_path):
    stem = tmp_path / "model"
    save_checkpoint(stem, {"w": torch.ones(3)})
    manifest = json.loads(stem.with_suffix(".json").read_text())
    manifest["content_hash"] = "0" * 64
    stem.with_suffix(".json").write_text(json.dumps(manifest))
    with pytest.raises(StageMismatchError):
        load_checkpoint(stem)


def test_missing_checkpoint_is_a_dependency_error(tmp_path):
    with pytest.raises(DependencyError):
        load_checkpoint(tmp_path / "nothing")
    with pytest.raises(DependencyError):
        read_manifest(tmp_path / "nothing")


def test_prefix_helpers():
    tensors = with_prefix({"a": torch.zeros(1)}, "model")
    tensors.update(with_prefix({"a": torch.ones(1)}, "ema"))
    assert set(tensors) == {"model.a", "ema.a"}
    assert torch.equal(split_prefix(tensors, "ema")["a"], torch.ones(1))


def test_require_hash():
    require_hash("encoder", "abc", "abc")
    with pytest.raises(StageMismatchError):
        require_hash("encoder", "abc", "abd")
