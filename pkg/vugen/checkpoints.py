"""
vugen/checkpoints.py

Tensor checkpoints: a ``.safetensors`` container plus a JSON sidecar
manifest (shapes, dtypes, content hash, config echo, metadata).

The content hash is what every downstream stage records about its
upstream artifacts, so it must depend only on tensor names and values.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import torch
from safetensors.torch import load_file, save_file
from torch import nn

from vugen.config import config_to_dict
from vugen.errors import ArtifactIOError, DependencyError, StageMismatchError

logger = logging.getLogger(__name__)

Tensors = Dict[str, torch.Tensor]


def tensor_hash(tensors: Mapping[str, torch.Tensor]) -> str:
    """sha256 over name-sorted (name, dtype, shape, bytes)."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(t.dtype).encode("utf-8"))
        digest.update(str(tuple(t.shape)).encode("utf-8"))
        digest.update(t.reshape(-1).view(torch.uint8).numpy().tobytes() if t.numel() else b"")
    return digest.hexdigest()


def module_hash(module: nn.Module) -> str:
    return tensor_hash(module.state_dict())


def _paths(stem: Path | str) -> Tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".safetensors"), stem.with_suffix(".json")


def checkpoint_exists(stem: Path | str) -> bool:
    weights, manifest = _paths(stem)
    return weights.exists() and manifest.exists()


def save_checkpoint(
    stem: Path | str,
    tensors: Mapping[str, torch.Tensor],
    config: Any = None,
    metadata: Optional[Mapping[str, Any]] = None,
) -> str:
    """
    Write ``<stem>.safetensors`` and ``<stem>.json``.

    Returns
    -------
    str
        Content hash of the saved tensors.
    """
    weights_path, manifest_path = _paths(stem)
    # safetensors refuses shared storage, so every tensor gets its own copy
    flat = {k: v.detach().cpu().contiguous().clone() for k, v in tensors.items()}
    content_hash = tensor_hash(flat)
    manifest = {
        "content_hash": content_hash,
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in sorted(flat.items())},
        "config": config_to_dict(config),
        "metadata": dict(metadata or {}),
    }
    try:
        weights_path.parent.mkdir(parents=True, exist_ok=True)
        save_file(flat, str(weights_path))
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    except OSError as exc:
        raise ArtifactIOError(str(weights_path), f"checkpoint write failed: {exc}") from exc
    logger.info("saved checkpoint %s (%s)", weights_path.name, content_hash[:12])
    return content_hash


def load_checkpoint(stem: Path | str) -> Tuple[Tensors, Dict[str, Any]]:
    """
    Load tensors and manifest, verifying the recorded content hash.

    Raises
    ------
    DependencyError
        If the checkpoint does not exist.
    StageMismatchError
        If the tensors no longer hash to the recorded value.
    """
    weights_path, manifest_path = _paths(stem)
    if not checkpoint_exists(stem):
        raise DependencyError(f"missing checkpoint {weights_path}")
    tensors = load_file(str(weights_path))
    manifest = json.loads(manifest_path.read_text())
    actual = tensor_hash(tensors)
    if actual != manifest["content_hash"]:
        raise StageMismatchError(
            f"{weights_path}: content hash {actual[:12]} != recorded {manifest['content_hash'][:12]}"
        )
    return tensors, manifest


def split_prefix(tensors: Mapping[str, torch.Tensor], prefix: str) -> Tensors:
    """Sub-dict of ``tensors`` under ``prefix.`` with the prefix stripped."""
    start = prefix + "."
    return {k[len(start):]: v for k, v in tensors.items() if k.startswith(start)}


def with_prefix(tensors: Mapping[str, torch.Tensor], prefix: str) -> Tensors:
    return {f"{prefix}.{k}": v for k, v in tensors.items()}


def require_hash(name: str, expected: str, actual: str) -> None:
    """Raise ``StageMismatchError`` unless two recorded hashes agree."""
    if expected != actual:
        raise StageMismatchError(
            f"{name} hash mismatch: artifact was built against {expected[:12]}, found {actual[:12]}"
        )


def read_manifest(stem: Path | str) -> Dict[str, Any]:
    """JSON sidecar of a checkpoint without loading its tensors."""
    _, manifest_path = _paths(stem)
    if not manifest_path.exists():
        raise DependencyError(f"missing checkpoint manifest {manifest_path}")
    return json.loads(manifest_path.read_text())
