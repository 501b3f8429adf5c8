"""
vugen/runs.py

Run directory management: artifact paths, the single-writer lock file,
stage manifests, file / code hashes and logger setup.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional

import pandas as pd

from vugen.config import LOG_LEVEL_ENV_VAR, config_to_dict
from vugen.errors import ArtifactIOError, VugenError

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent

# Artifact names inside a run directory (checkpoint stems have no suffix).
DATA_DIR = "data"
ENCODER = "checkpoints/encoder"
SCORER = "checkpoints/scorer"
TEXT_TOWER = "checkpoints/text_tower"
RECONSTRUCTION = "checkpoints/reconstruction"
VAE = "checkpoints/vae"
GENERATOR = "checkpoints/generator"
SAMPLES_DIR = "samples"
REPORTS_DIR = "reports"
SWEEPS_DIR = "sweeps"
LOCK_FILE = ".lock"


def baseline_checkpoint(variant: str) -> str:
    return f"checkpoints/baseline_{variant}"


def create_logger(run_dir: Optional[Path] = None) -> logging.Logger:
    """
    Configure root logging to stdout and, when given, ``<run_dir>/log.txt``.
    """
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(run_dir / "log.txt"))
    logging.basicConfig(
        level=os.environ.get(LOG_LEVEL_ENV_VAR, "INFO").upper(),
        format="[%(asctime)s] %(levelname)s %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=handlers,
        force=True,
    )
    return logging.getLogger("vugen")


def file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def code_snapshot_hash() -> str:
    """Content hash of the package sources (git-style provenance)."""
    digest = hashlib.sha256()
    for path in sorted(PACKAGE_DIR.rglob("*.py")):
        digest.update(path.relative_to(PACKAGE_DIR).as_posix().encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


class RunDirectory:
    """A run's output directory and the artifacts inside it."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def subdir(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    @contextmanager
    def lock(self) -> Iterator[None]:
        """One stage at a time per run directory."""
        self.root.mkdir(parents=True, exist_ok=True)
        lock_path = self.root / LOCK_FILE
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise VugenError(f"run directory {self.root} is locked by another stage ({lock_path})") from exc
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            lock_path.unlink(missing_ok=True)

    def write_manifest(
        self,
        stage: str,
        config: Any,
        outputs: Mapping[str, Path],
        wall_time: float,
        extra: Optional[Mapping[str, Any]] = None,
    ) -> Path:
        """
        Record what a stage produced: config echo, seeds, wall time and the
        sha256 of every output file.
        """
        cfg = config_to_dict(config)
        manifest: Dict[str, Any] = {
            "stage": stage,
            "config": cfg,
            "seeds": cfg.get("seeds") if isinstance(cfg, dict) else None,
            "wall_time_seconds": round(wall_time, 3),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "code_hash": code_snapshot_hash(),
            "outputs": {name: file_hash(p) for name, p in sorted(outputs.items()) if p.is_file()},
        }
        if extra:
            manifest.update(extra)
        target = self.subdir("manifests") / f"{stage}.json"
        try:
            target.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
        except OSError as exc:
            raise ArtifactIOError(str(target), f"manifest write failed: {exc}") from exc
        logger.info("wrote manifest %s", target)
        return target


# -----------------------------
# READ-ONLY BROWSING
# -----------------------------


def list_stage_manifests(root: Path | str) -> Dict[str, Dict[str, Any]]:
    """Stage name -> parsed manifest for every stage that finished under ``root``."""
    manifest_dir = Path(root) / "manifests"
    if not manifest_dir.is_dir():
        return {}
    found = {}
    for path in sorted(manifest_dir.glob("*.json")):
        try:
            found[path.stem] = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("skipping unreadable manifest %s: %s", path, exc)
    return found


def manifest_table(manifests: Mapping[str, Mapping[str, Any]]) -> pd.DataFrame:
    """One row per stage: finish time, wall time and number of hashed outputs."""
    rows = [
        {
            "stage": stage,
            "finished_at": m.get("finished_at"),
            "wall_time_seconds": m.get("wall_time_seconds"),
            "outputs": len(m.get("outputs", {})),
            "code_hash": str(m.get("code_hash", ""))[:12],
        }
        for stage, m in manifests.items()
    ]
    return pd.DataFrame(rows, columns=["stage", "finished_at", "wall_time_seconds", "outputs", "code_hash"])
