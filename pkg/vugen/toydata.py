"""
vugen/toydata.py

Procedural shapes corpus: scene specs, an aliasing-free rasterizer,
templated captions over a closed vocabulary, and deterministic dataset
persistence.

A dataset split lives in ``<root>/<split>/`` as:
- ``images/<id>.png``: one lossless RGB image per item
- ``metadata.jsonl``: id, caption, layout, seed, patch color labels
- ``manifest.json``: split, n_items, seed, content hash, file paths
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch
from tqdm import tqdm

from vugen import config
from vugen.errors import ArtifactIOError, StageMismatchError, ValidationError
from vugen.seeding import derive_seed

logger = logging.getLogger(__name__)


# -----------------------------
# VOCABULARY
# -----------------------------

PAD, BOS, UNK, NULL = "<pad>", "<bos>", "<unk>", "<null>"
SPECIAL_TOKENS = (PAD, BOS, UNK, NULL)
WORDS = config.COLORS + config.SHAPES + config.POSITIONS + ("at", "and")
VOCAB: Tuple[str, ...] = SPECIAL_TOKENS + WORDS
VOCAB_SIZE = len(VOCAB)
TOKEN_ID: Dict[str, int] = {tok: i for i, tok in enumerate(VOCAB)}
PAD_ID, BOS_ID, UNK_ID, NULL_ID = (TOKEN_ID[t] for t in SPECIAL_TOKENS)

SPLIT_INDEX = {"train": 0, "val": 1}

#: Patch color classes: 0 is background, then one per color
N_PATCH_CLASSES = 1 + len(config.COLORS)

#: Multi-hot attribute layout: shapes present, then colors present
N_ATTRIBUTES = len(config.SHAPES) + len(config.COLORS)


def tokenize(text: str, length: int = config.TEXT_LEN) -> List[int]:
    """
    Map a caption to a fixed-length id sequence ``[BOS, w1, w2, ..., PAD...]``.

    Unknown words map to UNK; words beyond ``length - 1`` are dropped.
    """
    ids = [BOS_ID] + [TOKEN_ID.get(w, UNK_ID) for w in text.split()]
    ids = ids[:length]
    return ids + [PAD_ID] * (length - len(ids))


def detokenize(tokens: Sequence[int]) -> str:
    """Inverse of ``tokenize`` for in-vocabulary captions (BOS/PAD dropped)."""
    words = []
    for tok in tokens:
        tok = int(tok)
        if tok in (PAD_ID, BOS_ID):
            continue
        words.append(VOCAB[tok] if 0 <= tok < VOCAB_SIZE else UNK)
    return " ".join(words)


def null_tokens(length: int = config.TEXT_LEN) -> List[int]:
    """Prompt used for the unconditional (CFG) branch."""
    return [BOS_ID, NULL_ID] + [PAD_ID] * (length - 2)


def tokenize_batch(texts: Sequence[str]) -> torch.Tensor:
    return torch.tensor([tokenize(t) for t in texts], dtype=torch.long)


# -----------------------------
# SCENES
# -----------------------------


@dataclass(frozen=True)
class SceneSpec:
    n_objects: int
    shapes: Tuple[str, ...]
    colors: Tuple[str, ...]
    positions: Tuple[str, ...]
    background: str = "white"

    def validate(self) -> "SceneSpec":
        if not 1 <= self.n_objects <= config.MAX_OBJECTS:
            raise ValidationError("n_objects", f"must be in 1..{config.MAX_OBJECTS}, got {self.n_objects}")
        for name, values, allowed in (
            ("shapes", self.shapes, config.SHAPES),
            ("colors", self.colors, config.COLORS),
            ("positions", self.positions, config.POSITIONS),
        ):
            if len(values) != self.n_objects:
                raise ValidationError(name, f"expected {self.n_objects} entries, got {len(values)}")
            bad = [v for v in values if v not in allowed]
            if bad:
                raise ValidationError(name, f"unknown values {bad}")
        if len(set(self.positions)) != len(self.positions):
            raise ValidationError("positions", "two objects share a position")
        if self.background not in config.BACKGROUNDS:
            raise ValidationError("background", f"unknown background {self.background!r}")
        return self

    def objects(self) -> List[Tuple[str, str, str]]:
        """(color, shape, position) triples in canonical position order."""
        triples = list(zip(self.colors, self.shapes, self.positions))
        return sorted(triples, key=lambda o: config.POSITIONS.index(o[2]))


def sample_scene_spec(rng: np.random.Generator) -> SceneSpec:
    n = int(rng.integers(1, config.MAX_OBJECTS + 1))
    positions = rng.choice(len(config.POSITIONS), size=n, replace=False)
    return SceneSpec(
        n_objects=n,
        shapes=tuple(config.SHAPES[int(i)] for i in rng.integers(0, len(config.SHAPES), size=n)),
        colors=tuple(config.COLORS[int(i)] for i in rng.integers(0, len(config.COLORS), size=n)),
        positions=tuple(config.POSITIONS[int(i)] for i in positions),
        background=config.BACKGROUNDS[int(rng.integers(0, len(config.BACKGROUNDS)))],
    )


def caption_for(spec: SceneSpec) -> str:
    """``"<color> <shape> at <position>"`` per object, joined by ``and``."""
    return " and ".join(f"{c} {s} at {p}" for c, s, p in spec.objects())


def parse_caption(text: str) -> List[Tuple[str, str, str]]:
    """
    Parse a caption back into (color, shape, position) triples.

    Raises
    ------
    ValidationError
        If the text is not produced by the template grammar.
    """
    objects = []
    for chunk in text.split(" and "):
        words = chunk.split()
        if len(words) != 4 or words[2] != "at":
            raise ValidationError("caption", f"not a template phrase: {chunk!r}")
        color, shape, _, position = words
        if color not in config.COLORS or shape not in config.SHAPES or position not in config.POSITIONS:
            raise ValidationError("caption", f"out-of-grammar phrase: {chunk!r}")
        objects.append((color, shape, position))
    return objects


@dataclass
class RenderedScene:
    pixels: np.ndarray  # uint8, H x W x 3 RGB
    object_map: np.ndarray  # uint8, H x W; 0 background, i + 1 for layout[i]
    layout: List[Dict]
    caption: str

    @property
    def image(self) -> np.ndarray:
        """Float image in [-1, 1], H x W x 3."""
        return to_unit_range(self.pixels)


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / 127.5 - 1.0


def _draw(canvas: np.ndarray, shape: str, center: Tuple[int, int], size: int, value) -> None:
    cx, cy = center
    if shape == "circle":
        cv2.circle(canvas, (cx, cy), size, value, thickness=-1, lineType=cv2.LINE_8)
    elif shape == "square":
        cv2.rectangle(canvas, (cx - size, cy - size), (cx + size, cy + size), value, thickness=-1, lineType=cv2.LINE_8)
    else:
        pts = np.array([[cx, cy - size], [cx - size, cy + size], [cx + size, cy + size]], dtype=np.int32)
        cv2.fillConvexPoly(canvas, pts, value, lineType=cv2.LINE_8)


def render_scene(seed: int, spec: SceneSpec) -> RenderedScene:
    """
    Rasterize ``spec`` without anti-aliasing. ``seed`` only jitters object
    sizes, so the ground-truth layout stays decidable from the spec.
    """
    spec.validate()
    rng = np.random.default_rng(derive_seed(seed))
    side = config.IMAGE_SIZE
    pixels = np.empty((side, side, 3), dtype=np.uint8)
    pixels[:] = config.BACKGROUND_RGB[spec.background]
    object_map = np.zeros((side, side), dtype=np.uint8)
    layout = []
    for idx, (color, shape, position) in enumerate(spec.objects()):
        size = int(rng.choice(config.OBJECT_SIZES))
        center = config.POSITION_CENTERS[position]
        _draw(pixels, shape, center, size, config.COLOR_RGB[color])
        _draw(object_map, shape, center, size, idx + 1)
        layout.append({"shape": shape, "color": color, "position": position, "center": list(center), "size": size})
    return RenderedScene(pixels=pixels, object_map=object_map, layout=layout, caption=caption_for(spec))


def generate_scene(seed: int, spec: SceneSpec) -> Tuple[np.ndarray, "Prompt"]:
    """Image in [-1, 1] (H x W x 3) and its templated prompt."""
    scene = render_scene(seed, spec)
    return scene.image, Prompt.from_text(scene.caption)


@dataclass(frozen=True)
class Prompt:
    text: str
    token_ids: Tuple[int, ...]

    @classmethod
    def from_text(cls, text: str) -> "Prompt":
        return cls(text=text, token_ids=tuple(tokenize(text)))


def patch_color_labels(object_map: np.ndarray, layout: List[Dict], patch: int = config.PATCH_SIZE) -> np.ndarray:
    """
    Per-patch color class in raster order: the color of the object covering
    most of the patch if it covers at least PATCH_LABEL_MIN_COVERAGE, else 0.
    """
    side = object_map.shape[0]
    grid = side // patch
    labels = np.zeros(grid * grid, dtype=np.int64)
    min_pixels = config.PATCH_LABEL_MIN_COVERAGE * patch * patch
    for row in range(grid):
        for col in range(grid):
            block = object_map[row * patch:(row + 1) * patch, col * patch:(col + 1) * patch]
            counts = np.bincount(block.ravel(), minlength=len(layout) + 1)
            counts[0] = 0
            best = int(counts.argmax())
            if best > 0 and counts[best] >= min_pixels:
                labels[row * grid + col] = 1 + config.COLORS.index(layout[best - 1]["color"])
    return labels


def attribute_vector(layout: List[Dict]) -> np.ndarray:
    """Multi-hot [shape present..., color present...]."""
    vec = np.zeros(N_ATTRIBUTES, dtype=np.float32)
    for obj in layout:
        vec[config.SHAPES.index(obj["shape"])] = 1.0
        vec[len(config.SHAPES) + config.COLORS.index(obj["color"])] = 1.0
    return vec


# -----------------------------
# DATASETS
# -----------------------------


@dataclass
class DatasetManifest:
    split: str
    n_items: int
    seed: int
    content_hash: str
    root: str
    metadata_file: str = "metadata.jsonl"
    image_files: List[str] = field(default_factory=list)


@dataclass
class ShapesDataset:
    """In-memory view of one split."""

    pixels: np.ndarray  # uint8, n x H x W x 3
    captions: List[str]
    layouts: List[List[Dict]]
    patch_labels: np.ndarray  # int64, n x N_PATCHES
    seeds: List[int]
    manifest: Optional[DatasetManifest] = None

    def __len__(self) -> int:
        return len(self.captions)

    @property
    def tokens(self) -> torch.Tensor:
        return tokenize_batch(self.captions)

    @property
    def attributes(self) -> torch.Tensor:
        return torch.from_numpy(np.stack([attribute_vector(l) for l in self.layouts]))

    def images(self, indices: Optional[Sequence[int]] = None) -> torch.Tensor:
        """Float images in [-1, 1], n x 3 x H x W."""
        pix = self.pixels if indices is None else self.pixels[np.asarray(indices)]
        return torch.from_numpy(to_unit_range(pix)).permute(0, 3, 1, 2).contiguous()

    def subset(self, indices: Sequence[int]) -> "ShapesDataset":
        idx = np.asarray(indices)
        return ShapesDataset(
            pixels=self.pixels[idx],
            captions=[self.captions[i] for i in idx],
            layouts=[self.layouts[i] for i in idx],
            patch_labels=self.patch_labels[idx],
            seeds=[self.seeds[i] for i in idx],
            manifest=self.manifest,
        )


def item_seed(seed: int, split: str, index: int) -> int:
    """Per-item seed; train and val draw from disjoint streams."""
    return derive_seed(seed, SPLIT_INDEX[split], index)


def _metadata_line(item_id: str, scene: RenderedScene, seed: int, labels: np.ndarray) -> str:
    record = {
        "id": item_id,
        "caption": scene.caption,
        "layout": scene.layout,
        "seed": seed,
        "patch_labels": "".join(str(int(v)) for v in labels),
    }
    return json.dumps(record, sort_keys=True)


def _hash_items(pixels: Sequence[np.ndarray], lines: Sequence[str]) -> str:
    digest = hashlib.sha256()
    for pix, line in zip(pixels, lines):
        digest.update(np.ascontiguousarray(pix).tobytes())
        digest.update(line.encode("utf-8"))
    return digest.hexdigest()


def build_dataset(root: Path | str, n: int, split: str, seed: int) -> DatasetManifest:
    """
    Generate and persist ``n`` items of ``split``.

    Raises
    ------
    ValidationError
        If ``n <= 0`` or the split is unknown.
    ArtifactIOError
        If any file cannot be written.
    """
    if n <= 0:
        raise ValidationError("n", f"must be > 0, got {n}")
    if split not in SPLIT_INDEX:
        raise ValidationError("split", f"expected train or val, got {split!r}")

    split_dir = Path(root) / split
    image_dir = split_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(str(image_dir), f"cannot create directory: {exc}") from exc

    pixels, lines, files = [], [], []
    for i in tqdm(range(n), desc=f"build {split}", leave=False):
        s = item_seed(seed, split, i)
        spec = sample_scene_spec(np.random.default_rng(s))
        scene = render_scene(s, spec)
        labels = patch_color_labels(scene.object_map, scene.layout)
        item_id = f"{split}_{i:06d}"
        rel = f"images/{item_id}.png"
        # OpenCV writes BGR
        if not cv2.imwrite(str(split_dir / rel), cv2.cvtColor(scene.pixels, cv2.COLOR_RGB2BGR)):
            raise ArtifactIOError(str(split_dir / rel), "image write failed")
        pixels.append(scene.pixels)
        lines.append(_metadata_line(item_id, scene, s, labels))
        files.append(rel)

    manifest = DatasetManifest(
        split=split,
        n_items=n,
        seed=seed,
        content_hash=_hash_items(pixels, lines),
        root=str(split_dir.resolve()),
        image_files=files,
    )
    try:
        (split_dir / manifest.metadata_file).write_text("\n".join(lines) + "\n")
        (split_dir / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2))
    except OSError as exc:
        raise ArtifactIOError(str(split_dir), f"metadata write failed: {exc}") from exc
    logger.info("built %s split: %d items, hash %s", split, n, manifest.content_hash[:12])
    return manifest


def load_manifest(root: Path | str, split: str) -> DatasetManifest:
    path = Path(root) / split / "manifest.json"
    try:
        return DatasetManifest(**json.loads(path.read_text()))
    except OSError as exc:
        raise ArtifactIOError(str(path), f"cannot read dataset manifest: {exc}") from exc


def load_dataset(root: Path | str, split: str, verify: bool = True) -> ShapesDataset:
    """Read a persisted split back, optionally re-checking its content hash."""
    manifest = load_manifest(root, split)
    # files are relative to the manifest, not the recorded root
    split_dir = Path(root) / split
    lines = (split_dir / manifest.metadata_file).read_text().splitlines()
    pixels, captions, layouts, labels, seeds = [], [], [], [], []
    for rel, line in zip(manifest.image_files, lines):
        bgr = cv2.imread(str(split_dir / rel), cv2.IMREAD_COLOR)
        if bgr is None:
            raise ArtifactIOError(str(split_dir / rel), "image read failed")
        record = json.loads(line)
        pixels.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
        captions.append(record["caption"])
        layouts.append(record["layout"])
        labels.append([int(ch) for ch in record["patch_labels"]])
        seeds.append(record["seed"])
    if verify and _hash_items(pixels, lines) != manifest.content_hash:
        raise ArtifactIOError(str(split_dir), "content hash does not match manifest")
    return ShapesDataset(
        pixels=np.stack(pixels),
        captions=captions,
        layouts=layouts,
        patch_labels=np.asarray(labels, dtype=np.int64),
        seeds=seeds,
        manifest=manifest,
    )


def ensure_dataset(root: Path | str, n_train: int, n_val: int, seed: int) -> Tuple[ShapesDataset, ShapesDataset]:
    """
    Load both splits, building whichever is missing.

    Raises
    ------
    StageMismatchError
        If a split on disk was built with another size or seed.
    """
    root = Path(root)
    for split, n in (("train", n_train), ("val", n_val)):
        if not (root / split / "manifest.json").exists():
            build_dataset(root, n, split, seed)
            continue
        manifest = load_manifest(root, split)
        if (manifest.n_items, manifest.seed) != (n, seed):
            raise StageMismatchError(
                f"{split} split at {root / split} has n_items={manifest.n_items}, seed={manifest.seed}; "
                f"config asks for n_items={n}, seed={seed}"
            )
    return load_dataset(root, "train"), load_dataset(root, "val")
