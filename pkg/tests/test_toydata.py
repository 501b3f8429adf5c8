import numpy as np
import pytest

from vugen import config
from vugen.errors import StageMismatchError, ValidationError
from vugen.toydata import (
    BOS_ID,
    NULL_ID,
    PAD_ID,
    UNK_ID,
    SceneSpec,
    build_dataset,
    caption_for,
    detokenize,
    ensure_dataset,
    generate_scene,
    load_dataset,
    null_tokens,
    parse_caption,
    render_scene,
    tokenize,
)


def test_tokenize_pads_and_starts_with_bos():
    ids = tokenize("red circle at left")
    assert len(ids) == config.TEXT_LEN
    assert ids[0] == BOS_ID
    assert ids[5:] == [PAD_ID] * (config.TEXT_LEN - 5)
    assert detokenize(ids) == "red circle at left"


def test_unknown_words_map_to_unk():
    assert tokenize("purple circle")[1] == UNK_ID


def test_empty_caption_is_bos_then_padding():
    assert tokenize("") == [BOS_ID] + [PAD_ID] * (config.TEXT_LEN - 1)


def test_null_prompt_differs_from_every_caption():
    assert null_tokens()[:2] == [BOS_ID, NULL_ID]
    assert null_tokens() != tokenize("")


def test_caption_round_trips_through_parser():
    spec = SceneSpec(2, ("circle", "square"), ("red", "blue"), ("right", "left"))
    caption = caption_for(spec)
    assert caption == "blue square at left and red circle at right"
    assert parse_caption(caption) == [("blue", "square", "left"), ("red", "circle", "right")]


@pytest.mark.parametrize(
    "spec, field",
    [
        (SceneSpec(0, (), (), ()), "n_objects"),
        (SceneSpec(1, ("hexagon",), ("red",), ("left",)), "shapes"),
        (SceneSpec(2, ("circle", "square"), ("red", "blue"), ("left", "left")), "positions"),
    ],
)
def test_invalid_scene_specs_are_rejected(spec, field):
    with pytest.raises(ValidationError) as exc:
        spec.validate()
    assert exc.value.field == field


def test_out_of_grammar_caption_is_rejected():
    with pytest.raises(ValidationError):
        parse_caption("a red circle")


def test_render_is_deterministic_and_unaliased():
    spec = SceneSpec(1, ("circle",), ("red",), ("center",), background="black")
    a, b = render_scene(7, spec), render_scene(7, spec)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    # only background and object colors, no blended edge pixels
    colors = {tuple(c) for c in a.pixels.reshape(-1, 3)}
    assert colors == {config.BACKGROUND_RGB["black"], config.COLOR_RGB["red"]}


def test_generated_scene_prompt_names_its_object():
    spec = SceneSpec(1, ("circle",), ("red",), ("center",), background="white")
    image, prompt = generate_scene(7, spec)
    assert image.shape == (config.IMAGE_SIZE, config.IMAGE_SIZE, 3)
    assert image.min() >= -1.0 and image.max() <= 1.0
    assert prompt.text == "red circle at center"
    assert list(prompt.token_ids) == tokenize(prompt.text)
    assert UNK_ID not in prompt.token_ids


def test_dataset_rebuild_is_byte_identical(tmp_path):
    first = build_dataset(tmp_path / "a", 8, "train", seed=3)
    second = build_dataset(tmp_path / "b", 8, "train", seed=3)
    assert first.content_hash == second.content_hash


def test_splits_are_disjoint_streams(tmp_path):
    train = build_dataset(tmp_path, 8, "train", seed=3)
    val = build_dataset(tmp_path, 8, "val", seed=3)
    assert train.content_hash != val.content_hash


def test_loaded_split_exposes_tensors(shapes_data):
    train, _ = shapes_data
    images = train.images(range(4))
    assert images.shape == (4, 3, config.IMAGE_SIZE, config.IMAGE_SIZE)
    assert float(images.min()) >= -1.0 and float(images.max()) <= 1.0
    assert train.tokens.shape == (len(train), config.TEXT_LEN)
    assert train.patch_labels.shape == (len(train), config.N_PATCHES)


def test_build_rejects_empty_split(tmp_path):
    with pytest.raises(ValidationError):
        build_dataset(tmp_path, 0, "train", seed=0)


def test_load_verifies_hash(tmp_path):
    build_dataset(tmp_path, 4, "val", seed=0)
    assert len(load_dataset(tmp_path, "val")) == 4


@pytest.mark.parametrize("n_train, seed", [(16, 0), (8, 7)])
def test_existing_split_with_other_size_or_seed_is_refused(tmp_path, n_train, seed):
    ensure_dataset(tmp_path, n_train=8, n_val=4, seed=0)
    with pytest.raises(StageMismatchError):
        ensure_dataset(tmp_path, n_train=n_train, n_val=4, seed=seed)


def test_existing_splits_are_reused(tmp_path):
    first, _ = ensure_dataset(tmp_path, n_train=8, n_val=4, seed=0)
    again, _ = ensure_dataset(tmp_path, n_train=8, n_val=4, seed=0)
    assert again.manifest.content_hash == first.manifest.content_hash


def test_moved_dataset_still_loads(tmp_path):
    build_dataset(tmp_path / "old", 4, "val", seed=0)
    (tmp_path / "old").rename(tmp_path / "new")
    assert len(load_dataset(tmp_path / "new", "val")) == 4
