import json
from dataclasses import replace

import pandas as pd
import pytest

from vugen import runs
from vugen.checkpoints import read_manifest
from vugen.cli import EXIT_PIPELINE_ERROR, main
from vugen.config import DataConfig, EvalConfig, ReducerConfig, RunConfig, SamplerConfig, SweepConfig
from vugen.errors import StageMismatchError, VugenError
from vugen.harness import SweepResult, run, training_hash
from vugen.runs import list_stage_manifests, manifest_table

from conftest import TINY_DECODER, TINY_ENCODER, TINY_GENERATOR


def _tiny_run(out_dir, stage="build-data") -> RunConfig:
    return RunConfig(
        stage=stage,
        out_dir=str(out_dir),
        device="cpu",
        data=DataConfig(n_train=64, n_val=24),
        encoder=TINY_ENCODER,
        reducer=ReducerConfig(variant="mlp", ratio=4),
        decoder=TINY_DECODER,
        generator=TINY_GENERATOR,
        sampler=SamplerConfig(steps=2, prompt="red circle at left", n_images=2),
        eval=EvalConfig(n_samples=24, curve_samples=24, k=3),
    )


def test_sweep_rows_are_sorted_and_written(tmp_path):
    rows = pd.DataFrame({"scale": [2.0, 0.0, 1.0], "efid": [3.0, 1.0, 2.0]})
    result = SweepResult(kind="cfg", axis="scale", rows=rows, config_hash="c", code_hash="k", checks={"ok": True})
    assert result.rows["scale"].tolist() == [0.0, 1.0, 2.0]
    outputs = result.write(tmp_path / "cfg")
    assert pd.read_csv(outputs["rows"])["efid"].tolist() == [1.0, 2.0, 3.0]
    summary = json.loads(outputs["summary"].read_text())
    assert summary["checks"] == {"ok": True}
    assert summary["config_hash"] == "c"


def test_cli_reports_unknown_config_keys(tmp_path, capsys):
    config_path = tmp_path / "bad.yaml"
    config_path.write_text("generator:\n  widht: 8\n")
    assert main(["build-data", "--config", str(config_path), "--out", str(tmp_path / "run")]) == EXIT_PIPELINE_ERROR
    assert "widht" in capsys.readouterr().err


def test_locked_run_directory_is_refused(tmp_path):
    (tmp_path / runs.LOCK_FILE).write_text("123")
    with pytest.raises(VugenError):
        run(_tiny_run(tmp_path))


def test_missing_upstream_stage_fails_cleanly(tmp_path):
    with pytest.raises(VugenError):
        run(_tiny_run(tmp_path, "train-decoder"))
    assert not (tmp_path / runs.LOCK_FILE).exists()


def test_encoder_checkpoint_is_deterministic(tmp_path):
    hashes = []
    for name in ("a", "b"):
        cfg = _tiny_run(tmp_path / name)
        run(cfg)
        run(replace(cfg, stage="pretrain-encoder"))
        hashes.append(read_manifest(tmp_path / name / runs.ENCODER)["content_hash"])
    assert hashes[0] == hashes[1]


def test_pipeline_end_to_end(tmp_path):
    cfg = _tiny_run(tmp_path)
    for stage in ("build-data", "pretrain-encoder", "train-decoder", "train-generator", "sample", "eval"):
        run(replace(cfg, stage=stage))

    samples = tmp_path / runs.SAMPLES_DIR / "vugen"
    assert (samples / "grid.png").exists()
    assert len(list(samples.glob("sample_*.png"))) == 2

    report = json.loads((tmp_path / runs.REPORTS_DIR / "vugen.json").read_text())
    assert report["n_fake"] == 24
    assert 0.0 <= report["coverage"] <= 100.0

    table = manifest_table(list_stage_manifests(tmp_path))
    assert {"build-data", "train-generator", "eval"} <= set(table["stage"])

    # sampler changes reuse the checkpoint, generator changes do not
    run(replace(cfg, stage="sample", sampler=replace(cfg.sampler, cfg_scale=3.0, seed=4)))
    changed = replace(cfg, stage="eval", generator=replace(cfg.generator, learning_rate=1e-3))
    assert training_hash(changed) != training_hash(cfg)
    with pytest.raises(StageMismatchError):
        run(changed)


def test_cfg_sweep_writes_curves_and_checks(tmp_path):
    cfg = _tiny_run(tmp_path)
    for stage in ("build-data", "pretrain-encoder", "train-decoder", "train-generator"):
        run(replace(cfg, stage=stage))
    run(replace(cfg, stage="sweep", sweep=SweepConfig(kind="cfg", scales=[1.0, 0.0])))

    out = tmp_path / runs.SWEEPS_DIR / "cfg"
    rows = pd.read_csv(out / "rows.csv")
    assert rows["cfg_scale"].tolist() == [0.0, 1.0]
    summary = json.loads((out / "summary.json").read_text())
    assert "alignment_nondecreasing_with_scale" in summary["checks"]
    assert summary["best_scale"]["efid"] in (0.0, 1.0)
    assert (out / "alignment_vs_efid.png").exists()
