"""
vugen/harness.py

Stage runner and experiment sweeps.

Each stage reads its upstream artifacts from the run directory, checks
their hashes, writes its own artifacts and a manifest. Sweeps train and
evaluate whole cells and emit CSV tables, static plots and a
``summary.json`` with the directional checks of each experiment:

- cfg: guidance scale vs eFID / alignment
- ratio: reduction ratio vs reconstruction and generation quality
- reducer: PCA vs jointly trained reducer over decoder training
- systems: VUGEN vs decoupled vs REPA baselines with training curves
- decoders: pixel decoder vs latent (VAE) decoder reconstructions
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import cv2
import matplotlib.pyplot as plt
import pandas as pd
from safetensors.torch import save_file

from vugen import runs
from vugen.baselines import (
    TinyVAE,
    VaeCodec,
    build_vae_corpus,
    load_vae,
    save_vae,
    train_decoupled,
    train_repa_variant,
    train_vae,
)
from vugen.checkpoints import checkpoint_exists, load_checkpoint, module_hash, read_manifest
from vugen.config import RunConfig, config_hash, config_to_dict, resolve_device, shared_config_hash
from vugen.decoder import (
    ReconstructionModel,
    load_reconstruction,
    reconstruct,
    save_reconstruction,
    train_ldm_decoder,
    train_pdd_decoder,
)
from vugen.encoder import encode_dataset, load_encoder, pretrain_encoder, save_encoder, UnderstandingEncoder
from vugen.errors import StageMismatchError, ValidationError, VugenError
from vugen.genmodel import (
    GenerationSystem,
    GeneratorTrainer,
    LoadedGenerator,
    TextTower,
    VugenCodec,
    build_vugen_corpus,
    load_generator,
    load_text_tower,
    pretrain_text_tower,
    save_generator,
    save_text_tower,
    train_generator,
)
from vugen.metrics import (
    AlignmentScorer,
    MetricReport,
    append_report,
    evaluate_system,
    extract_features,
    efid,
    load_scorer,
    save_scorer,
    train_alignment_scorer,
)
from vugen.plotting_utils import plot_image_grid, plot_metric_bar_chart, plot_metric_curves, plot_tradeoff, to_uint8
from vugen.reducer import ReducerSpec
from vugen.runs import RunDirectory, create_logger
from vugen.toydata import ShapesDataset, ensure_dataset

logger = logging.getLogger(__name__)

Outputs = Dict[str, Path]


# -----------------------------
# PIPELINE ARTIFACTS
# -----------------------------


class Pipeline:
    """Lazily loaded artifacts of one run directory."""

    def __init__(self, cfg: RunConfig, run_dir: RunDirectory) -> None:
        self.cfg = cfg
        self.run_dir = run_dir
        self.device = resolve_device(cfg.device)

    @property
    def seeds(self):
        return self.cfg.seeds

    @cached_property
    def datasets(self) -> Tuple[ShapesDataset, ShapesDataset]:
        return ensure_dataset(self.run_dir.path(runs.DATA_DIR), self.cfg.data.n_train, self.cfg.data.n_val, self.seeds.data)

    @property
    def train(self) -> ShapesDataset:
        return self.datasets[0]

    @property
    def val(self) -> ShapesDataset:
        return self.datasets[1]

    @cached_property
    def encoder(self) -> UnderstandingEncoder:
        return load_encoder(self.run_dir.path(runs.ENCODER), self.device)

    @cached_property
    def scorer(self) -> AlignmentScorer:
        return load_scorer(self.run_dir.path(runs.SCORER), self.encoder, self.device)

    @cached_property
    def text_tower(self) -> TextTower:
        """Loaded, or pretrained on captions the first time a generator needs it."""
        stem = self.run_dir.path(runs.TEXT_TOWER)
        if not checkpoint_exists(stem):
            logger.info("no text tower yet; pretraining one")
            result = pretrain_text_tower(self.train, self.cfg.generator, seed=self.seeds.init, device=self.device)
            save_text_tower(stem, result, self.cfg.generator)
        return load_text_tower(stem, self.device)

    @cached_property
    def vae(self) -> TinyVAE:
        """Loaded, or trained the first time a VAE-space model needs it."""
        stem = self.run_dir.path(runs.VAE)
        if not checkpoint_exists(stem):
            logger.info("no VAE yet; training one")
            result = train_vae(self.train, self.val, self.cfg.decoder, seed=self.seeds.init, device=self.device)
            save_vae(stem, result, self.cfg.decoder)
        return load_vae(stem, self.device)

    def reconstruction(self, stem: Optional[Path] = None) -> ReconstructionModel:
        stem = stem or self.run_dir.path(runs.RECONSTRUCTION)
        kind = read_manifest(stem)["metadata"]["kind"]
        model, _ = load_reconstruction(stem, self.encoder, self.device, vae=self.vae if kind == "ldm" else None)
        return model

    def codec(self, model: ReconstructionModel) -> VugenCodec:
        return VugenCodec(model, self.cfg.decoder.decode_steps, vae=self.vae if model.kind == "ldm" else None)

    def system(self, name: str) -> GenerationSystem:
        """A trained system (``vugen``, ``decoupled`` or ``repa``) ready to sample."""
        if name == "vugen":
            model = self.reconstruction()
            stem = self.run_dir.path(runs.GENERATOR)
            expected = {"encoder": self.encoder.param_hash, "reconstruction": module_hash(model)}
            codec = self.codec(model)
        else:
            stem = self.run_dir.path(runs.baseline_checkpoint(name))
            expected = {"vae": module_hash(self.vae)}
            codec = VaeCodec(self.vae, name)
        recorded = read_manifest(stem)["metadata"].get("training_hash")
        if recorded != training_hash(self.cfg):
            raise StageMismatchError(f"{name} generator was trained under a different config ({recorded})")
        loaded = load_generator(stem, self.text_tower, expected, self.device)
        return GenerationSystem(name, loaded, codec)

    def evaluate(
        self,
        system: GenerationSystem,
        cfg: Optional[RunConfig] = None,
        n_samples: Optional[int] = None,
        step: Optional[int] = None,
    ) -> MetricReport:
        cfg = cfg or self.cfg
        return evaluate_system(
            system,
            self.encoder,
            self.scorer,
            self.val,
            cfg.sampler,
            cfg.eval,
            shared_config_hash(cfg),
            n_samples=n_samples,
            step=step,
        )


def in_memory_system(name: str, trainer: GeneratorTrainer, codec) -> GenerationSystem:
    """Wrap a generator still being trained (raw and EMA weights)."""
    loaded = LoadedGenerator(
        generator=trainer.generator,
        ema_generator=trainer.ema_generator(),
        stats=trainer.corpus.stats,
        manifest={},
    )
    return GenerationSystem(name, loaded, codec)


def _save_figure(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# -----------------------------
# STAGES
# -----------------------------


def stage_build_data(p: Pipeline) -> Tuple[Outputs, Dict]:
    train, val = p.datasets
    root = p.run_dir.path(runs.DATA_DIR)
    return {f"{split}_manifest": root / split / "manifest.json" for split in ("train", "val")}, {
        "content_hashes": {"train": train.manifest.content_hash, "val": val.manifest.content_hash}
    }


def stage_pretrain_encoder(p: Pipeline) -> Tuple[Outputs, Dict]:
    cfg = p.cfg
    result = pretrain_encoder(p.train, p.val, cfg.encoder, seed=p.seeds.init, device=p.device)
    stem = p.run_dir.path(runs.ENCODER)
    enc_hash = save_encoder(stem, result, cfg.encoder)
    scorer = train_alignment_scorer(
        p.train,
        p.val,
        result.encoder,
        steps=cfg.encoder.scorer_steps,
        batch_size=cfg.encoder.batch_size,
        learning_rate=cfg.encoder.learning_rate,
        seed=p.seeds.init,
        device=p.device,
    )
    scorer_stem = p.run_dir.path(runs.SCORER)
    save_scorer(scorer_stem, scorer, enc_hash)
    outputs = {"encoder": stem.with_suffix(".safetensors"), "scorer": scorer_stem.with_suffix(".safetensors")}
    return outputs, {
        "encoder_hash": enc_hash,
        "probes": result.probes.as_dict(),
        "scorer": {"matched": scorer.matched_val_score, "shuffled": scorer.shuffled_val_score},
    }


def _train_reconstruction(p: Pipeline, cfg: RunConfig, kind: str, variant: str, ratio: int):
    if kind == "ldm":
        return train_ldm_decoder(
            p.vae, p.encoder, p.train, p.val, cfg.decoder, variant=variant, ratio=ratio, seed=p.seeds.train_order, device=p.device
        )
    return train_pdd_decoder(p.encoder, p.train, p.val, cfg.decoder, variant=variant, ratio=ratio, seed=p.seeds.train_order, device=p.device)


def stage_train_decoder(p: Pipeline) -> Tuple[Outputs, Dict]:
    cfg = p.cfg
    result = _train_reconstruction(p, cfg, cfg.decoder.kind, cfg.reducer.variant, cfg.reducer.ratio)
    stem = p.run_dir.path(runs.RECONSTRUCTION)
    vae_hash = module_hash(p.vae) if cfg.decoder.kind == "ldm" else None
    save_reconstruction(stem, result, p.encoder, cfg.decoder, vae_hash=vae_hash)
    return {"reconstruction": stem.with_suffix(".safetensors")}, {"final_val_mse": result.final_val_mse}


def training_hash(cfg: RunConfig) -> str:
    """Hash of the fields a generator checkpoint depends on (not sampler or eval settings)."""
    return config_hash({"generator": config_to_dict(cfg.generator), "seeds": config_to_dict(cfg.seeds), "data": config_to_dict(cfg.data)})


def _generator_extra(cfg: RunConfig) -> Dict:
    return {"shared_config_hash": shared_config_hash(cfg), "training_hash": training_hash(cfg)}


def _resume_state(stem: Path, cfg: RunConfig):
    """Trainer tensors + step of an unfinished checkpoint trained under ``cfg``."""
    if not checkpoint_exists(stem):
        return None
    meta = read_manifest(stem)["metadata"]
    if meta.get("training_hash") != training_hash(cfg) or meta.get("step", 0) >= cfg.generator.steps:
        return None
    tensors, manifest = load_checkpoint(stem)
    return tensors, manifest["metadata"]["step"]


def stage_train_generator(p: Pipeline) -> Tuple[Outputs, Dict]:
    cfg = p.cfg
    model = p.reconstruction()
    corpus = build_vugen_corpus(p.encoder, model, p.train)
    stem = p.run_dir.path(runs.GENERATOR)

    def checkpoint(trainer: GeneratorTrainer) -> None:
        save_generator(stem, trainer, cfg.generator, _generator_extra(cfg))

    result = train_generator(
        corpus,
        p.text_tower,
        cfg.generator,
        {"encoder": p.encoder.param_hash, "reconstruction": module_hash(model)},
        seed=p.seeds.train_order,
        device=p.device,
        callback=checkpoint,
        every=cfg.generator.checkpoint_every,
        resume=_resume_state(stem, cfg),
    )
    checkpoint(result.trainer)
    return {"generator": stem.with_suffix(".safetensors")}, {"steps": result.trainer.step}


def _train_baseline(p: Pipeline, cfg: RunConfig, variant: str, **train_kwargs):
    vae_hash = module_hash(p.vae)
    if variant == "repa":
        corpus = build_vae_corpus(p.vae, p.train, encoder=p.encoder)
        return train_repa_variant(
            corpus,
            p.text_tower,
            cfg.generator,
            replace(cfg.baseline, variant="repa"),
            vae_hash,
            p.encoder.param_hash,
            seed=p.seeds.train_order,
            device=p.device,
            **train_kwargs,
        )
    corpus = build_vae_corpus(p.vae, p.train)
    return train_decoupled(corpus, p.text_tower, cfg.generator, vae_hash, seed=p.seeds.train_order, device=p.device, **train_kwargs)


def stage_train_baseline(p: Pipeline) -> Tuple[Outputs, Dict]:
    cfg = p.cfg
    variant = cfg.baseline.variant
    stem = p.run_dir.path(runs.baseline_checkpoint(variant))

    def checkpoint(trainer: GeneratorTrainer) -> None:
        save_generator(stem, trainer, cfg.generator, _generator_extra(cfg) | {"variant": variant})

    result = _train_baseline(
        p, cfg, variant, callback=checkpoint, every=cfg.generator.checkpoint_every, resume=_resume_state(stem, cfg)
    )
    checkpoint(result.trainer)
    return {variant: stem.with_suffix(".safetensors")}, {"steps": result.trainer.step}


def stage_sample(p: Pipeline) -> Tuple[Outputs, Dict]:
    """Per-sample PNGs, a captioned grid and the sampled raw latents."""
    cfg = p.cfg
    system = p.system(cfg.eval.system)
    prompts = [cfg.sampler.prompt] * cfg.sampler.n_images
    batch = system.generate(prompts, cfg.sampler)
    out = p.run_dir.subdir(f"{runs.SAMPLES_DIR}/{system.name}")
    images = to_uint8(batch.images.permute(0, 2, 3, 1).numpy())
    outputs: Outputs = {}
    for i, img in enumerate(images):
        path = out / f"sample_{i:03d}.png"
        cv2.imwrite(str(path), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        outputs[path.name] = path
    latents_path = out / "latents.safetensors"
    save_file({"latents": batch.latents.contiguous()}, str(latents_path))
    outputs["latents"] = latents_path
    outputs["grid"] = _save_figure(plot_image_grid(batch.images.permute(0, 2, 3, 1).numpy(), prompts), out / "grid.png")
    return outputs, {"prompt": cfg.sampler.prompt, "n_images": len(prompts)}


def stage_eval(p: Pipeline) -> Tuple[Outputs, Dict]:
    report = p.evaluate(p.system(p.cfg.eval.system))
    reports = p.run_dir.subdir(runs.REPORTS_DIR)
    path = reports / f"{report.system}.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    append_report(reports / "metrics.jsonl", report)
    return {"report": path}, {"report": report.to_dict()}


# -----------------------------
# SWEEPS
# -----------------------------


@dataclass
class SweepResult:
    """
    One experiment: rows sorted by the axis value, optional extra tables
    (training curves), provenance hashes and the directional checks.
    """

    kind: str
    axis: str
    rows: pd.DataFrame
    config_hash: str
    code_hash: str
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    figures: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        sort_by = [self.axis] + [c for c in ("system", "reducer", "decoder") if c in self.rows.columns]
        self.rows = self.rows.sort_values(sort_by, kind="stable").reset_index(drop=True)

    def write(self, out_dir: Path) -> Outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs: Outputs = {}
        rows_path = out_dir / "rows.csv"
        self.rows.to_csv(rows_path, index=False)
        outputs["rows"] = rows_path
        for name, table in self.tables.items():
            path = out_dir / f"{name}.csv"
            table.to_csv(path, index=False)
            outputs[name] = path
        for name, fig in self.figures.items():
            outputs[f"{name}_plot"] = _save_figure(fig, out_dir / f"{name}.png")
        summary = {
            "kind": self.kind,
            "axis": self.axis,
            "config_hash": self.config_hash,
            "code_hash": self.code_hash,
            "checks": self.checks,
            **self.summary,
        }
        path = out_dir / "summary.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=str))
        outputs["summary"] = path
        return outputs


def _report_row(report: MetricReport, **axis) -> Dict:
    row = dict(axis)
    row.update(
        efid=report.efid,
        density=report.density,
        coverage=report.coverage,
        precision=report.precision,
        recall=report.recall,
        alignment=report.alignment,
        config_hash=report.config_hash,
    )
    return row


def run_cfg_sweep(p: Pipeline, scales: Optional[List[float]] = None) -> SweepResult:
    """
    Evaluate the trained VUGEN system at each guidance scale; records the
    best scale per metric and the three trade-off curves.

    Raises
    ------
    ValidationError
        If no scales are given.
    """
    scales = sorted(p.cfg.sweep.scales if scales is None else scales)
    if not scales:
        raise ValidationError("scales", "CFG sweep needs at least one scale")
    system = p.system("vugen")
    rows = []
    for scale in scales:
        cell = replace(p.cfg, sampler=replace(p.cfg.sampler, cfg_scale=float(scale)))
        report = p.evaluate(system, cfg=cell)
        row = _report_row(report, cfg_scale=float(scale))
        row["config_hash"] = config_hash(cell)
        rows.append(row)
    table = pd.DataFrame(rows)
    best = {
        "efid": float(table.loc[table["efid"].idxmin(), "cfg_scale"]),
        "alignment": float(table.loc[table["alignment"].idxmax(), "cfg_scale"]),
    }
    first, last = table.iloc[0], table.iloc[-1]
    checks = {"alignment_nondecreasing_with_scale": bool(last["alignment"] >= first["alignment"])}
    return SweepResult(
        kind="cfg",
        axis="cfg_scale",
        rows=table,
        config_hash=config_hash(p.cfg),
        code_hash=runs.code_snapshot_hash(),
        checks=checks,
        summary={"best_scale": best},
        figures={
            "alignment_vs_scale": plot_metric_curves(table, "cfg_scale", "alignment"),
            "efid_vs_scale": plot_metric_curves(table, "cfg_scale", "efid"),
            "alignment_vs_efid": plot_tradeoff(table),
        },
    )


def _scaled(cfg: RunConfig, fraction: float) -> RunConfig:
    return replace(
        cfg,
        decoder=replace(cfg.decoder, steps=max(1, int(cfg.decoder.steps * fraction))),
        generator=replace(cfg.generator, steps=max(1, int(cfg.generator.steps * fraction))),
    )


def run_ratio_ablation(p: Pipeline, ratios: Optional[List[int]] = None) -> SweepResult:
    """
    For each ratio: train reducer + decoder and a generator at the reduced
    budget, then record validation reconstruction MSE and generation eFID.
    """
    ratios = sorted(p.cfg.sweep.ratios if ratios is None else ratios)
    if not ratios:
        raise ValidationError("ratios", "ratio ablation needs at least one ratio")
    for r in ratios:
        ReducerSpec(p.encoder.embed_dim, r)
    cell_root = p.run_dir.subdir(f"{runs.SWEEPS_DIR}/ratio")
    rows = []
    for r in ratios:
        cell = _scaled(replace(p.cfg, reducer=replace(p.cfg.reducer, ratio=r)), p.cfg.sweep.budget_fraction)
        recon = _train_reconstruction(p, cell, cell.decoder.kind, cell.reducer.variant, r)
        save_reconstruction(cell_root / f"r{r}" / "reconstruction", recon, p.encoder, cell.decoder)
        model = recon.model
        corpus = build_vugen_corpus(p.encoder, model, p.train)
        result = train_generator(
            corpus,
            p.text_tower,
            cell.generator,
            {"encoder": p.encoder.param_hash, "reconstruction": module_hash(model)},
            seed=p.seeds.train_order,
            device=p.device,
        )
        system = in_memory_system("vugen", result.trainer, p.codec(model))
        report = p.evaluate(system, cfg=cell, n_samples=cell.eval.curve_samples)
        row = _report_row(report, ratio=r, recon_mse=recon.final_val_mse)
        row["config_hash"] = config_hash(cell)
        rows.append(row)
    table = pd.DataFrame(rows)
    mse = dict(zip(table["ratio"], table["recon_mse"]))
    fid = dict(zip(table["ratio"], table["efid"]))
    checks = {}
    coarse = [r for r in (2, 8, 32) if r in mse]
    if len(coarse) > 1:
        checks["recon_mse_nondecreasing_in_ratio"] = all(
            mse[b] >= 0.95 * mse[a] for a, b in zip(coarse, coarse[1:])
        )
    if 1 in fid and 16 in fid:
        checks["efid_r16_le_r1"] = bool(fid[16] <= fid[1])
    return SweepResult(
        kind="ratio",
        axis="ratio",
        rows=table,
        config_hash=config_hash(p.cfg),
        code_hash=runs.code_snapshot_hash(),
        checks=checks,
        figures={
            "recon_mse_vs_ratio": plot_metric_curves(table, "ratio", "recon_mse", log_x=True),
            "efid_vs_ratio": plot_metric_curves(table, "ratio", "efid", log_x=True),
        },
    )


def run_reducer_comparison(p: Pipeline) -> SweepResult:
    """Frozen PCA vs jointly trained MLP reducer at equal decoder budget."""
    cfg = p.cfg
    rows, finals = [], {}
    for variant in ("pca", "mlp"):
        result = _train_reconstruction(p, cfg, cfg.decoder.kind, variant, cfg.reducer.ratio)
        finals[variant] = result.final_val_mse
        rows += [
            {"reducer": variant, "step": h["step"] + 1, "val_mse": h["val_mse"]} for h in result.history if "val_mse" in h
        ]
    table = pd.DataFrame(rows, columns=["reducer", "step", "val_mse"])
    return SweepResult(
        kind="reducer",
        axis="step",
        rows=table,
        config_hash=config_hash(cfg),
        code_hash=runs.code_snapshot_hash(),
        checks={"joint_mse_le_0.9_pca": bool(finals["mlp"] <= 0.9 * finals["pca"])},
        summary={"final_val_mse": finals, "decoder": cfg.decoder.kind, "ratio": cfg.reducer.ratio},
        figures={"recon_mse_vs_step": plot_metric_curves(table, "step", "val_mse", group="reducer")},
    )


def run_system_comparison(p: Pipeline) -> SweepResult:
    """
    Train VUGEN, decoupled and REPA generators under one shared config,
    evaluating each every ``sweep.curve_every`` steps and at the end.

    Raises
    ------
    StageMismatchError
        If the systems would not share every compared config field.
    """
    cfg = p.cfg
    shared = {name: shared_config_hash(replace(cfg, eval=replace(cfg.eval, system=name))) for name in ("vugen", "decoupled", "repa")}
    if len(set(shared.values())) != 1:
        raise StageMismatchError(f"systems do not share their config: {shared}")

    model = p.reconstruction()
    curves: List[Dict] = []
    final: Dict[str, MetricReport] = {}

    def tracker(name: str, codec) -> Callable[[GeneratorTrainer], None]:
        def evaluate(trainer: GeneratorTrainer) -> None:
            report = p.evaluate(in_memory_system(name, trainer, codec), n_samples=cfg.eval.curve_samples, step=trainer.step)
            curves.append(_report_row(report, system=name, train_step=trainer.step))

        return evaluate

    every = cfg.sweep.curve_every
    vugen_codec = p.codec(model)
    vugen = train_generator(
        build_vugen_corpus(p.encoder, model, p.train),
        p.text_tower,
        cfg.generator,
        {"encoder": p.encoder.param_hash, "reconstruction": module_hash(model)},
        seed=p.seeds.train_order,
        device=p.device,
        callback=tracker("vugen", vugen_codec),
        every=every,
    )
    final["vugen"] = p.evaluate(in_memory_system("vugen", vugen.trainer, vugen_codec), step=vugen.trainer.step)
    for variant in ("decoupled", "repa"):
        codec = VaeCodec(p.vae, variant)
        result = _train_baseline(p, cfg, variant, callback=tracker(variant, codec), every=every)
        final[variant] = p.evaluate(in_memory_system(variant, result.trainer, codec), step=result.trainer.step)

    curve_table = pd.DataFrame(curves)
    table = pd.DataFrame([_report_row(r, system=name, train_step=r.step) for name, r in final.items()])
    checks = {
        "vugen_efid_le_decoupled": bool(final["vugen"].efid <= final["decoupled"].efid),
        "vugen_alignment_ge_decoupled": bool(final["vugen"].alignment >= final["decoupled"].alignment),
    }
    figures = {"final_efid": plot_metric_bar_chart({n: r.efid for n, r in final.items()}, "eFID")}
    if not curve_table.empty:
        first_step = curve_table["train_step"].min()
        first = curve_table[curve_table["train_step"] == first_step].set_index("system")["alignment"]
        checks["vugen_first_checkpoint_alignment_ge_decoupled"] = bool(first["vugen"] >= first["decoupled"])
        figures["efid_vs_step"] = plot_metric_curves(curve_table, "train_step", "efid", group="system")
        figures["alignment_vs_step"] = plot_metric_curves(curve_table, "train_step", "alignment", group="system")
    return SweepResult(
        kind="systems",
        axis="train_step",
        rows=table,
        config_hash=config_hash(cfg),
        code_hash=runs.code_snapshot_hash(),
        checks=checks,
        summary={"shared_config_hash": next(iter(shared.values()))},
        tables={"curves": curve_table},
        figures=figures,
    )


def run_decoder_comparison(p: Pipeline) -> SweepResult:
    """Pixel vs latent diffusion decoder at equal budget: MSE and eFID of val reconstructions."""
    cfg = p.cfg
    n = min(cfg.eval.curve_samples, len(p.val))
    val_images = p.val.images(range(n))
    val_latents = encode_dataset(p.encoder, val_images)
    real = extract_features(p.encoder, val_images, "real")
    rows = []
    for kind in ("pdd", "ldm"):
        result = _train_reconstruction(p, cfg, kind, cfg.reducer.variant, cfg.reducer.ratio)
        recon = reconstruct(result.model, val_latents, cfg.decoder.decode_steps, p.seeds.sampler, vae=p.vae if kind == "ldm" else None)
        rows.append(
            {
                "decoder": kind,
                "val_mse": float(((recon - val_images) ** 2).mean()),
                "recon_efid": efid(real, extract_features(p.encoder, recon, "generated")),
                "config_hash": config_hash(replace(cfg, decoder=replace(cfg.decoder, kind=kind))),
            }
        )
    table = pd.DataFrame(rows)
    fid = dict(zip(table["decoder"], table["recon_efid"]))
    ratio = max(fid.values()) / max(min(fid.values()), 1e-12)
    return SweepResult(
        kind="decoders",
        axis="decoder",
        rows=table,
        config_hash=config_hash(cfg),
        code_hash=runs.code_snapshot_hash(),
        checks={"recon_efid_within_2x": bool(ratio <= 2.0)},
        figures={"recon_efid": plot_metric_bar_chart(fid, "reconstruction eFID")},
    )


SWEEPS: Dict[str, Callable[[Pipeline], SweepResult]] = {
    "cfg": run_cfg_sweep,
    "ratio": run_ratio_ablation,
    "reducer": run_reducer_comparison,
    "systems": run_system_comparison,
    "decoders": run_decoder_comparison,
}


def stage_sweep(p: Pipeline) -> Tuple[Outputs, Dict]:
    kind = p.cfg.sweep.kind
    result = SWEEPS[kind](p)
    outputs = result.write(p.run_dir.subdir(f"{runs.SWEEPS_DIR}/{kind}"))
    failed = [name for name, ok in result.checks.items() if not ok]
    if failed:
        logger.warning("%s sweep: directional checks not met: %s", kind, failed)
    return outputs, {"checks": result.checks}


# -----------------------------
# ENTRY POINT
# -----------------------------


STAGE_FUNCTIONS: Dict[str, Callable[[Pipeline], Tuple[Outputs, Dict]]] = {
    "build-data": stage_build_data,
    "pretrain-encoder": stage_pretrain_encoder,
    "train-decoder": stage_train_decoder,
    "train-generator": stage_train_generator,
    "train-baseline": stage_train_baseline,
    "sample": stage_sample,
    "eval": stage_eval,
    "sweep": stage_sweep,
}


def run(cfg: RunConfig) -> Outputs:
    """
    Execute ``cfg.stage`` under the run directory lock and write its manifest.

    Raises
    ------
    VugenError
        Any pipeline failure (the CLI maps it to exit status 2).
    """
    if cfg.stage not in STAGE_FUNCTIONS:
        raise VugenError(f"unknown stage {cfg.stage!r}")
    run_dir = RunDirectory(cfg.out_dir)
    create_logger(run_dir.root)
    with run_dir.lock():
        start = time.perf_counter()
        logger.info("stage %s in %s (device %s)", cfg.stage, run_dir.root, resolve_device(cfg.device))
        outputs, extra = STAGE_FUNCTIONS[cfg.stage](Pipeline(cfg, run_dir))
        run_dir.write_manifest(cfg.stage, cfg, outputs, time.perf_counter() - start, extra)
    return outputs
