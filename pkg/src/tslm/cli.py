"""Command-line entry point: gen-data, train, eval, profile-memory.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 corrupt artifact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import click
import torch
import yaml

from . import __version__
from .backbone import Backbone, CorruptCheckpointError, load_checkpoint
from .config import FusionConfig
from .data.corpus import by_split, file_sha256, make_splits, read_jsonl, split_report, split_stats, write_jsonl
from .data.synth import GENERATORS, gen_simulation

EXIT_USAGE, EXIT_MISSING, EXIT_CORRUPT = 2, 3, 4
FAMILIES = ("trend", "har", "sleep", "ecg", "caption", "simulation")
VARIANTS = ("softprompt", "flamingo", "tokenized-baseline")

log = logging.getLogger("tslm")


def _fail(msg: str, code: int):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        _fail(f"missing input: {p}", EXIT_MISSING)
    return p


def _out_dir(out) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_manifest(out: Path, command: str, params: dict, inputs=(), outputs=(), extra=None):
    manifest = {
        "command": command,
        "params": params,
        "params_sha256": hashlib.sha256(_canonical(params).encode()).hexdigest(),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "tslm_version": __version__,
        "torch_version": torch.__version__,
        "python": platform.python_version(),
    }
    if extra:
        manifest.update(extra)
    path = out / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_config(path) -> dict:
    """YAML or JSON run configuration."""
    p = _require(path)
    try:
        cfg = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        _fail(f"cannot parse config {p}: {exc}", EXIT_USAGE)
    if not isinstance(cfg, dict):
        _fail(f"config {p} must be a mapping", EXIT_USAGE)
    return cfg


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Text and time-series fusion models at desk scale."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


out_option = click.option("--out", envvar="TSLM_OUT", default="runs", show_default=True,
                          type=click.Path(file_okay=False),
                          help="Output directory (env TSLM_OUT).")


@main.command("gen-data")
@click.argument("family", type=click.Choice(FAMILIES))
@click.option("--count", type=click.IntRange(min=1), default=None,
              help="Samples to generate (simulation default 200, others 1000).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--num-series", type=click.IntRange(min=1), default=1, show_default=True,
              help="Series per sample (simulation only).")
@click.option("--length", type=click.IntRange(min=1), default=100, show_default=True,
              help="Series length (simulation only).")
@out_option
def gen_data(family, count, seed, num_series, length, out):
    """Write a synthetic corpus as JSON lines plus a split-stats sidecar."""
    out = _out_dir(out)
    if family == "simulation":
        corpus = gen_simulation(num_series, length, count=count or 200, seed=seed)
        name = f"simulation_N{num_series}_L{length}"
    else:
        corpus = GENERATORS[family](count or 1000, seed=seed)
        name = family
    if len(corpus) >= 10:
        make_splits(corpus, seed)
    path = out / f"{name}.jsonl"
    write_jsonl(corpus, path)
    stats = out / f"{name}.stats.json"
    stats.write_text(json.dumps(split_stats(corpus), indent=2, sort_keys=True) + "\n")
    params = {"family": family, "count": len(corpus), "seed": seed}
    if family == "simulation":
        params.update(num_series=num_series, length=length)
    _write_manifest(out, f"gen-data-{name}", params, outputs=[path, stats])
    click.echo(f"wrote {len(corpus)} samples to {path}")
    if len(corpus) >= 10:
        click.echo(split_report(corpus))


def _corpus_split(path, split):
    corpus = read_jsonl(_require(path))
    if split:
        picked = by_split(corpus, split)
        return picked if picked else corpus if not any(p.split for p in corpus) else []
    return corpus


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="YAML/JSON run configuration.")
@click.option("--variant", type=click.Choice(VARIANTS), default=None, help="Overrides the config.")
@click.option("--seed", type=int, default=None, help="Overrides the config.")
@click.option("--epochs", type=click.IntRange(min=0), default=None,
              help="Overrides every stage's epoch budget.")
@out_option
def train(config_path, variant, seed, epochs, out):
    """Run the curriculum described by a config file."""
    from .train import (CurriculumStage, OptimSettings, build_model, corpus_text, freeze_report,
                        pretrain_backbone, run_curriculum)

    cfg = load_config(config_path)
    variant = variant or cfg.get("variant")
    if variant not in VARIANTS:
        _fail(f"variant must be one of {VARIANTS}, got {variant!r}", EXIT_USAGE)
    seed = cfg.get("seed", 0) if seed is None else seed
    stages_cfg = cfg.get("stages") or []
    if not stages_cfg:
        _fail("config lists no stages", EXIT_USAGE)
    data_paths = []
    stages = []
    for st in stages_cfg:
        paths = st.get("data") or []
        paths = [paths] if isinstance(paths, str) else paths
        for p in paths:
            data_paths.append(_require(p))
        tr = [s for p in paths for s in _corpus_split(p, "train")]
        va = [s for p in paths for s in _corpus_split(p, "val")]
        stages.append(CurriculumStage(st.get("name", f"stage{len(stages) + 1}"), tr, va,
                                      tuple(st["groups"]) if st.get("groups") else None,
                                      epochs if epochs is not None else st.get("epochs"),
                                      st.get("patience")))
    out = _out_dir(out)
    torch.manual_seed(seed)
    try:
        model_cfg = FusionConfig.from_dict(cfg.get("model") or {})
    except (TypeError, ValueError) as exc:
        _fail(f"invalid model config: {exc}", EXIT_USAGE)
    backbone = Backbone(model_cfg.backbone)
    pre = cfg.get("pretrain") or {}
    if pre.get("checkpoint"):
        try:
            backbone.load_state_dict(load_checkpoint(_require(pre["checkpoint"]))["state"])
        except (CorruptCheckpointError, KeyError, RuntimeError) as exc:
            _fail(f"corrupt backbone checkpoint: {exc}", EXIT_CORRUPT)
    elif pre.get("epochs", 0) > 0:
        texts = [corpus_text(s) for st in stages for s in st.train]
        losses = pretrain_backbone(backbone, texts, epochs=pre["epochs"], lr=pre.get("lr", 1e-3),
                                   seed=seed)
        log.info("backbone pretraining losses: %s", losses)
    model = build_model(variant, model_cfg, backbone)
    optim = cfg.get("optim") or {}
    try:
        settings = OptimSettings.for_variant(variant, **{k: v for k, v in optim.items() if k != "lrs"})
    except (TypeError, ValueError) as exc:
        _fail(f"invalid optim settings: {exc}", EXIT_USAGE)
    settings.lrs.update(optim.get("lrs") or {})
    census = freeze_report(model)
    (out / "freeze_report.txt").write_text(census.to_text() + "\n")
    results = run_curriculum(model, stages, settings, out, seed=seed)
    ckpts = [out / f"{s.name}.ckpt" for s in stages]
    summary = [{"stage": r.name, "best_val": r.best_val, "best_epoch": r.best_epoch,
                "epochs_run": r.epochs_run, "stopped_early": r.stopped_early} for r in results]
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    params = {"config": cfg, "variant": variant, "seed": seed, "epochs": epochs}
    _write_manifest(out, "train", params, inputs=sorted(set(data_paths)), outputs=ckpts,
                    extra={"final_val_loss": results[-1].best_val, "checkpoint": str(ckpts[-1]),
                           "trainable_params": census.n_trainable, "frozen_params": census.n_frozen})
    click.echo(f"trainable {census.n_trainable}, frozen {census.n_frozen}")
    for row in summary:
        click.echo(f"{row['stage']}: best val loss {row['best_val']:.4f} at epoch {row['best_epoch']}")
    click.echo(f"checkpoint: {ckpts[-1]}")


@main.command("eval")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--split", default="test", show_default=True,
              help="Split to score; empty string scores every sample.")
@click.option("--limit", type=click.IntRange(min=1), default=None)
@click.option("--max-new-tokens", type=click.IntRange(min=0), default=48, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
def eval_cmd(checkpoint, dataset, split, limit, max_new_tokens, seed, out):
    """Greedy-decode a corpus split and write scores and generations."""
    from .eval.harness import class_set_for, evaluate_corpus, write_generations
    from .eval.metrics import random_baseline, write_results_csv
    from .train import load_model

    ckpt, data = _require(checkpoint), _require(dataset)
    try:
        model, _ = load_model(ckpt)
    except CorruptCheckpointError as exc:
        _fail(str(exc), EXIT_CORRUPT)
    corpus = _corpus_split(data, split)[:limit]
    if not corpus:
        _fail(f"no samples in split {split!r} of {data}", EXIT_MISSING)
    torch.manual_seed(seed)
    classes = class_set_for(corpus)
    result, texts = evaluate_corpus(model, corpus, classes, max_new_tokens)
    dist = {c: sum(p.label == c for p in corpus) for c in classes}
    out = _out_dir(out)
    res_path, gen_path = out / "eval_results.csv", out / "eval_generations.jsonl"
    write_results_csv(res_path, {model.variant: result, "random": random_baseline(dist)})
    write_generations(gen_path, corpus, texts, classes)
    _write_manifest(out, "eval", {"split": split, "limit": limit, "max_new_tokens": max_new_tokens,
                                  "seed": seed}, inputs=[ckpt, data], outputs=[res_path, gen_path])
    click.echo(f"{model.variant}: macro-F1 {result.macro_f1:.2f} accuracy {result.accuracy:.2f} "
               f"invalid {result.invalid_output_count}/{result.n_samples}")


def _int_list(ctx, param, value):
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter("expected comma-separated integers")


@main.command("profile-memory")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML/JSON with a 'model' section; defaults to the profiling configuration.")
@click.option("--variants", default="softprompt,flamingo", show_default=True)
@click.option("--lengths", default="10,100,1000,10000", show_default=True, callback=_int_list)
@click.option("--num-series", default="1,2,3,4,5", show_default=True, callback=_int_list)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plot", is_flag=True, help="Also write a PNG of peak memory against N x L.")
@out_option
def profile_memory_cmd(config_path, variants, lengths, num_series, seed, plot, out):
    """Sweep peak memory and token counts over the simulation grid."""
    from .eval.profile import plot_records, profiling_config, sweep, write_grid_csv, write_records_jsonl
    from .train import build_model

    names = [v.strip() for v in variants.split(",") if v.strip()]
    bad = [v for v in names if v not in ("softprompt", "flamingo")]
    if bad:
        _fail(f"cannot profile variants {bad}", EXIT_USAGE)
    if config_path:
        model_cfg = FusionConfig.from_dict(load_config(config_path).get("model") or {})
    else:
        model_cfg = profiling_config()
    torch.manual_seed(seed)
    bb = model_cfg.backbone
    label = f"d{bb.d_model}x{bb.depth}"
    models = {v: build_model(v, model_cfg) for v in names}
    records = sweep(models, lengths, num_series, seed, label,
                    on_record=lambda r: click.echo(
                        f"{r.variant} N={r.N} L={r.L} tokens={r.token_count} kv={r.kv_count} "
                        f"{r.status} {r.peak_mem_bytes}"))
    out = _out_dir(out)
    jl, grid = out / "memory_records.jsonl", out / "memory_grid.csv"
    write_records_jsonl(jl, records)
    write_grid_csv(grid, records)
    outputs = [jl, grid]
    if plot:
        png = out / "memory.png"
        plot_records(png, records)
        outputs.append(png)
    _write_manifest(out, "profile-memory", {"model": model_cfg.to_dict(), "variants": names,
                                            "lengths": list(lengths), "num_series": list(num_series),
                                            "seed": seed}, outputs=outputs)
    click.echo(f"wrote {grid}")


if __name__ == "__main__":
    main()
