"""Peak-memory and token-count sweep over the simulation grid."""

from __future__ import annotations

import csv
import gc
import json
from dataclasses import asdict, dataclass

import torch
from torch.profiler import ProfilerActivity, profile

from ..backbone import BackboneConfig, ContextOverflowError
from ..config import FusionConfig
from ..data.synth import gen_simulation
from ..softprompt import shift_labels
from ..timeseries import PatchConfig
from ..train import lm_loss

GRID_L = (10, 100, 1000, 10000)
GRID_N = (1, 2, 3, 4, 5)
STATUSES = ("ok", "context_overflow", "oom")


@dataclass
class MemoryRecord:
    variant: str
    N: int
    L: int
    token_count: int
    kv_count: int
    peak_mem_bytes: int
    status: str
    backbone: str = ""


def profiling_config(d_model: int = 512, depth: int = 12, max_context: int = 4096) -> FusionConfig:
    """Configuration for the sweep: a wider backbone and a light encoder, so frozen
    weights dominate the footprint as they do for billion-parameter backbones."""
    return FusionConfig(
        backbone=BackboneConfig(d_model=d_model, depth=depth, heads=8, max_context=max_context),
        patch=PatchConfig(patch_size=4, embed_dim=32, max_patches=4096),
        enc_layers=1, enc_heads=2, resampler_depth=1, resampler_heads=2, n_latents=64,
    )


def _walk(nodes):
    stack = list(nodes)
    while stack:
        n = stack.pop()
        yield n
        stack.extend(n.children)


def cpu_peak_bytes(fn) -> int:
    """Peak bytes allocated above the starting point while ``fn`` runs (CPU allocator events)."""
    from torch._C._profiler import _EventType

    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = sorted(
        (n.start_time_ns, n.typed[1].alloc_size)
        for n in _walk(prof.profiler.kineto_results.experimental_event_tree())
        if n.typed[0] == _EventType.Allocation
    )
    cur = peak = 0
    for _, size in events:
        cur += size
        peak = max(peak, cur)
    return peak


def _model_bytes(model) -> int:
    return sum(t.numel() * t.element_size() for t in model.state_dict().values())


def _train_step(model, prompts):
    batch = model.build_batch(prompts)
    logits = model(batch)
    targets, mask = shift_labels(batch["labels"])
    lm_loss(logits, targets, mask).backward()


def profile_memory(variant: str, N: int, L: int, model, seed: int = 0, batch_size: int = 1,
                   backbone_label: str = "") -> MemoryRecord:
    """One forward+backward on simulation data; overflow and OOM become statuses."""
    prompts = gen_simulation(N, L, count=batch_size, seed=seed)
    tokens = max(model.token_count(p) for p in prompts)
    kv = len(prompts[0].chunks) * model.resampler.num_latents if hasattr(model, "resampler") else 0
    rec = MemoryRecord(variant, N, L, tokens, kv, 0, "ok", backbone_label)
    dev = next(model.parameters()).device
    model.train()
    model.zero_grad(set_to_none=True)
    gc.collect()
    try:
        if dev.type == "cuda":
            torch.cuda.empty_cache()
            torch.cuda.reset_peak_memory_stats(dev)
            _train_step(model, prompts)
            torch.cuda.synchronize(dev)
            rec.peak_mem_bytes = int(torch.cuda.max_memory_allocated(dev))
        else:
            rec.peak_mem_bytes = _model_bytes(model) + cpu_peak_bytes(lambda: _train_step(model, prompts))
    except ContextOverflowError:
        rec.status = "context_overflow"
    except (torch.cuda.OutOfMemoryError, MemoryError):
        rec.status = "oom"
    finally:
        model.zero_grad(set_to_none=True)
        gc.collect()
    return rec


def sweep(models: dict, Ls=GRID_L, Ns=GRID_N, seed: int = 0, backbone_label: str = "",
          on_record=None) -> list[MemoryRecord]:
    """``models`` maps variant name -> model; every (L, N) cell is profiled per variant."""
    out = []
    for L in Ls:
        for N in Ns:
            for variant, model in models.items():
                rec = profile_memory(variant, N, L, model, seed, backbone_label=backbone_label)
                out.append(rec)
                if on_record:
                    on_record(rec)
    return out


def _cell(rec: MemoryRecord) -> str:
    if rec.status == "ok":
        return f"{rec.peak_mem_bytes / 2**20:.2f}"
    return {"context_overflow": "CTX", "oom": "OOM"}[rec.status]


def grid_table(records) -> tuple[list[str], list[list[str]]]:
    """Rows L x N, columns variant x backbone; cells in MiB or a status code."""
    cols = list(dict.fromkeys(f"{r.variant}/{r.backbone}" if r.backbone else r.variant
                              for r in records))
    cells = {}
    for r in records:
        col = f"{r.variant}/{r.backbone}" if r.backbone else r.variant
        cells[(r.L, r.N, col)] = _cell(r)
    keys = list(dict.fromkeys((r.L, r.N) for r in records))
    rows = [[str(L), str(N)] + [cells.get((L, N, c), "") for c in cols] for L, N in keys]
    return ["L", "N"] + cols, rows


def write_grid_csv(path, records) -> None:
    header, rows = grid_table(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_records_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def plot_records(path, records) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant in dict.fromkeys(r.variant for r in records):
        pts = sorted((r.N * r.L, r.peak_mem_bytes / 2**20) for r in records
                     if r.variant == variant and r.status == "ok")
        if pts:
            ax.plot(*zip(*pts), marker="o", label=variant)
    ax.set_xscale("log")
    ax.set_xlabel("N x L")
    ax.set_ylabel("peak memory (MiB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
