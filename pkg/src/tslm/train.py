"""Curriculum trainer: masked LM loss, AdamW with linear warmup/decay, gradient
clipping, best-by-validation checkpointing and early stopping."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import resource
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import EOS_ID, TOKENIZER, Backbone, load_checkpoint, save_checkpoint
from .config import FusionConfig
from .crossattn import FlamingoModel
from .softprompt import SoftPromptModel, shift_labels

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "split", "loss", "lr", "grad_norm", "peak_mem_bytes")

DEFAULT_LRS = {
    "softprompt": {"encoder": 2e-4, "lora": 2e-4, "projector": 1e-4},
    "flamingo": {"encoder": 2e-4, "cross_attention": 2e-4},
    "tokenized-baseline": {"lora": 2e-4},
}


class TrainingDivergedError(RuntimeError):
    pass


def lm_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of ``targets`` over positions where ``mask`` is set."""
    if not bool(mask.any()):
        raise ValueError("loss mask selects no positions")
    if logits.dtype in (torch.float16, torch.bfloat16):
        logits = logits.float()
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return nll[mask].mean()


def batch_loss(model, batch) -> tuple[torch.Tensor, int]:
    logits = model(batch)
    targets, mask = shift_labels(batch["labels"])
    return lm_loss(logits, targets, mask), int(mask.sum())


@dataclass
class OptimSettings:
    lrs: dict = field(default_factory=dict)  # param-group name -> learning rate
    warmup_frac: float = 0.1
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    max_epochs: int = 20
    patience: int = 5
    batch_size: int = 8
    grad_accum: int = 1

    def __post_init__(self):
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in (0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "OptimSettings":
        return cls(lrs=dict(DEFAULT_LRS[variant]), **kw)


@dataclass
class CurriculumStage:
    name: str
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    groups: tuple | None = None  # parameter groups to train; None means all of the variant's
    epochs: int | None = None  # overrides OptimSettings.max_epochs
    patience: int | None = None


def warmup_linear(step: int, total: int, warmup_frac: float = 0.1) -> float:
    """LR multiplier: 0 at step 0, 1 at ``round(warmup_frac * total)``, 0 at ``total``."""
    if total <= 0:
        return 0.0
    warm = max(1, round(warmup_frac * total))
    if step < warm:
        return step / warm
    return max(0.0, (total - step) / max(1, total - warm))


class EarlyStopping:
    """Counts epochs since the last strict improvement of the monitored loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.since_best = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss``; True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.since_best = loss, epoch, 0
        else:
            self.since_best += 1
        return self.since_best >= self.patience


def peak_memory_bytes(device=None) -> int:
    if device is not None and torch.device(device).type == "cuda":
        return int(torch.cuda.max_memory_allocated(device))
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(rss if sys.platform == "darwin" else rss * 1024)


@torch.no_grad()
def evaluate_loss(model, corpus, batch_size: int = 8) -> float:
    """Token-weighted mean NLL over ``corpus``."""
    was = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        for i in range(0, len(corpus), batch_size):
            loss, n = batch_loss(model, model.build_batch(corpus[i:i + batch_size]))
            total += float(loss) * n
            count += n
    finally:
        model.train(was)
    return total / max(count, 1)


def trainable_state(model) -> dict:
    names = model.trainable_names()
    return {k: v.detach().clone() for k, v in model.state_dict().items() if k in names}


@dataclass
class StageResult:
    name: str
    best_val: float
    best_epoch: int
    epochs_run: int
    steps: int
    stopped_early: bool
    history: list = field(default_factory=list)


def train_stage(model, stage: CurriculumStage, settings: OptimSettings, out_dir=None,
                seed: int = 0, device=None) -> StageResult:
    """Train the selected parameter groups and restore the best-by-validation weights.

    Writes ``<stage>_metrics.csv`` and ``<stage>_steps.jsonl`` into ``out_dir``.
    """
    epochs = settings.max_epochs if stage.epochs is None else stage.epochs
    patience = settings.patience if stage.patience is None else stage.patience
    groups = model.param_groups()
    selected = stage.groups or tuple(groups)
    for name in selected:
        if name not in groups:
            raise ValueError(f"stage {stage.name!r}: variant has no parameter group {name!r}")

    trainable = set()
    opt_groups = []
    for name in selected:
        params = groups[name]
        trainable.update(id(p) for p in params)
        opt_groups.append({"params": params, "lr": settings.lrs.get(name, 2e-4), "name": name})
    for p in model.parameters():
        p.requires_grad_(id(p) in trainable)

    val_loss = evaluate_loss(model, stage.val, settings.batch_size) if stage.val else math.nan
    history = [{"epoch": 0, "split": "val", "loss": val_loss, "lr": 0.0, "grad_norm": math.nan,
                "peak_mem_bytes": peak_memory_bytes(device)}]
    result = StageResult(stage.name, val_loss, 0, 0, 0, False, history)
    metrics_fh = steps_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / f"{stage.name}_metrics.csv", "w", newline="")
        steps_fh = open(out_dir / f"{stage.name}_steps.jsonl", "w")
        writer = csv.DictWriter(metrics_fh, fieldnames=METRICS_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerow(history[0])
    if epochs <= 0 or not stage.train:
        if metrics_fh:
            metrics_fh.close()
            steps_fh.close()
        return result

    per_epoch = math.ceil(len(stage.train) / (settings.batch_size * settings.grad_accum))
    total = per_epoch * epochs
    opt = torch.optim.AdamW(opt_groups, weight_decay=settings.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: warmup_linear(s, total, settings.warmup_frac))
    gen = torch.Generator().manual_seed(seed)
    stopper = EarlyStopping(patience)
    stopper.update(0, val_loss if not math.isnan(val_loss) else math.inf)
    best_state = trainable_state(model)
    step = 0
    params = [p for g in opt_groups for p in g["params"]]
    model.train()
    try:
        for epoch in range(1, epochs + 1):
            order = torch.randperm(len(stage.train), generator=gen).tolist()
            run_loss, run_tok, norms = 0.0, 0, []
            bs = settings.batch_size
            batches = [order[i:i + bs] for i in range(0, len(order), bs)]
            for k in range(0, len(batches), settings.grad_accum):
                group = batches[k:k + settings.grad_accum]
                lr_now = [g["lr"] for g in opt.param_groups]
                n_tok = 0
                losses = []
                for idx in group:
                    batch = model.build_batch([stage.train[i] for i in idx])
                    loss, n = batch_loss(model, batch)
                    if not torch.isfinite(loss):
                        raise TrainingDivergedError(
                            f"stage {stage.name!r}: non-finite loss at epoch {epoch}, step {step}")
                    (loss / len(group)).backward()
                    losses.append((loss.item(), n))
                    n_tok += n
                pre = float(nn.utils.clip_grad_norm_(params, settings.clip_norm))
                post = float(torch.norm(torch.stack(
                    [p.grad.detach().norm() for p in params if p.grad is not None])))
                if not math.isfinite(pre):
                    raise TrainingDivergedError(f"stage {stage.name!r}: non-finite gradient at step {step}")
                opt.step()
                opt.zero_grad(set_to_none=True)
                sched.step()
                norms.append(pre)
                for lv, n in losses:
                    run_loss += lv * n
                    run_tok += n
                if steps_fh:
                    steps_fh.write(json.dumps({
                        "step": step, "epoch": epoch, "lr": lr_now,
                        "loss": sum(lv for lv, _ in losses) / len(losses),
                        "grad_norm_pre": pre, "grad_norm_post": post}) + "\n")
                step += 1
            train_loss = run_loss / max(run_tok, 1)
            val_loss = evaluate_loss(model, stage.val, settings.batch_size) if stage.val else train_loss
            mem = peak_memory_bytes(device)
            lr_end = opt.param_groups[0]["lr"]
            rows = [
                {"epoch": epoch, "split": "train", "loss": train_loss, "lr": lr_end,
                 "grad_norm": sum(norms) / len(norms), "peak_mem_bytes": mem},
                {"epoch": epoch, "split": "val", "loss": val_loss, "lr": lr_end,
                 "grad_norm": math.nan, "peak_mem_bytes": mem},
            ]
            history.extend(rows)
            if metrics_fh:
                writer.writerows(rows)
                metrics_fh.flush()
            log.info("%s epoch %d: train %.4f val %.4f", stage.name, epoch, train_loss, val_loss)
            result.epochs_run = epoch
            stop = stopper.update(epoch, val_loss)
            if stopper.best_epoch == epoch:
                best_state = trainable_state(model)
            if stop:
                result.stopped_early = True
                break
    finally:
        if metrics_fh:
            metrics_fh.close()
            steps_fh.close()
    model.load_state_dict(best_state, strict=False)
    result.best_val, result.best_epoch, result.steps = stopper.best, stopper.best_epoch, step
    return result


def run_curriculum(model, stages, settings: OptimSettings, out_dir=None, seed: int = 0,
                   device=None) -> list[StageResult]:
    """Run ``stages`` in order; each starts from the previous stage's best weights."""
    results = []
    for i, stage in enumerate(stages):
        res = train_stage(model, stage, settings, out_dir, seed=seed + i, device=device)
        results.append(res)
        if out_dir is not None:
            save_model(Path(out_dir) / f"{stage.name}.ckpt", model, step=res.steps,
                       extra={"stage": stage.name, "best_val": res.best_val})
    return results


# --- parameter census ------------------------------------------------------

@dataclass
class Census:
    variant: str
    trainable: list = field(default_factory=list)  # (name, numel)
    frozen: list = field(default_factory=list)

    @property
    def n_trainable(self) -> int:
        return sum(n for _, n in self.trainable)

    @property
    def n_frozen(self) -> int:
        return sum(n for _, n in self.frozen)

    def to_text(self) -> str:
        lines = [f"variant: {self.variant}",
                 f"trainable: {self.n_trainable} in {len(self.trainable)} tensors",
                 f"frozen: {self.n_frozen} in {len(self.frozen)} tensors"]
        lines += [f"  T {name} {n}" for name, n in self.trainable]
        lines += [f"  F {name} {n}" for name, n in self.frozen]
        return "\n".join(lines)


def freeze_report(model) -> Census:
    """Partition every named parameter into trainable (member of the variant's Θ) or frozen."""
    names = model.trainable_names()
    census = Census(getattr(model, "variant", type(model).__name__))
    for name, p in model.named_parameters():
        (census.trainable if name in names else census.frozen).append((name, p.numel()))
    return census


def tensor_hashes(module: nn.Module, prefix: str = "") -> dict[str, str]:
    out = {}
    for name, t in module.state_dict().items():
        if name.startswith(prefix):
            data = t.detach().cpu().contiguous()
            out[name] = hashlib.sha256(data.numpy().tobytes()).hexdigest()
    return out


def backbone_hashes(model) -> dict[str, str]:
    """Hashes of the backbone's own weights, excluding inserted blocks and adapters."""
    return {k: v for k, v in tensor_hashes(model.backbone).items()
            if not k.startswith("xattn.") and not k.endswith((".A", ".B"))}


# --- backbone pretraining --------------------------------------------------

def pretrain_backbone(backbone: Backbone, texts, epochs: int = 2, lr: float = 1e-3,
                      batch_size: int = 16, seed: int = 0) -> list[float]:
    """Plain next-character training on ``texts``; returns the per-epoch mean loss.

    Gives the frozen backbone a language prior over the task vocabulary, the
    role a pretrained LLM plays in the full-scale setting.
    """
    gen = torch.Generator().manual_seed(seed)
    dev = backbone.lm_head.weight.device
    opt = torch.optim.AdamW(backbone.parameters(), lr=lr, weight_decay=0.01)
    seqs = [TOKENIZER.encode(t)[:backbone.cfg.max_context - 1] + [EOS_ID] for t in texts]
    total = epochs * math.ceil(len(seqs) / batch_size)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: warmup_linear(s, total))
    backbone.train()
    losses = []
    for _ in range(epochs):
        order = torch.randperm(len(seqs), generator=gen).tolist()
        acc = []
        for i in range(0, len(order), batch_size):
            rows = [seqs[j] for j in order[i:i + batch_size]]
            t = max(len(r) for r in rows)
            ids = torch.zeros(len(rows), t, dtype=torch.long, device=dev)
            mask = torch.zeros(len(rows), t, dtype=torch.bool, device=dev)
            for r, row in enumerate(rows):
                ids[r, :len(row)] = torch.tensor(row)
                mask[r, :len(row) - 1] = True
            targets = torch.zeros_like(ids)
            targets[:, :-1] = ids[:, 1:]
            loss = lm_loss(backbone(ids), targets, mask)
            loss.backward()
            nn.utils.clip_grad_norm_(backbone.parameters(), 1.0)
            opt.step()
            opt.zero_grad(set_to_none=True)
            sched.step()
            acc.append(loss.item())
        losses.append(sum(acc) / len(acc))
    backbone.eval()
    return losses


def corpus_text(prompt) -> str:
    """Text-only view of a prompt (series omitted) used for backbone pretraining."""
    return prompt.pre + "".join(c.desc for c in prompt.chunks) + prompt.post + prompt.target


# --- model construction and checkpoints ------------------------------------

def build_model(variant: str, cfg: FusionConfig | None = None, backbone: Backbone | None = None):
    cfg = cfg or FusionConfig()
    if variant == "softprompt":
        return SoftPromptModel(cfg, backbone)
    if variant == "flamingo":
        return FlamingoModel(cfg, backbone)
    if variant == "tokenized-baseline":
        from .eval.baselines import TokenizedBaseline
        return TokenizedBaseline(cfg, backbone)
    raise ValueError(f"unknown variant {variant!r}")


def save_model(path, model, step: int = 0, extra: dict | None = None) -> None:
    payload = {
        "variant": model.variant,
        "config": json.dumps(model.cfg.to_dict()),
        "state": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "step": int(step),
    }
    if extra:
        payload["extra"] = json.dumps(extra)
    save_checkpoint(path, payload)


def load_model(path):
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    from .backbone import CorruptCheckpointError

    payload = load_checkpoint(path)
    try:
        cfg = FusionConfig.from_dict(json.loads(payload["config"]))
        model = build_model(payload["variant"], cfg)
        model.load_state_dict(payload["state"])
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    model.eval()
    return model, payload


def settings_dict(settings: OptimSettings) -> dict:
    return asdict(settings)


def clone_backbone(backbone: Backbone) -> Backbone:
    return copy.deepcopy(backbone)
