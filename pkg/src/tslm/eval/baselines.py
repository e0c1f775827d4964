"""Text-only baseline: series rendered as spaced digits for a plain LM."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..backbone import EOS_ID, TOKENIZER, Backbone, attach_adapters, generate
from ..config import FusionConfig
from ..softprompt import IGNORE

SIG_DIGITS = 4


def series_scale_exponent(values) -> int:
    """k such that ``x * 10**k`` keeps 4 significant digits of the largest magnitude."""
    peak = float(np.max(np.abs(values))) if len(values) else 0.0
    if peak == 0.0:
        return 0
    return SIG_DIGITS - 1 - math.floor(math.log10(peak))


def _render(v: int) -> str:
    digits = " ".join(str(abs(v)))
    return f" -{digits}" if v < 0 else digits


def tokenize_series_as_text(series, k: int | None = None) -> str:
    """Scale to integers and spell each digit: ``1866, -762`` -> ``"1 8 6 6 , -7 6 2"``."""
    x = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if k is None:
        k = series_scale_exponent(x)
    ints = np.rint(x * 10.0 ** k).astype(np.int64)
    return " ,".join(_render(int(v)) for v in ints)


def detokenize_series(text: str) -> list[int]:
    if not text.strip():
        return []
    return [int(part.replace(" ", "")) for part in text.split(",")]


def baseline_text(prompt) -> str:
    parts = [prompt.pre]
    for c in prompt.chunks:
        parts.append(f"{c.desc}\n{tokenize_series_as_text(c.series)}\n")
    parts.append(prompt.post)
    return "".join(parts)


class TokenizedBaseline(nn.Module):
    """Frozen backbone reading digit-rendered series; LoRA factors are the only trainables.

    The adapters start as an exact identity, so an untrained instance is the
    zero-shot baseline and a trained one is the fine-tuned baseline.
    """

    variant = "tokenized-baseline"

    def __init__(self, cfg: FusionConfig | None = None, backbone: Backbone | None = None):
        super().__init__()
        self.cfg = cfg = cfg or FusionConfig()
        self.backbone = attach_adapters(backbone or Backbone(cfg.backbone),
                                        cfg.lora_rank, cfg.lora_alpha)

    def param_groups(self):
        return {"lora": [p for n, p in self.backbone.named_parameters() if n.endswith((".A", ".B"))]}

    def trainable_names(self) -> set[str]:
        ids = {id(p) for ps in self.param_groups().values() for p in ps}
        return {n for n, p in self.named_parameters() if id(p) in ids}

    def token_count(self, prompt) -> int:
        return len(baseline_text(prompt))

    def build_batch(self, prompts, with_target: bool = True) -> dict:
        rows, labels = [], []
        for p in prompts:
            ids = TOKENIZER.encode(baseline_text(p))
            lab = [IGNORE] * len(ids)
            if with_target:
                tgt = TOKENIZER.encode(p.target) + [EOS_ID]
                ids, lab = ids + tgt, lab + tgt
            rows.append(ids)
            labels.append(lab)
        t = max(len(r) for r in rows)
        dev = self.backbone.lm_head.weight.device
        ids_t = torch.zeros(len(rows), t, dtype=torch.long, device=dev)
        lab_t = torch.full((len(rows), t), IGNORE, dtype=torch.long, device=dev)
        for i, (r, l) in enumerate(zip(rows, labels)):
            ids_t[i, :len(r)] = torch.tensor(r)
            lab_t[i, :len(l)] = torch.tensor(l)
        return {"ids": ids_t, "labels": lab_t, "lengths": [len(r) for r in rows]}

    def forward(self, batch):
        return self.backbone(batch["ids"])

    @torch.no_grad()
    def generate(self, prompt, max_new_tokens: int = 64, mode: str = "greedy", **kw) -> str:
        return generate(self.backbone, baseline_text(prompt), max_new_tokens, mode, **kw)
