"""Soft-prompt fusion: encoded patches are projected into the LM embedding space
and spliced between text embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .backbone import EOS_ID, PAD_ID, TOKENIZER, Backbone, attach_adapters, decode_loop
from .config import FusionConfig
from .timeseries import PatchEmbeddingSequence, PatchEncoder, series_tensor

IGNORE = -100


@dataclass
class SoftPromptTokens:
    tokens: torch.Tensor  # (N, d_llm)


@dataclass
class InterleavedSequence:
    segments: list = field(default_factory=list)  # [(kind, tensor)], kind in {"text", "ts"}

    @property
    def total_length(self) -> int:
        return sum(t.shape[0] for _, t in self.segments)

    def embeddings(self) -> torch.Tensor:
        return torch.cat([t for _, t in self.segments], dim=0)

    def kinds(self) -> list[str]:
        return [k for k, _ in self.segments]


class SoftPromptEncoder(nn.Module):
    """TransformerEncoder over patch embeddings followed by an MLP into d_llm.

    ``layers=0`` bypasses the transformer and ``proj_hidden=0`` makes the
    projection a single linear map.
    """

    def __init__(self, d_enc: int, d_llm: int, layers: int = 2, heads: int = 4,
                 proj_hidden: int | None = None):
        super().__init__()
        self.d_enc = d_enc
        if layers > 0:
            layer = nn.TransformerEncoderLayer(d_enc, heads, dim_feedforward=4 * d_enc,
                                               dropout=0.0, activation="gelu",
                                               batch_first=True, norm_first=True)
            self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        else:
            self.encoder = nn.Identity()
        hidden = 2 * d_llm if proj_hidden is None else proj_hidden
        if hidden:
            self.proj = nn.Sequential(nn.Linear(d_enc, hidden), nn.GELU(), nn.Linear(hidden, d_llm))
        else:
            self.proj = nn.Linear(d_enc, d_llm)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[-1] != self.d_enc:
            raise ValueError(f"patch width {e.shape[-1]} != encoder width {self.d_enc}")
        return self.proj(self.encoder(e))


def encode_and_project(patches: PatchEmbeddingSequence, encoder: SoftPromptEncoder) -> SoftPromptTokens:
    return SoftPromptTokens(encoder(patches.embeddings.unsqueeze(0))[0])


def assemble_interleaved(prompt, token_sets, embedder) -> InterleavedSequence:
    """Lay out ``[pre, Z_1, desc_1, ..., Z_K, desc_K, post]``.

    ``embedder`` maps a string to a (len, d) tensor of token embeddings.
    """
    if len(token_sets) != len(prompt.chunks):
        raise ValueError(f"{len(prompt.chunks)} chunks but {len(token_sets)} token sets")
    seq = InterleavedSequence()
    seq.segments.append(("text", embedder(prompt.pre)))
    for chunk, z in zip(prompt.chunks, token_sets):
        seq.segments.append(("ts", z.tokens if isinstance(z, SoftPromptTokens) else z))
        seq.segments.append(("text", embedder(chunk.desc)))
    seq.segments.append(("text", embedder(prompt.post)))
    return seq


def softprompt_length(prompt, patch_size: int) -> int:
    """Analytic assembled length: len(pre) + sum(ceil(L/p) + len(desc)) + len(post)."""
    n = len(prompt.pre) + len(prompt.post)
    for c in prompt.chunks:
        n += -(-len(c.series) // patch_size) + len(c.desc)
    return n


def _embed_text(backbone: Backbone, text: str) -> torch.Tensor:
    dev = backbone.tok_emb.weight.device
    return backbone.embed(torch.tensor(TOKENIZER.encode(text), dtype=torch.long, device=dev))


class SoftPromptModel(nn.Module):
    variant = "softprompt"

    def __init__(self, cfg: FusionConfig | None = None, backbone: Backbone | None = None):
        super().__init__()
        self.cfg = cfg = cfg or FusionConfig()
        self.patch_encoder = PatchEncoder(cfg.patch)
        self.encoder = SoftPromptEncoder(cfg.patch.embed_dim, cfg.backbone.d_model,
                                         cfg.enc_layers, cfg.enc_heads, cfg.proj_hidden)
        self.backbone = attach_adapters(backbone or Backbone(cfg.backbone),
                                        cfg.lora_rank, cfg.lora_alpha)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        lora = [p for n, p in self.backbone.named_parameters() if n.endswith((".A", ".B"))]
        return {
            "encoder": list(self.patch_encoder.parameters()) + list(self.encoder.encoder.parameters()),
            "projector": list(self.encoder.proj.parameters()),
            "lora": lora,
        }

    def trainable_names(self) -> set[str]:
        ids = {id(p) for ps in self.param_groups().values() for p in ps}
        return {n for n, p in self.named_parameters() if id(p) in ids}

    def soft_tokens(self, series_list) -> list[torch.Tensor]:
        """Projected tokens for each series; equal-length series share one encoder call."""
        dtype = self.patch_encoder.pos.dtype
        dev = self.patch_encoder.pos.device
        out: list[torch.Tensor | None] = [None] * len(series_list)
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(series_list):
            by_len.setdefault(len(s), []).append(i)
        for idx in by_len.values():
            x = torch.stack([series_tensor(series_list[i], dtype, dev) for i in idx])
            z = self.encoder(self.patch_encoder(x))
            for j, i in enumerate(idx):
                out[i] = z[j]
        return out

    def assemble(self, prompt, tokens=None) -> InterleavedSequence:
        if tokens is None:
            tokens = self.soft_tokens([c.series for c in prompt.chunks])
        return assemble_interleaved(prompt, tokens, lambda s: _embed_text(self.backbone, s))

    def token_count(self, prompt) -> int:
        return softprompt_length(prompt, self.cfg.patch.patch_size)

    def build_batch(self, prompts, with_target: bool = True) -> dict:
        all_series = [c.series for p in prompts for c in p.chunks]
        flat = self.soft_tokens(all_series) if all_series else []
        seqs, labels = [], []
        k = 0
        for p in prompts:
            toks = flat[k:k + len(p.chunks)]
            k += len(p.chunks)
            emb = self.assemble(p, toks).embeddings()
            lab = [IGNORE] * emb.shape[0]
            if with_target:
                tgt = TOKENIZER.encode(p.target) + [EOS_ID]
                tgt_ids = torch.tensor(tgt, device=emb.device)
                emb = torch.cat([emb, self.backbone.embed(tgt_ids)])
                lab += tgt
            seqs.append(emb)
            labels.append(lab)
        return _pad_embeddings(seqs, labels)

    def forward(self, batch: dict) -> torch.Tensor:
        return self.backbone(inputs_embeds=batch["embeds"])

    @torch.no_grad()
    def generate(self, prompt, max_new_tokens: int = 64, mode: str = "greedy", **kw) -> str:
        was = self.training
        self.eval()
        prefix = self.assemble(prompt).embeddings()

        def step(new):
            if new:
                ids = torch.tensor(new, device=prefix.device)
                x = torch.cat([prefix, self.backbone.embed(ids)])
            else:
                x = prefix
            return self.backbone(inputs_embeds=x)[0, -1]

        try:
            return TOKENIZER.decode(decode_loop(step, max_new_tokens, mode, **kw))
        finally:
            self.train(was)


def _pad_embeddings(seqs, labels) -> dict:
    """Right-pad to a common length; causal attention makes trailing pads invisible."""
    t = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    embeds = seqs[0].new_zeros(len(seqs), t, d)
    lab = torch.full((len(seqs), t), IGNORE, dtype=torch.long, device=seqs[0].device)
    for i, (s, l) in enumerate(zip(seqs, labels)):
        embeds[i, :s.shape[0]] = s
        lab[i, :len(l)] = torch.tensor(l, dtype=torch.long)
    return {"embeds": embeds, "labels": lab, "lengths": [s.shape[0] for s in seqs]}


def shift_labels(labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Targets aligned with logits: position t predicts token t+1."""
    targets = torch.full_like(labels, IGNORE)
    targets[:, :-1] = labels[:, 1:]
    mask = targets != IGNORE
    return targets.clamp_min(PAD_ID), mask
