"""Cross-attention fusion: a Perceiver resampler compresses each series to a
fixed set of latents, which gated cross-attention blocks inside the frozen
backbone attend to."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import EOS_ID, TOKENIZER, Backbone, decode_loop, freeze
from .config import FusionConfig
from .softprompt import IGNORE
from .timeseries import PatchEmbeddingSequence, PatchEncoder, series_tensor

TS_TOKEN = "<TS>"
END_OF_CHUNK_TOKEN = "<endofchunk>"


@dataclass
class LatentSummary:
    latents: torch.Tensor  # (N_latent, d_time)
    source_chunk: int = 0


def FeedForward(dim, mult=4):
    return nn.Sequential(
        nn.LayerNorm(dim),
        nn.Linear(dim, dim * mult),
        nn.GELU(),
        nn.Linear(dim * mult, dim),
    )


class PerceiverAttention(nn.Module):
    """Latent queries attend over patch embeddings (keys/values from patches only)."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError("resampler width must be divisible by heads")
        self.heads = heads
        self.norm_x = nn.LayerNorm(dim)
        self.norm_latents = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim)
        self.to_kv = nn.Linear(dim, 2 * dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, latents):
        b, n, d = x.shape
        m, h = latents.shape[1], self.heads
        q = self.to_q(self.norm_latents(latents))
        k, v = self.to_kv(self.norm_x(x)).chunk(2, dim=-1)
        q = q.view(b, m, h, d // h).transpose(1, 2)
        k, v = (t.view(b, n, h, d // h).transpose(1, 2) for t in (k, v))
        out = F.scaled_dot_product_attention(q, k, v)
        return self.to_out(out.transpose(1, 2).reshape(b, m, d))


class PerceiverResampler(nn.Module):
    def __init__(self, dim: int, depth: int = 2, heads: int = 4, num_latents: int = 64):
        super().__init__()
        self.latents = nn.Parameter(torch.randn(num_latents, dim) * 0.02)
        self.layers = nn.ModuleList(
            nn.ModuleList([PerceiverAttention(dim, heads), FeedForward(dim)]) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim)

    @property
    def num_latents(self) -> int:
        return self.latents.shape[0]

    def forward(self, x):
        # x: (B, N, d) -> (B, num_latents, d)
        if x.shape[1] == 0:
            raise ValueError("cannot resample an empty patch sequence")
        lat = self.latents.expand(x.shape[0], -1, -1)
        for attn, ff in self.layers:
            lat = attn(x, lat) + lat
            lat = ff(lat) + lat
        return self.norm(lat)


def perceiver_resample(patches: PatchEmbeddingSequence, resampler: PerceiverResampler,
                       source_chunk: int = 0) -> LatentSummary:
    return LatentSummary(resampler(patches.embeddings.unsqueeze(0))[0], source_chunk)


class GatedCrossAttnBlock(nn.Module):
    """``x + tanh(gate) * softmax(Q K^T / sqrt(d_k)) V W_O`` with the gate starting at 0.

    Query rows whose mask row is all False receive no update.
    """

    def __init__(self, d_model: int, d_k: int | None = None, layer_index: int = 0):
        super().__init__()
        d_k = d_model if d_k is None else d_k
        if d_k <= 0:
            raise ValueError("d_k must be positive")
        self.d_k = d_k
        self.layer_index = layer_index
        self.norm = nn.LayerNorm(d_model)
        self.W_Q = nn.Linear(d_model, d_k, bias=False)
        self.W_K = nn.Linear(d_model, d_k, bias=False)
        self.W_V = nn.Linear(d_model, d_k, bias=False)
        self.W_O = nn.Linear(d_k, d_model, bias=False)
        self.gate = nn.Parameter(torch.zeros(()))
        for lin in (self.W_Q, self.W_K, self.W_V, self.W_O):
            nn.init.normal_(lin.weight, std=0.02)

    def attend(self, x, kv, mask=None):
        q = self.W_Q(self.norm(x))
        k, v = self.W_K(kv), self.W_V(kv)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_k)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
            has_any = mask.any(dim=-1, keepdim=True)
            scores = torch.where(has_any, scores, torch.zeros_like(scores))
            probs = torch.softmax(scores, dim=-1) * has_any
        else:
            probs = torch.softmax(scores, dim=-1)
        return self.W_O(probs @ v)

    def forward(self, x, kv, mask=None):
        return x + torch.tanh(self.gate) * self.attend(x, kv, mask)


def gated_cross_attend(x: torch.Tensor, latents, block: GatedCrossAttnBlock, mask=None) -> torch.Tensor:
    kv = latents.latents if isinstance(latents, LatentSummary) else latents
    squeeze = x.ndim == 2
    if squeeze:
        x, kv = x.unsqueeze(0), kv.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    y = block(x, kv, mask)
    return y[0] if squeeze else y


def insert_blocks_every_n(backbone: Backbone, n: int, d_k: int | None = None) -> Backbone:
    """Add a gated block before layers 0, n, 2n, ...; existing weights are untouched."""
    if n <= 0:
        raise ValueError("block spacing must be positive")
    depth = len(backbone.blocks)
    if depth < 1:
        raise ValueError("backbone has no layers")
    dev = backbone.lm_head.weight.device
    dtype = backbone.lm_head.weight.dtype
    for i in range(0, depth, n):
        backbone.xattn[str(i)] = GatedCrossAttnBlock(backbone.cfg.d_model, d_k, i).to(dev, dtype)
    return backbone


@dataclass(frozen=True)
class SpecialTokenMap:
    ts_token_id: int
    endofchunk_token_id: int

    @classmethod
    def extending(cls, base_vocab: int) -> "SpecialTokenMap":
        return cls(base_vocab, base_vocab + 1)


def condition_on_chunks(token_ids, num_chunks: int, special: SpecialTokenMap) -> list[int]:
    """Chunk index each position attends to; -1 means no time series yet.

    A position belongs to the most recent ``<TS>`` at or before it.
    """
    ids = [int(t) for t in token_ids]
    assign, current, seen = [], -1, 0
    for t in ids:
        if t == special.ts_token_id:
            current = seen
            seen += 1
        elif t == special.endofchunk_token_id and current < 0:
            raise ValueError("<endofchunk> before any <TS>")
        assign.append(current)
    if seen != num_chunks:
        raise ValueError(f"{seen} <TS> tokens but {num_chunks} latent chunks")
    return assign


def chunk_mask(assign: list[int], n_chunks: int, n_latents: int) -> torch.Tensor:
    """(T, n_chunks * n_latents) boolean mask scoping each position to its chunk's latents."""
    a = torch.tensor(assign, dtype=torch.long)
    key_chunk = torch.arange(n_chunks * n_latents) // n_latents
    return a[:, None] == key_chunk[None, :]


class FlamingoModel(nn.Module):
    variant = "flamingo"

    def __init__(self, cfg: FusionConfig | None = None, backbone: Backbone | None = None):
        super().__init__()
        self.cfg = cfg = cfg or FusionConfig()
        d_enc = cfg.patch.embed_dim
        self.patch_encoder = PatchEncoder(cfg.patch)
        self.resampler = PerceiverResampler(d_enc, cfg.resampler_depth, cfg.resampler_heads,
                                            cfg.n_latents)
        self.backbone = freeze(backbone or Backbone(cfg.backbone))
        # lifts latents from d_time to the backbone width before K/V projection
        self.latent_proj = nn.Linear(d_enc, cfg.backbone.d_model)
        self.special = SpecialTokenMap.extending(self.backbone.cfg.vocab_size)
        self.special_embed = nn.Parameter(torch.randn(2, cfg.backbone.d_model) * 0.02)
        insert_blocks_every_n(self.backbone, cfg.xattn_every, cfg.d_k)
        for p in self.backbone.xattn.parameters():
            p.requires_grad_(True)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "encoder": list(self.patch_encoder.parameters()) + list(self.resampler.parameters()),
            "cross_attention": list(self.backbone.xattn.parameters())
                               + list(self.latent_proj.parameters()) + [self.special_embed],
        }

    def trainable_names(self) -> set[str]:
        ids = {id(p) for ps in self.param_groups().values() for p in ps}
        return {n for n, p in self.named_parameters() if id(p) in ids}

    def text_ids(self, prompt) -> list[int]:
        ids = TOKENIZER.encode(prompt.pre)
        for c in prompt.chunks:
            ids.append(self.special.ts_token_id)
            ids += TOKENIZER.encode(c.desc)
            ids.append(self.special.endofchunk_token_id)
        return ids + TOKENIZER.encode(prompt.post)

    def token_count(self, prompt) -> int:
        return len(self.text_ids(prompt))

    def kv_count(self, prompt) -> int:
        return len(prompt.chunks) * self.resampler.num_latents

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        base = self.backbone.cfg.vocab_size
        is_special = ids >= base
        emb = self.backbone.embed(ids.masked_fill(is_special, 0))
        if is_special.any():
            spec = self.special_embed[(ids - base).clamp(0, 1)]
            emb = torch.where(is_special.unsqueeze(-1), spec, emb)
        return emb

    def latents(self, series_list) -> list[torch.Tensor]:
        dtype = self.patch_encoder.pos.dtype
        dev = self.patch_encoder.pos.device
        out: list[torch.Tensor | None] = [None] * len(series_list)
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(series_list):
            by_len.setdefault(len(s), []).append(i)
        for idx in by_len.values():
            x = torch.stack([series_tensor(series_list[i], dtype, dev) for i in idx])
            z = self.latent_proj(self.resampler(self.patch_encoder(x)))
            for j, i in enumerate(idx):
                out[i] = z[j]
        return out

    def build_batch(self, prompts, with_target: bool = True) -> dict:
        all_series = [c.series for p in prompts for c in p.chunks]
        flat = self.latents(all_series) if all_series else []
        n_lat = self.resampler.num_latents
        k_max = max(len(p.chunks) for p in prompts)
        rows, labels, assigns = [], [], []
        for p in prompts:
            ids = self.text_ids(p)
            lab = [IGNORE] * len(ids)
            if with_target:
                tgt = TOKENIZER.encode(p.target) + [EOS_ID]
                ids = ids + tgt
                lab = lab + tgt
            assigns.append(condition_on_chunks(ids, len(p.chunks), self.special))
            rows.append(ids)
            labels.append(lab)
        t = max(len(r) for r in rows)
        dev = self.special_embed.device
        ids_t = torch.zeros(len(rows), t, dtype=torch.long, device=dev)
        lab_t = torch.full((len(rows), t), IGNORE, dtype=torch.long, device=dev)
        for i, (r, l) in enumerate(zip(rows, labels)):
            ids_t[i, :len(r)] = torch.tensor(r)
            lab_t[i, :len(l)] = torch.tensor(l)
        batch = {"ids": ids_t, "labels": lab_t, "lengths": [len(r) for r in rows], "cross": None}
        if k_max:
            d = self.backbone.cfg.d_model
            kv = self.special_embed.new_zeros(len(prompts), k_max * n_lat, d)
            mask = torch.zeros(len(prompts), t, k_max * n_lat, dtype=torch.bool, device=dev)
            k = 0
            for i, p in enumerate(prompts):
                for j in range(len(p.chunks)):
                    kv[i, j * n_lat:(j + 1) * n_lat] = flat[k]
                    k += 1
                a = assigns[i] + [-1] * (t - len(assigns[i]))
                mask[i] = chunk_mask(a, k_max, n_lat)
            batch["cross"] = (kv, mask)
        return batch

    def forward(self, batch: dict) -> torch.Tensor:
        return self.backbone(inputs_embeds=self.embed_ids(batch["ids"]), cross=batch["cross"])

    @torch.no_grad()
    def generate(self, prompt, max_new_tokens: int = 64, mode: str = "greedy", **kw) -> str:
        was = self.training
        self.eval()
        prefix = self.text_ids(prompt)
        lat = self.latents([c.series for c in prompt.chunks]) if prompt.chunks else []
        kv = torch.cat(lat).unsqueeze(0) if lat else None

        def step(new):
            ids = prefix + new
            x = self.embed_ids(torch.tensor(ids, device=self.special_embed.device)).unsqueeze(0)
            cross = None
            if kv is not None:
                assign = condition_on_chunks(ids, len(lat), self.special)
                mask = chunk_mask(assign, len(lat), self.resampler.num_latents).to(kv.device)
                cross = (kv, mask.unsqueeze(0))
            return self.backbone(inputs_embeds=x, cross=cross)[0, -1]

        try:
            return TOKENIZER.decode(decode_loop(step, max_new_tokens, mode, **kw))
        finally:
            self.train(was)
