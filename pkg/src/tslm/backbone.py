"""Small decoder-only language model used as the frozen backbone.

Stands in for a pretrained LLM: character tokenizer, pre-LN transformer
blocks, optional gated cross-attention slots and low-rank adapters.
"""

from __future__ import annotations

import io
import math
import string
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

PAD_ID, EOS_ID, UNK_ID = 0, 1, 2
CHECKPOINT_MAGIC = b"TSLM1\n"


class ContextOverflowError(RuntimeError):
    def __init__(self, length: int, max_context: int):
        super().__init__(f"sequence of {length} tokens exceeds max_context={max_context}")
        self.length = length
        self.max_context = max_context


class CorruptCheckpointError(ValueError):
    pass


class CharTokenizer:
    """Fixed printable-ASCII alphabet; every character is one token."""

    alphabet = string.digits + string.ascii_letters + string.punctuation + " \n\t"

    def __init__(self):
        self._to_id = {c: i + 3 for i, c in enumerate(self.alphabet)}
        self._to_char = {i: c for c, i in self._to_id.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 3

    def encode(self, text: str) -> list[int]:
        return [self._to_id.get(c, UNK_ID) for c in text]

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            out.append(self._to_char.get(i, ""))
        return "".join(out)


TOKENIZER = CharTokenizer()


@dataclass
class BackboneConfig:
    vocab_size: int = TOKENIZER.vocab_size
    d_model: int = 128
    depth: int = 4
    heads: int = 4
    max_context: int = 2048
    mlp_mult: int = 4

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")


class LoRALinear(nn.Module):
    """``base(x) + scale * x @ A @ B`` with A: (in, r), B: (r, out); B starts at zero."""

    def __init__(self, base: nn.Linear, r: int = 8, alpha: float = 16.0):
        super().__init__()
        if r < 1:
            raise ValueError("adapter rank must be >= 1")
        self.base = base
        self.r = r
        self.scaling = alpha / r
        self.A = nn.Parameter(torch.empty(base.in_features, r, dtype=base.weight.dtype))
        self.B = nn.Parameter(torch.zeros(r, base.out_features, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.A, a=math.sqrt(5))
        for p in self.base.parameters():
            p.requires_grad_(False)

    def delta_weight(self) -> torch.Tensor:
        # (in, out); the effective torch weight is base.weight + delta_weight().T
        return self.A @ self.B * self.scaling

    def forward(self, x):
        return self.base(x) + (x @ self.A @ self.B) * self.scaling


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x):
        b, t, d = x.shape
        h = self.heads
        q, k, v = (m(x).view(b, t, h, d // h).transpose(1, 2) for m in (self.q, self.k, self.v))
        y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.o(y.transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg.d_model, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.mlp_mult * cfg.d_model),
            nn.GELU(),
            nn.Linear(cfg.mlp_mult * cfg.d_model, cfg.d_model),
        )

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or BackboneConfig()
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_context, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        # gated cross-attention blocks keyed by the index of the layer they precede
        self.xattn = nn.ModuleDict()
        self.apply(_init_weights)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_emb(ids)

    def forward(self, input_ids=None, inputs_embeds=None, cross=None):
        """Logits of shape (B, T, vocab).

        ``cross`` is ``(kv, mask)`` with kv: (B, M, d_model) and mask: (B, T, M)
        boolean, consumed by the gated cross-attention slots.
        """
        if inputs_embeds is None:
            if input_ids.ndim == 1:
                input_ids = input_ids.unsqueeze(0)
            inputs_embeds = self.embed(input_ids)
        elif inputs_embeds.ndim == 2:
            inputs_embeds = inputs_embeds.unsqueeze(0)
        t = inputs_embeds.shape[1]
        if t > self.cfg.max_context:
            raise ContextOverflowError(t, self.cfg.max_context)
        x = inputs_embeds + self.pos_emb.weight[:t]
        for i, block in enumerate(self.blocks):
            key = str(i)
            if cross is not None and key in self.xattn:
                x = self.xattn[key](x, *cross)
            x = block(x)
        return self.lm_head(self.ln_f(x))


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.Embedding):
        nn.init.normal_(m.weight, std=0.02)


def attach_adapters(backbone: Backbone, r: int = 8, alpha: float = 16.0,
                    targets=("q", "k", "v", "o")) -> Backbone:
    """Freeze every backbone weight and wrap attention projections with LoRA."""
    if r < 1:
        raise ValueError("adapter rank must be >= 1")
    for p in backbone.parameters():
        p.requires_grad_(False)
    for block in backbone.blocks:
        for name in targets:
            layer = getattr(block.attn, name)
            if not isinstance(layer, LoRALinear):
                setattr(block.attn, name, LoRALinear(layer, r=r, alpha=alpha))
    return backbone


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


@torch.no_grad()
def decode_loop(next_logits, max_new_tokens: int, mode: str = "greedy",
                temperature: float = 1.0, generator: torch.Generator | None = None) -> list[int]:
    """Generic autoregressive loop; ``next_logits(ids)`` returns logits for the next token.

    Stops on EOS, on the token budget, or when the context is full.
    """
    if mode not in ("greedy", "sampled"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    out: list[int] = []
    for _ in range(max_new_tokens):
        try:
            logits = next_logits(out)
        except ContextOverflowError:
            break
        logits = logits.float()
        logits[PAD_ID] = -math.inf
        if mode == "greedy":
            nxt = int(torch.argmax(logits))
        else:
            probs = torch.softmax(logits / temperature, dim=-1)
            nxt = int(torch.multinomial(probs, 1, generator=generator))
        if nxt == EOS_ID:
            break
        out.append(nxt)
    return out


def generate(backbone: Backbone, prompt: str, max_new_tokens: int = 64,
             mode: str = "greedy", **kw) -> str:
    """Plain-text generation with the bare backbone."""
    dev = backbone.lm_head.weight.device
    prefix = TOKENIZER.encode(prompt)

    def step(new):
        ids = torch.tensor(prefix + new, device=dev)
        return backbone(ids)[0, -1]

    was_training = backbone.training
    backbone.eval()
    try:
        return TOKENIZER.decode(decode_loop(step, max_new_tokens, mode, **kw))
    finally:
        backbone.train(was_training)


def save_checkpoint(path, payload: dict) -> None:
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(len(CHECKPOINT_MAGIC))
        if head != CHECKPOINT_MAGIC:
            raise CorruptCheckpointError(f"{path}: bad magic {head!r}")
        body = fh.read()
    try:
        return torch.load(io.BytesIO(body), map_location="cpu", weights_only=True)
    except Exception as exc:  # noqa: BLE001 - any unpickling failure means a corrupt file
        raise CorruptCheckpointError(f"{path}: {exc}") from exc


def config_dict(cfg) -> dict:
    return asdict(cfg)
