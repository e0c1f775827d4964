"""Time-series container, scale-preserving normalization and the patch encoder."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

DESCRIPTION_TEMPLATE = "This is {label} data over {rate} with mean={mean:g} and std={std:g}."


@dataclass
class TimeSeries:
    """One univariate signal plus the statistics needed to describe it in text.

    ``mean`` and ``std`` always refer to the raw signal, also after
    :func:`normalize` has rescaled ``values``.
    """

    values: np.ndarray
    mean: float = 0.0
    std: float = 0.0
    sample_rate_text: str = ""
    label: str = "time series"
    normalized: bool = False
    constant: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def __len__(self):
        return self.values.shape[0]

    @classmethod
    def from_raw(cls, values, sample_rate_text="", label="time series") -> "TimeSeries":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        with np.errstate(invalid="ignore", over="ignore"):
            mean = float(values.mean()) if values.size else 0.0
            std = float(values.std()) if values.size else 0.0
        return cls(values, mean, std, sample_rate_text, label)

    @property
    def description(self) -> str:
        return describe(self)


def describe(series: TimeSeries) -> str:
    return DESCRIPTION_TEMPLATE.format(
        label=series.label, rate=series.sample_rate_text, mean=series.mean, std=series.std
    )


def normalize(series: TimeSeries) -> TimeSeries:
    """Min-max scale ``series`` into [-1, 1], recording the raw mean and population std.

    A constant series maps to zeros and is flagged via ``constant``.
    """
    if series.normalized:
        return series
    x = series.values
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    mean = float(x.mean()) if x.size else 0.0
    std = float(x.std()) if x.size else 0.0
    lo, hi = (float(x.min()), float(x.max())) if x.size else (0.0, 0.0)
    if hi - lo == 0.0:
        if x.size:
            log.warning("constant series (value %g); emitting zeros", lo)
        return replace(series, values=np.zeros_like(x), mean=mean, std=0.0,
                       normalized=True, constant=True)
    scaled = 2.0 * (x - lo) / (hi - lo) - 1.0
    np.clip(scaled, -1.0, 1.0, out=scaled)
    return replace(series, values=scaled, mean=mean, std=std, normalized=True)


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 4
    embed_dim: int = 128
    max_patches: int = 4096

    def __post_init__(self):
        if self.patch_size < 1 or self.embed_dim < 1 or self.max_patches < 1:
            raise ValueError(f"invalid patch config {self}")

    def num_patches(self, length: int) -> int:
        return math.ceil(length / self.patch_size)


@dataclass
class PatchEmbeddingSequence:
    embeddings: torch.Tensor  # (N, d_enc)
    num_patches: int = field(default=-1)

    def __post_init__(self):
        if self.num_patches < 0:
            self.num_patches = self.embeddings.shape[0]


class PatchEncoder(nn.Module):
    """Conv1d with kernel = stride = patch size, plus a learnable positional table."""

    def __init__(self, cfg: PatchConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = nn.Conv1d(1, cfg.embed_dim, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        self.pos = nn.Parameter(torch.randn(cfg.max_patches, cfg.embed_dim) * 0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, L) -> (B, ceil(L/p), d_enc); right-pads with zeros to a multiple of p
        if x.ndim == 1:
            x = x.unsqueeze(0)
        length = x.shape[-1]
        if length == 0:
            raise ValueError("empty series")
        p = self.cfg.patch_size
        pad = (-length) % p
        if pad:
            x = nn.functional.pad(x, (0, pad))
        n = x.shape[-1] // p
        if n > self.cfg.max_patches:
            raise ValueError(f"{n} patches exceed max_patches={self.cfg.max_patches}")
        e = self.conv(x.unsqueeze(1)).transpose(1, 2)
        return e + self.pos[:n]


def series_tensor(series: TimeSeries, dtype=None, device=None) -> torch.Tensor:
    if len(series) == 0:
        raise ValueError("empty series")
    if not np.all(np.isfinite(series.values)):
        raise ValueError("series contains non-finite values")
    return torch.as_tensor(series.values, dtype=dtype or torch.get_default_dtype(), device=device)


def patch_encode(series: TimeSeries, encoder: PatchEncoder) -> PatchEmbeddingSequence:
    p = encoder.pos
    x = series_tensor(series, dtype=p.dtype, device=p.device)
    return PatchEmbeddingSequence(encoder(x)[0])
