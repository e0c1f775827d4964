"""Model configuration shared by both fusion variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .backbone import BackboneConfig
from .timeseries import PatchConfig


@dataclass
class FusionConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    enc_layers: int = 2
    enc_heads: int = 4
    proj_hidden: int | None = None
    lora_rank: int = 8
    lora_alpha: float = 16.0
    n_latents: int = 64
    resampler_depth: int = 2
    resampler_heads: int = 4
    xattn_every: int = 2
    d_k: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        backbone = BackboneConfig(**d.pop("backbone", {}))
        patch = PatchConfig(**d.pop("patch", {}))
        return cls(backbone=backbone, patch=patch, **d)
