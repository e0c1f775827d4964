import copy

import numpy as np
import pytest
import torch

from tslm.backbone import BackboneConfig
from tslm.config import FusionConfig
from tslm.timeseries import PatchConfig

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**kw) -> FusionConfig:
    base = dict(
        backbone=BackboneConfig(d_model=16, depth=2, heads=2, max_context=512),
        patch=PatchConfig(patch_size=4, embed_dim=8, max_patches=256),
        enc_layers=1, enc_heads=2, proj_hidden=None, lora_rank=2, lora_alpha=4.0,
        n_latents=4, resampler_depth=1, resampler_heads=2, xattn_every=1,
    )
    base.update(kw)
    return FusionConfig(**base)


def fd_check(loss_fn, params, n_coords=6, eps=1e-6, rtol=1e-4, atol=1e-9, seed=0):
    """Compare autograd against central differences on a few coordinates of each tensor."""
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        gflat = g.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False):
            old = flat[idx].item()
            with torch.no_grad():
                flat[idx] = old + eps
                up = loss_fn().item()
                flat[idx] = old - eps
                down = loss_fn().item()
                flat[idx] = old
            num = (up - down) / (2 * eps)
            ana = gflat[idx].item()
            err = abs(num - ana) / max(abs(num), abs(ana), atol / rtol)
            assert err <= rtol or abs(num - ana) <= atol, (p.shape, int(idx), num, ana, err)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


__all__ = ["tiny_config", "fd_check", "copy", "ACCEPTANCE_LINES"]
