import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_check, tiny_config
from tslm.backbone import BackboneConfig
from tslm.data.corpus import Chunk, MultimodalPrompt
from tslm.softprompt import (IGNORE, SoftPromptEncoder, SoftPromptModel, SoftPromptTokens,
                             assemble_interleaved, encode_and_project, shift_labels,
                             softprompt_length)
from tslm.timeseries import PatchConfig, PatchEmbeddingSequence, TimeSeries, normalize
from tslm.train import freeze_report, lm_loss


def fake_embedder(d=3):
    return lambda s: torch.zeros(len(s), d)


def prompt_of(lengths, pre="pre..", descs=None, post="post", target="Answer: x"):
    descs = descs or ["d" * (i + 1) for i in range(len(lengths))]
    chunks = [Chunk(normalize(TimeSeries.from_raw(np.sin(np.arange(L) + i))), d)
              for i, (L, d) in enumerate(zip(lengths, descs))]
    return MultimodalPrompt(pre, chunks, post, target, "x")


def test_projection_shape():
    enc = SoftPromptEncoder(8, 64, layers=2, heads=4)
    z = encode_and_project(PatchEmbeddingSequence(torch.randn(16, 8)), enc)
    assert isinstance(z, SoftPromptTokens) and z.tokens.shape == (16, 64)


def test_zero_tail_gives_zero_tokens():
    enc = SoftPromptEncoder(8, 12, layers=1, heads=2)
    with torch.no_grad():
        last = enc.proj[-1]
        last.weight.zero_()
        last.bias.zero_()
    assert torch.count_nonzero(enc(torch.randn(1, 5, 8))) == 0


def test_identity_encoder_known_matrix():
    enc = SoftPromptEncoder(2, 2, layers=0, proj_hidden=0)
    M = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    with torch.no_grad():
        enc.proj.weight.copy_(M)
        enc.proj.bias.zero_()
    e = torch.tensor([[0.5, -1.5]])
    out = encode_and_project(PatchEmbeddingSequence(e), enc).tokens
    # loop oracle for y_i = sum_j M_ij e_j
    ref = [[sum(M[i, j].item() * e[0, j].item() for j in range(2)) for i in range(2)]]
    assert out.tolist() == ref == [[-2.5, -4.5]]


def test_width_mismatch_errors():
    enc = SoftPromptEncoder(8, 4, layers=1, heads=2)
    with pytest.raises(ValueError):
        enc(torch.randn(1, 3, 6))


def test_total_length_additivity():
    p = MultimodalPrompt("a" * 5, [Chunk(None, "b" * 3), Chunk(None, "c" * 4)], "d" * 7, "", "x")
    toks = [torch.zeros(16, 3), torch.zeros(16, 3)]
    seq = assemble_interleaved(p, toks, fake_embedder())
    assert seq.total_length == 5 + 16 + 3 + 16 + 4 + 7 == 51
    assert seq.kinds() == ["text", "ts", "text", "ts", "text", "text"]


def test_zero_chunks():
    p = MultimodalPrompt("hello", [], "bye", "", "x")
    seq = assemble_interleaved(p, [], fake_embedder())
    assert seq.kinds() == ["text", "text"] and seq.total_length == 8


def test_chunk_count_mismatch():
    p = MultimodalPrompt("a", [Chunk(None, "b")], "c", "", "x")
    with pytest.raises(ValueError):
        assemble_interleaved(p, [], fake_embedder())


def test_long_series_token_count():
    p = prompt_of([10000] * 5, descs=[""] * 5, pre="", post="")
    assert softprompt_length(p, 4) == 5 * 2500 == 12500


@settings(max_examples=12, deadline=None)
@given(st.lists(st.integers(1, 4096), min_size=0, max_size=8), st.text(max_size=20))
def test_token_count_law_matches_assembly(lengths, pre):
    cfg = tiny_config(backbone=BackboneConfig(d_model=8, depth=1, heads=2, max_context=16384),
                      patch=PatchConfig(patch_size=4, embed_dim=4, max_patches=1024),
                      enc_layers=0, proj_hidden=0)
    model = SoftPromptModel(cfg)
    p = prompt_of(lengths, pre=pre)
    with torch.no_grad():
        seq = model.assemble(p)
    expected = len(p.pre) + sum(math.ceil(L / 4) + len(c.desc) for L, c in zip(lengths, p.chunks)) + len(p.post)
    assert seq.total_length == seq.embeddings().shape[0] == expected == model.token_count(p)
    # order: ts block i sits between desc_{i-1} and desc_i
    kinds = seq.kinds()
    assert kinds == ["text"] + ["ts", "text"] * len(lengths) + ["text"]


def test_soft_tokens_positioned_between_descriptions():
    model = SoftPromptModel(tiny_config())
    p = prompt_of([8, 12])
    seq = model.assemble(p)
    emb = seq.embeddings()
    z = model.soft_tokens([c.series for c in p.chunks])
    start = len(p.pre)
    assert torch.equal(emb[start:start + 2], z[0])
    start += 2 + len(p.chunks[0].desc)
    assert torch.equal(emb[start:start + 3], z[1])


def test_batch_labels_mark_only_target():
    model = SoftPromptModel(tiny_config())
    p = prompt_of([8], target="Answer: up")
    b = model.build_batch([p, prompt_of([16, 4])])
    n_in = model.token_count(p)
    lab = b["labels"][0]
    assert (lab[:n_in] == IGNORE).all()
    assert lab[n_in:n_in + 11].tolist()[-1] == 1  # EOS closes the target
    targets, mask = shift_labels(b["labels"])
    assert int(mask[0].sum()) == len("Answer: up") + 1


def test_gradient_reaches_patch_encoder():
    torch.manual_seed(0)
    model = SoftPromptModel(tiny_config()).double()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith(".B"):
                p.normal_(0, 0.1)
    batch_prompts = [prompt_of([12], target="up")]

    def loss():
        b = model.build_batch(batch_prompts)
        t, m = shift_labels(b["labels"])
        return lm_loss(model(b), t, m)

    fd_check(loss, [model.patch_encoder.conv.weight, model.encoder.proj[0].weight])


def test_census_softprompt():
    model = SoftPromptModel(tiny_config())
    census = freeze_report(model)
    names = dict(census.trainable)
    assert all(n.startswith(("patch_encoder.", "encoder.")) or n.endswith((".A", ".B")) for n in names)
    assert any(n.endswith(".A") for n in names) and any(n.startswith("encoder.proj") for n in names)
    frozen = dict(census.frozen)
    assert all(n.startswith("backbone.") for n in frozen)
    assert "backbone.tok_emb.weight" in frozen
    assert census.n_trainable + census.n_frozen == sum(p.numel() for p in model.parameters())


def test_generation_returns_text():
    model = SoftPromptModel(tiny_config())
    out = model.generate(prompt_of([20]), max_new_tokens=5)
    assert isinstance(out, str) and len(out) <= 5
    assert model.generate(prompt_of([20]), max_new_tokens=0) == ""
