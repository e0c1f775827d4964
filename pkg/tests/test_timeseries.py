import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import fd_check
from tslm.timeseries import (PatchConfig, PatchEncoder, TimeSeries, describe, normalize,
                             patch_encode)


def test_description_embeds_raw_statistics():
    s = normalize(TimeSeries.from_raw([49.0, 73.0], "one minute", "heart rate"))
    assert s.mean == 61 and s.std == 12
    assert "mean=61" in s.description and "std=12" in s.description
    assert s.description == "This is heart rate data over one minute with mean=61 and std=12."


def test_zero_series_stays_zero():
    s = normalize(TimeSeries.from_raw(np.zeros(8)))
    assert np.array_equal(s.values, np.zeros(8))
    assert s.mean == 0 and s.std == 0 and s.constant


def test_constant_series_flagged_not_fatal():
    s = normalize(TimeSeries.from_raw(np.full(5, 3.5)))
    assert s.constant and s.std == 0 and s.mean == 3.5
    assert np.all(s.values == 0)
    assert "std=0" in s.description


def test_min_max_endpoints():
    raw = np.array([0.0, 10.0])
    s = normalize(TimeSeries.from_raw(raw))
    # brute-force recomputation of the same policy
    lo, hi = min(raw), max(raw)
    expected = [2 * (v - lo) / (hi - lo) - 1 for v in raw]
    assert list(s.values) == expected == [-1.0, 1.0]
    mean = sum(raw) / len(raw)
    std = math.sqrt(sum((v - mean) ** 2 for v in raw) / len(raw))
    assert (s.mean, s.std) == (mean, std) == (5.0, 5.0)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        normalize(TimeSeries.from_raw([1.0, float("nan")]))
    with pytest.raises(ValueError):
        normalize(TimeSeries.from_raw([1.0, float("inf")]))


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.integers(1, 200), elements=finite))
def test_normalize_range_and_statistics(x):
    s = normalize(TimeSeries.from_raw(x))
    assert np.all(s.values >= -1.0) and np.all(s.values <= 1.0)
    assert s.mean == pytest.approx(float(np.mean(x)), rel=1e-6, abs=1e-9)
    if not s.constant:
        assert s.std == pytest.approx(float(np.std(x)), rel=1e-6)


def test_normalize_idempotent():
    s = normalize(TimeSeries.from_raw([1.0, 2.0, 4.0]))
    assert normalize(s) is s


def test_patch_count_exhaustive():
    for p in range(1, 9):
        enc = PatchEncoder(PatchConfig(patch_size=p, embed_dim=3, max_patches=64))
        for L in range(1, 65):
            assert enc(torch.zeros(L)).shape == (1, math.ceil(L / p), 3)
            assert enc.cfg.num_patches(L) == math.ceil(L / p)


def test_sixty_four_by_four_gives_sixteen():
    enc = PatchEncoder(PatchConfig(4, 8))
    seq = patch_encode(normalize(TimeSeries.from_raw(np.arange(64.0))), enc)
    assert seq.num_patches == 16 and seq.embeddings.shape == (16, 8)


def test_zero_state_gives_zero_embeddings():
    enc = PatchEncoder(PatchConfig(4, 8))
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    out = enc(torch.randn(3, 20))
    assert torch.count_nonzero(out) == 0


def naive_patch_conv(x, weight, bias, p):
    # weight: (d, 1, p); loop oracle
    n = -(-len(x) // p)
    x = list(x) + [0.0] * (n * p - len(x))
    d = len(weight)
    return [[bias[c] + sum(weight[c][0][j] * x[i * p + j] for j in range(p)) for c in range(d)]
            for i in range(n)]


def test_identity_kernel_taps_first_sample():
    enc = PatchEncoder(PatchConfig(patch_size=2, embed_dim=3))
    with torch.no_grad():
        enc.conv.weight.zero_()
        enc.conv.weight[0, 0, 0] = 1.0
        enc.conv.bias.zero_()
        enc.pos.zero_()
    a, b, c, d = 0.3, -0.7, 0.9, 0.1
    out = enc(torch.tensor([a, b, c, d]))[0].detach()
    assert out[:, 0].tolist() == pytest.approx([a, c])
    ref = naive_patch_conv([a, b, c, d], enc.conv.weight.tolist(), enc.conv.bias.tolist(), 2)
    assert np.allclose(out.numpy(), np.array(ref), atol=1e-6)


def test_random_conv_matches_loop_oracle():
    enc = PatchEncoder(PatchConfig(patch_size=3, embed_dim=4))
    with torch.no_grad():
        enc.pos.zero_()
    x = torch.randn(10)
    ref = naive_patch_conv(x.tolist(), enc.conv.weight.tolist(), enc.conv.bias.tolist(), 3)
    assert np.allclose(enc(x)[0].detach().numpy(), np.array(ref), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 40), st.data())
def test_locality(p, L, data):
    enc = PatchEncoder(PatchConfig(patch_size=p, embed_dim=5))
    x = torch.randn(L)
    n = math.ceil(L / p)
    i = data.draw(st.integers(0, n - 1))
    y = x.clone()
    y[i * p:min((i + 1) * p, L)] += 1.0
    with torch.no_grad():
        a, b = enc(x)[0], enc(y)[0]
    changed = (a != b).any(dim=1)
    assert changed[i]
    assert not changed[torch.arange(n) != i].any()


def test_conv_gradient_matches_finite_differences():
    torch.manual_seed(1)
    enc = PatchEncoder(PatchConfig(patch_size=4, embed_dim=6)).double()
    x = torch.randn(2, 18, dtype=torch.float64)
    target = torch.randn(2, 5, 6, dtype=torch.float64)
    fd_check(lambda: ((enc(x) - target) ** 2).sum().sin(), [enc.conv.weight, enc.conv.bias, enc.pos])


def test_empty_series_errors():
    enc = PatchEncoder(PatchConfig())
    with pytest.raises(ValueError, match="empty series"):
        enc(torch.zeros(0))
    with pytest.raises(ValueError, match="empty series"):
        patch_encode(TimeSeries(np.zeros(0)), enc)


def test_patch_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        patch_encode(TimeSeries(np.array([0.0, np.nan])), PatchEncoder(PatchConfig()))


def test_too_many_patches():
    enc = PatchEncoder(PatchConfig(patch_size=1, embed_dim=2, max_patches=4))
    with pytest.raises(ValueError):
        enc(torch.zeros(5))


def test_invalid_patch_config():
    with pytest.raises(ValueError):
        PatchConfig(patch_size=0)


def test_describe_uses_g_format():
    s = TimeSeries(np.zeros(2), mean=0.000012345, std=1234567.0, sample_rate_text="10 s", label="x")
    assert describe(s) == "This is x data over 10 s with mean=1.2345e-05 and std=1.23457e+06."
