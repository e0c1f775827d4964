import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tslm.data import prompts
from tslm.data.corpus import (by_split, file_sha256, make_splits, read_jsonl, split_report,
                              split_sizes, write_jsonl)
from tslm.data.synth import (ECG_CLASSES, FAMILY_CLASSES, GENERATORS, HAR_CLASSES, HAR_DISSIMILAR,
                             SLEEP_CLASSES, SLEEP_CODES, SLEEP_DISSIMILAR, ClientParams,
                             check_dissimilarity, gen_activity_windows, gen_ecg_qa, gen_simulation,
                             gen_sleep_epochs, gen_trend_qa, rationale_prompt, rationale_stub)
from tslm.eval.baselines import TokenizedBaseline
from tslm.eval.metrics import extract_answer, random_baseline


def test_trend_labels_balanced():
    c = gen_trend_qa(300, seed=3)
    counts = {k: sum(p.label == k for p in c) for k in ("ascending", "descending", "flat")}
    assert counts == {"ascending": 100, "descending": 100, "flat": 100}
    assert random_baseline(counts).macro_f1 == pytest.approx(100 / 3, abs=1e-9)


def test_trend_slope_sign_matches_label():
    for p in gen_trend_qa(90, seed=4):
        x = p.chunks[0].series.values
        slope = np.polyfit(np.linspace(0, 1, len(x)), x, 1)[0]
        if p.label == "flat":
            assert abs(slope) < 0.9
        else:
            assert np.sign(slope) == (1 if p.label == "ascending" else -1)


def test_trend_sample_shape():
    p = gen_trend_qa(3)[0]
    assert p.pre == prompts.TREND_PRE and p.post == prompts.TREND_POST
    assert len(p.chunks) == 1 and len(p.chunks[0].series) == 64
    assert p.chunks[0].desc.startswith("This is trend data over 64 steps with mean=")


def test_generators_deterministic(tmp_path):
    for name, gen in GENERATORS.items():
        a, b = tmp_path / f"{name}_a.jsonl", tmp_path / f"{name}_b.jsonl"
        write_jsonl(make_splits(gen(20, seed=9), 1), a)
        write_jsonl(make_splits(gen(20, seed=9), 1), b)
        assert file_sha256(a) == file_sha256(b)
        assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "other.jsonl"
    write_jsonl(make_splits(gen_trend_qa(20, seed=10), 1), c)
    assert file_sha256(c) != file_sha256(tmp_path / "trend_a.jsonl")


def test_activity_windows_format():
    c = gen_activity_windows(40, seed=0)
    assert {p.label for p in c} == set(HAR_CLASSES)
    for p in c:
        assert len(p.chunks) == 3
        assert all(len(ch.series) == 128 for ch in p.chunks)
        assert p.pre.startswith(prompts.HAR_PRE)
        assert "Begin by analyzing the time series" in p.pre
        assert p.meta["distractor"] in HAR_DISSIMILAR[p.label]
    assert round(50 * 2.56) == 128


def test_har_sitting_distractors():
    assert set(HAR_DISSIMILAR["sitting"]) == {"walking", "running", "biking", "walking up", "walking down"}
    assert random_baseline({c: 1 for c in HAR_CLASSES}).accuracy == pytest.approx(12.5)


def test_activity_classes_separable_by_energy():
    # motion classes have far more variance than the static postures
    c = gen_activity_windows(80, seed=2)
    static = {"sitting", "standing", "lying"}
    e = {p.label: [] for p in c}
    for p in c:
        e[p.label].append(np.mean([ch.series.std for ch in p.chunks]))
    assert max(max(e[s]) for s in static) < min(min(v) for k, v in e.items() if k not in static)


def test_sleep_epochs_format():
    c = gen_sleep_epochs(25, seed=0)
    assert set(SLEEP_CLASSES) == {p.label for p in c}
    assert len(SLEEP_CLASSES) == 5
    for p in c:
        assert len(p.chunks) == 1 and len(p.chunks[0].series) == 3000
    assert set(SLEEP_DISSIMILAR["N2"]) == {"W", "REM"}
    n2 = [p for p in c if p.label == SLEEP_CODES["N2"]]
    assert n2 and all(p.meta["distractor"] in {"Wake", "REM sleep"} for p in n2)


def test_ecg_format_and_baseline_cost():
    c = gen_ecg_qa(6, seed=0)
    for p in c:
        assert len(p.chunks) == 12 and all(len(ch.series) == 1000 for ch in p.chunks)
        assert p.label in ECG_CLASSES and p.label in p.meta["options"]
        assert "Question: " in p.pre
    base = TokenizedBaseline()
    n = base.token_count(c[0])
    assert n > 80_000 > base.backbone.cfg.max_context


def test_simulation_matches_pseudocode():
    c = gen_simulation(3, 100)
    assert len(c) == 200
    p = c[0]
    assert len(p.chunks) == 3 and all(len(ch.series) == 100 for ch in p.chunks)
    assert p.target == "This is a random pattern."
    assert p.post.startswith("Predict the pattern")
    assert p.pre == "You are given different time series. All have the same length of 100 data points."
    ch = p.chunks[0]
    assert ch.desc == f"This is a time series with mean {ch.series.mean:.4f} and std {ch.series.std:.4f}."
    assert np.all(np.abs(ch.series.values) <= 1)


def test_split_sizes():
    c = make_splits(gen_trend_qa(1000, seed=0), seed=0)
    assert [len(by_split(c, s)) for s in ("train", "val", "test")] == [800, 100, 100]
    assert split_sizes(9304) == (7443, 930, 931)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 500), st.integers(0, 10**6))
def test_splits_disjoint_exhaustive_and_proportional(n, seed):
    items = gen_simulation(1, 2, count=n, seed=0)
    make_splits(items, seed)
    sizes = [len(by_split(items, s)) for s in ("train", "val", "test")]
    assert sum(sizes) == n
    assert abs(sizes[0] - 0.8 * n) <= 1 and abs(sizes[1] - 0.1 * n) <= 1 and abs(sizes[2] - 0.1 * n) <= 1


def test_split_needs_ten():
    with pytest.raises(ValueError):
        make_splits(gen_trend_qa(9), 0)


def test_split_report_format():
    c = make_splits(gen_sleep_epochs(20, seed=0), seed=0)
    head = split_report(c).splitlines()[0]
    assert head == "Label | Train (n=16) | Val (n=2) | Test (n=2)"


def test_jsonl_schema_and_line_endings(tmp_path):
    path = tmp_path / "c.jsonl"
    c = make_splits(gen_trend_qa(12), 0)
    write_jsonl(c, path)
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    rec = json.loads(raw.splitlines()[0])
    assert list(rec) == ["pre", "chunks", "post", "target", "label", "split"]
    assert list(rec["chunks"][0]) == ["values", "mean", "std", "desc"]
    back = read_jsonl(path)
    assert [p.target for p in back] == [p.target for p in c]
    assert back[0].chunks[0].series.mean == c[0].chunks[0].series.mean


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["trend", "har", "sleep", "ecg"]), st.integers(0, 1000))
def test_targets_parse_to_labels(family, seed):
    c = GENERATORS[family](12, seed=seed)
    for p in c:
        assert p.target.endswith(f"Answer: {p.label}")
        assert extract_answer(p.target, FAMILY_CLASSES[family], aliases=SLEEP_CODES) == p.label


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_distractors_respect_maps(seed):
    for p in gen_activity_windows(16, seed=seed):
        assert p.meta["distractor"] != p.label and p.meta["distractor"] in HAR_DISSIMILAR[p.label]
    inv = {v: k for k, v in SLEEP_CODES.items()}
    for p in gen_sleep_epochs(10, seed=seed):
        d = inv[p.meta["distractor"]]
        assert d != inv[p.label] and d in SLEEP_DISSIMILAR[inv[p.label]]


def test_dissimilarity_maps_closed():
    check_dissimilarity(HAR_DISSIMILAR, HAR_CLASSES)
    check_dissimilarity(SLEEP_DISSIMILAR, tuple(SLEEP_CODES))
    with pytest.raises(ValueError):
        check_dissimilarity({"a": ["a"]}, ("a",))
    with pytest.raises(ValueError):
        check_dissimilarity({"a": ["b"]}, ("a",))


def test_rationale_without_client():
    p = rationale_stub(gen_activity_windows(1)[0])
    assert p.target.startswith("The signal shows ") and p.target.endswith(f"Answer: {p.label}")


def test_client_defaults():
    assert ClientParams().temperature == 0.3 and ClientParams().seed == 42


def test_har_rationale_prompt_verbatim():
    text = rationale_prompt(gen_activity_windows(1)[0])
    assert "Do **not** mention either class label until the final sentence." in text
    assert "[CORRECT_ACTIVITY]" not in text and "[DISSIMILAR_ACTIVITY]" not in text


class FakeClient:
    params = ClientParams()

    def __init__(self, reply=None, fail=False):
        self.reply, self.fail, self.calls = reply, fail, []

    def complete(self, prompt, *, temperature, seed):
        self.calls.append((prompt, temperature, seed))
        if self.fail:
            raise ConnectionError("offline")
        return self.reply


def test_client_prompt_forwarded_verbatim():
    p = gen_sleep_epochs(1)[0]
    client = FakeClient(reply=f"Slow waves dominate. Answer: {p.label}")
    out = rationale_stub(p, client)
    assert out.target == f"Slow waves dominate. Answer: {p.label}"
    sent, temp, seed = client.calls[0]
    assert sent == rationale_prompt(p) and (temp, seed) == (0.3, 42)
    assert sent.startswith("You are presented with a time-series plot showing EEG data")


def test_client_failure_falls_back(caplog):
    p = gen_ecg_qa(1)[0]
    with caplog.at_level(logging.WARNING):
        out = rationale_stub(p, FakeClient(fail=True))
    assert out.target.endswith(f"Answer: {p.label}")
    assert "falls back" in caplog.text or "keeping template" in caplog.text


def test_client_reply_without_answer_rejected():
    p = gen_activity_windows(1)[0]
    out = rationale_stub(p, FakeClient(reply="I am not sure."))
    assert out.target.endswith(f"Answer: {p.label}")


def test_count_must_be_positive():
    for gen in GENERATORS.values():
        with pytest.raises(ValueError):
            gen(0)
    with pytest.raises(ValueError):
        gen_simulation(0, 10)
