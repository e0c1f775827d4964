"""Synthetic stand-ins for the trend-QA, captioning, activity, sleep, ECG and
memory-simulation corpora.

Every sample draws from its own generator seeded by ``(seed, index)``; label
order comes from a separate stream, so a corpus is a pure function of
``(count, seed)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..timeseries import TimeSeries, normalize
from . import prompts
from .corpus import Chunk, MultimodalPrompt

log = logging.getLogger(__name__)

TREND_CLASSES = ("ascending", "descending", "flat")
TREND_CUES = {
    "ascending": "Rising values.",
    "descending": "Falling values.",
    "flat": "Level values.",
}

HAR_CLASSES = ("sitting", "standing", "lying", "walking", "running", "biking",
               "walking up", "walking down")
HAR_DISSIMILAR = {
    "sitting": ["walking", "running", "biking", "walking up", "walking down"],
    "walking": ["sitting", "lying", "standing", "biking", "running"],
    "standing": ["walking", "running", "biking", "walking up", "walking down"],
    "running": ["sitting", "lying", "standing", "biking", "walking"],
    "walking up": ["sitting", "lying", "standing", "biking", "running"],
    "walking down": ["sitting", "lying", "standing", "biking", "running"],
    "lying": ["walking", "running", "biking", "walking up", "walking down"],
    "biking": ["sitting", "lying", "standing", "walking", "running"],
}
HAR_CUES = {
    "sitting": "a nearly constant signal with gravity split between two axes and almost no motion",
    "standing": "a nearly constant signal with gravity aligned to the vertical axis and almost no motion",
    "lying": "a nearly constant signal with gravity shifted onto the lateral axis",
    "walking": "a regular oscillation of moderate amplitude near two cycles per second",
    "running": "a fast, high-amplitude oscillation with strong impact peaks",
    "biking": "a smooth, low-amplitude cyclic pattern at a slow cadence",
    "walking up": "a slower step rhythm with a pronounced forward-axis component",
    "walking down": "a quicker step rhythm with sharp impact harmonics",
}

# Stage 4 is merged into stage 3, leaving five classes.
SLEEP_CODES = {"W": "Wake", "N1": "Non-REM stage 1", "N2": "Non-REM stage 2",
               "N3": "Non-REM stage 3", "REM": "REM sleep"}
SLEEP_CLASSES = tuple(SLEEP_CODES.values())
SLEEP_DISSIMILAR = {
    "W": ["N3", "REM"],
    "N1": ["W", "N3"],
    "N2": ["W", "REM"],
    "N3": ["W", "REM"],
    "REM": ["N2", "N3"],
}
SLEEP_CUES = {
    "W": "fast, low-amplitude activity dominated by alpha and beta rhythms",
    "N1": "slowed theta activity of modest amplitude without spindles",
    "N2": "theta background interrupted by spindle bursts and a K-complex",
    "N3": "large, slow delta waves dominating the segment",
    "REM": "low-amplitude mixed-frequency activity with sawtooth theta",
}

ECG_LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
ECG_TEMPLATES = (
    ("afib", "Does this ECG show atrial fibrillation?", ("yes", "no")),
    ("rhythm", "Is the heart rhythm regular or irregular?", ("regular", "irregular")),
    ("st", "Does this ECG show ST-segment elevation?", ("yes", "no")),
    ("qrs", "Is the QRS duration normal or prolonged?", ("normal", "prolonged")),
    ("rate", "Is the heart rate fast or slow?", ("fast", "slow")),
    ("normal_rate", "Is the heart rate within the normal range?", ("yes", "no")),
)
ECG_CLASSES = ("yes", "no", "regular", "irregular", "normal", "prolonged", "fast", "slow")

FAMILY_CLASSES = {
    "trend": TREND_CLASSES,
    "har": HAR_CLASSES,
    "sleep": SLEEP_CLASSES,
    "ecg": ECG_CLASSES,
}


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0, index])


def _label_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _chunk(raw, label: str, rate: str) -> Chunk:
    s = normalize(TimeSeries.from_raw(raw, rate, label))
    return Chunk(s, s.description)


def check_dissimilarity(mapping: dict, classes) -> None:
    for label, others in mapping.items():
        if label not in classes:
            raise ValueError(f"unknown label {label!r}")
        if label in others:
            raise ValueError(f"{label!r} maps to itself")
        missing = set(others) - set(classes)
        if missing:
            raise ValueError(f"{label!r} maps to unknown labels {sorted(missing)}")


def template_rationale(cue: str, label: str) -> str:
    return f"The signal shows {cue}. Answer: {label}"


def _balanced_labels(count: int, classes, rng) -> list[str]:
    labels = [classes[i % len(classes)] for i in range(count)]
    return [labels[i] for i in rng.permutation(count)]


# --- trend QA and captions -------------------------------------------------

def trend_series(label: str, length: int, rng) -> np.ndarray:
    t = np.linspace(0.0, 1.0, length)
    slope = {"ascending": 1.0, "descending": -1.0, "flat": 0.0}[label] * rng.uniform(1.0, 3.0)
    noise = rng.uniform(0.05, 0.3)
    wiggle = rng.uniform(0.0, 0.2) * np.sin(2 * np.pi * rng.uniform(1, 4) * t + rng.uniform(0, 6.3))
    x = slope * t + wiggle + noise * rng.standard_normal(length)
    # random scale and offset so the raw statistics in the text carry no label signal
    scale = 10 ** rng.uniform(-1, 2)
    offset = rng.uniform(-1, 1) * 10 ** rng.uniform(0, 2)
    return scale * x + offset


def gen_trend_qa(count: int, seed: int = 0, length: int = 64) -> list[MultimodalPrompt]:
    """Three-way trend questions with exactly balanced labels."""
    if count <= 0:
        raise ValueError("count must be positive")
    labels = _balanced_labels(count, TREND_CLASSES, _label_rng(seed))
    out = []
    for i, label in enumerate(labels):
        rng = _rng(seed, i)
        ch = _chunk(trend_series(label, length, rng), "trend", f"{length} steps")
        target = f"{TREND_CUES[label]} Answer: {label}"
        out.append(MultimodalPrompt(prompts.TREND_PRE, [ch], prompts.TREND_POST, target, label,
                                    meta={"family": "trend"}))
    return out


def gen_captions(count: int, seed: int = 0) -> list[MultimodalPrompt]:
    """Caption-style targets describing trend, seasonality and noise of one series."""
    if count <= 0:
        raise ValueError("count must be positive")
    out = []
    for i in range(count):
        rng = _rng(seed, i)
        length = int(rng.choice([64, 128, 256]))
        trend = TREND_CLASSES[int(rng.integers(3))]
        seasonal = bool(rng.integers(2))
        t = np.linspace(0, 1, length)
        x = trend_series(trend, length, rng)
        period = int(rng.integers(4, 12))
        if seasonal:
            x = x + np.ptp(x) * 0.4 * np.sin(2 * np.pi * period * t)
        caption = {
            "ascending": "The series trends upward",
            "descending": "The series trends downward",
            "flat": "The series stays around a constant level",
        }[trend]
        caption += f" with a regular cycle of about {length // period} steps." if seasonal else \
            " without a clear seasonal pattern."
        ch = _chunk(x, "time series", f"{length} steps")
        out.append(MultimodalPrompt("", [ch], prompts.CAPTION_TEMPLATE, caption, trend,
                                    meta={"family": "caption"}))
    return out


# --- human activity --------------------------------------------------------

HAR_RATE = 50
HAR_WINDOW_S = 2.56
HAR_LENGTH = round(HAR_RATE * HAR_WINDOW_S)

_ORIENT = {
    "sitting": (0.35, 0.25, 0.90),
    "standing": (0.98, 0.10, 0.12),
    "lying": (0.10, 0.95, 0.25),
}


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def har_window(label: str, rng) -> np.ndarray:
    """(3, 128) triaxial acceleration in m/s^2 for one activity archetype."""
    t = np.arange(HAR_LENGTH) / HAR_RATE
    g = 9.81
    base = {"walking": "standing", "running": "standing", "walking up": "standing",
            "walking down": "standing", "biking": "sitting"}.get(label, label)
    orient = _unit(np.asarray(_ORIENT[base]) + rng.normal(0, 0.05, 3))
    x = np.outer(orient * g, np.ones_like(t))
    phase = rng.uniform(0, 2 * np.pi, 3)
    if label in ("sitting", "standing", "lying"):
        x += rng.normal(0, 0.04, x.shape)
        return x
    freq, amp, harm = {
        "walking": (rng.uniform(1.8, 2.2), rng.uniform(2.0, 3.0), 0.3),
        "running": (rng.uniform(2.6, 3.2), rng.uniform(6.0, 9.0), 0.5),
        "biking": (rng.uniform(1.0, 1.4), rng.uniform(0.8, 1.4), 0.05),
        "walking up": (rng.uniform(1.5, 1.8), rng.uniform(2.0, 3.0), 0.2),
        "walking down": (rng.uniform(2.2, 2.5), rng.uniform(2.5, 3.5), 0.8),
    }[label]
    axis_gain = {"walking up": (1.0, 0.4, 0.9), "walking down": (1.0, 0.5, 0.5),
                 "biking": (0.4, 1.0, 0.6)}.get(label, (1.0, 0.5, 0.5))
    for a in range(3):
        w = 2 * np.pi * freq * t + phase[a]
        x[a] += amp * axis_gain[a] * (np.sin(w) + harm * np.sin(2 * w + phase[a]))
    x += rng.normal(0, 0.1 * amp, x.shape)
    return x


def gen_activity_windows(count: int, seed: int = 0) -> list[MultimodalPrompt]:
    if count <= 0:
        raise ValueError("count must be positive")
    labels = _balanced_labels(count, HAR_CLASSES, _label_rng(seed))
    post = prompts.HAR_POST.format(labels=", ".join(sorted(HAR_CLASSES)))
    rate = f"{HAR_WINDOW_S} s sampled at {HAR_RATE} Hz"
    out = []
    for i, label in enumerate(labels):
        rng = _rng(seed, i)
        win = har_window(label, rng)
        chunks = [_chunk(win[a], f"accelerometer {ax}-axis", rate) for a, ax in enumerate("xyz")]
        others = HAR_DISSIMILAR[label]
        distractor = others[int(rng.integers(len(others)))]
        target = template_rationale(HAR_CUES[label], label)
        out.append(MultimodalPrompt(prompts.HAR_PRE, chunks, post, target, label,
                                    meta={"family": "har", "distractor": distractor,
                                          "cue": HAR_CUES[label]}))
    return out


# --- sleep staging ---------------------------------------------------------

SLEEP_RATE = 100
SLEEP_EPOCH_S = 30
SLEEP_LENGTH = SLEEP_RATE * SLEEP_EPOCH_S


def eeg_epoch(code: str, rng) -> np.ndarray:
    """One 30 s single-channel EEG-like epoch in microvolts."""
    t = np.arange(SLEEP_LENGTH) / SLEEP_RATE

    def osc(lo, hi, amp):
        f = rng.uniform(lo, hi)
        return amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))

    x = rng.normal(0, 8, SLEEP_LENGTH)
    if code == "W":
        x += osc(8, 12, 20) + osc(15, 30, 10)
    elif code == "N1":
        x += osc(4, 7, 30)
    elif code == "N2":
        x += osc(4, 7, 25)
        for _ in range(int(rng.integers(2, 5))):
            c, dur = rng.uniform(1, 28), rng.uniform(0.5, 1.5)
            env = np.exp(-0.5 * ((t - c) / (dur / 4)) ** 2)
            x += 40 * env * np.sin(2 * np.pi * rng.uniform(12, 14) * t)
        c = rng.uniform(2, 28)
        x += -100 * np.exp(-0.5 * ((t - c) / 0.15) ** 2) + 60 * np.exp(-0.5 * ((t - c - 0.4) / 0.2) ** 2)
    elif code == "N3":
        x += osc(0.5, 2.0, 100) + osc(0.5, 2.0, 40)
    elif code == "REM":
        f = rng.uniform(2, 6)
        saw = 2 * ((f * t + rng.uniform()) % 1.0) - 1
        x += 15 * saw + osc(15, 25, 8)
    else:
        raise ValueError(f"unknown sleep stage {code!r}")
    return x


def gen_sleep_epochs(count: int, seed: int = 0) -> list[MultimodalPrompt]:
    if count <= 0:
        raise ValueError("count must be positive")
    codes = _balanced_labels(count, tuple(SLEEP_CODES), _label_rng(seed))
    post = prompts.SLEEP_POST.format(labels=", ".join(SLEEP_CLASSES))
    out = []
    for i, code in enumerate(codes):
        rng = _rng(seed, i)
        label = SLEEP_CODES[code]
        ch = _chunk(eeg_epoch(code, rng), "EEG", f"{SLEEP_EPOCH_S} s sampled at {SLEEP_RATE} Hz")
        others = SLEEP_DISSIMILAR[code]
        distractor = SLEEP_CODES[others[int(rng.integers(len(others)))]]
        out.append(MultimodalPrompt(prompts.SLEEP_PRE, [ch], post,
                                    template_rationale(SLEEP_CUES[code], label), label,
                                    meta={"family": "sleep", "distractor": distractor,
                                          "cue": SLEEP_CUES[code]}))
    return out


# --- ECG question answering ------------------------------------------------

ECG_RATE = 100
ECG_DURATION_S = 10
ECG_LENGTH = ECG_RATE * ECG_DURATION_S
# per-lead gains for the (P, QRS, T) components
_LEAD_GAIN = np.array([
    [0.8, 1.0, 0.8], [1.0, 1.4, 1.0], [0.3, 0.5, 0.3], [-0.8, -1.1, -0.8],
    [0.4, 0.6, 0.4], [0.6, 0.9, 0.6], [0.3, -0.8, -0.2], [0.4, -0.4, 0.6],
    [0.4, 0.6, 0.8], [0.5, 1.3, 0.9], [0.5, 1.2, 0.8], [0.4, 1.0, 0.6],
])


@dataclass
class EcgState:
    heart_rate: float
    afib: bool
    irregular: bool
    st_elevation: bool
    wide_qrs: bool


def ecg_state_for(kind: str, answer: str, rng) -> EcgState:
    hr = rng.uniform(62, 95)
    afib = irregular = st = wide = False
    if kind == "afib":
        afib = irregular = answer == "yes"
    elif kind == "rhythm":
        irregular = answer == "irregular"
        afib = irregular and bool(rng.integers(2))
    elif kind == "st":
        st = answer == "yes"
    elif kind == "qrs":
        wide = answer == "prolonged"
    elif kind == "rate":
        hr = rng.uniform(105, 140) if answer == "fast" else rng.uniform(40, 55)
    elif kind == "normal_rate":
        hr = rng.uniform(62, 95) if answer == "yes" else float(rng.choice([rng.uniform(40, 55), rng.uniform(105, 140)]))
    return EcgState(hr, afib, irregular, st, wide)


def ecg_record(state: EcgState, rng) -> np.ndarray:
    """(12, 1000) synthetic 12-lead ECG in millivolts."""
    t = np.arange(ECG_LENGTH) / ECG_RATE
    rr = 60.0 / state.heart_rate
    beats, b = [], rng.uniform(0, rr)
    while b < ECG_DURATION_S + 0.5:
        beats.append(b)
        jitter = rng.uniform(-0.3, 0.3) if state.irregular else rng.normal(0, 0.01)
        b += rr * (1 + jitter)
    qrs_w = 0.03 if state.wide_qrs else 0.012

    def g(c, w):
        return np.exp(-0.5 * ((t - c) / w) ** 2)

    p = sum(g(c - 0.16, 0.025) for c in beats) * 0.12
    qrs = sum(-0.1 * g(c - 0.03, qrs_w) + g(c, qrs_w) - 0.25 * g(c + 0.03, qrs_w) for c in beats)
    tw = sum(0.3 * g(c + 0.25, 0.05) for c in beats)
    if state.st_elevation:
        tw = tw + sum(0.2 * ((t > c + 0.05) & (t < c + 0.2)) for c in beats)
    if state.afib:
        p = 0.04 * np.sin(2 * np.pi * rng.uniform(5, 8) * t + rng.uniform(0, 6.3))
    comps = np.stack([p, qrs, tw])
    x = _LEAD_GAIN @ comps
    x += rng.normal(0, 0.02, x.shape) + 0.05 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t)[None, :]
    return x


def gen_ecg_qa(count: int, seed: int = 0) -> list[MultimodalPrompt]:
    if count <= 0:
        raise ValueError("count must be positive")
    rate = f"{ECG_DURATION_S} s sampled at {ECG_RATE} Hz"
    out = []
    for i in range(count):
        rng = _rng(seed, i)
        kind, question, options = ECG_TEMPLATES[int(rng.integers(len(ECG_TEMPLATES)))]
        answer = options[int(rng.integers(2))]
        state = ecg_state_for(kind, answer, rng)
        rec = ecg_record(state, rng)
        context = f"Age: {int(rng.integers(25, 90))}, sex: {rng.choice(['female', 'male'])}."
        chunks = [_chunk(rec[j], f"ECG lead {lead}", rate) for j, lead in enumerate(ECG_LEADS)]
        cue = f"a heart rate near {state.heart_rate:.0f} bpm with " + (
            "irregular beat spacing" if state.irregular else "regular beat spacing")
        if state.st_elevation:
            cue += " and elevated ST segments"
        if state.wide_qrs:
            cue += " and broad QRS complexes"
        distractor = options[1] if answer == options[0] else options[0]
        out.append(MultimodalPrompt(
            prompts.ECG_PRE.format(context=context, question=question), chunks,
            prompts.ECG_POST.format(opt1=options[0], opt2=options[1]),
            template_rationale(cue, answer), answer,
            meta={"family": "ecg", "question": question, "context": context,
                  "options": options, "distractor": distractor, "cue": cue, "template": kind}))
    return out


# --- memory simulation -----------------------------------------------------

def gen_simulation(num_series: int, length: int, count: int = 200, seed: int = 0) -> list[MultimodalPrompt]:
    """Random-normal series with fixed prompt and answer, for memory sweeps."""
    if num_series < 1 or length < 1 or count < 1:
        raise ValueError("num_series, length and count must be positive")
    out = []
    for i in range(count):
        rng = _rng(seed, i)
        chunks = []
        for _ in range(num_series):
            raw = rng.standard_normal(length)
            s = normalize(TimeSeries.from_raw(raw))
            chunks.append(Chunk(s, prompts.SIM_DESC.format(mean=s.mean, std=s.std)))
        out.append(MultimodalPrompt(prompts.SIM_PRE.format(length=length), chunks,
                                    prompts.SIM_POST, prompts.SIM_ANSWER, "random",
                                    meta={"family": "simulation"}))
    return out


GENERATORS = {
    "trend": gen_trend_qa,
    "har": gen_activity_windows,
    "sleep": gen_sleep_epochs,
    "ecg": gen_ecg_qa,
    "caption": gen_captions,
}


# --- rationales ------------------------------------------------------------

@dataclass(frozen=True)
class ClientParams:
    model: str = "gpt-4o-2024-08-06"
    temperature: float = 0.3
    seed: int = 42


class RationaleClient(Protocol):
    params: ClientParams

    def complete(self, prompt: str, *, temperature: float, seed: int) -> str: ...


def rationale_prompt(sample: MultimodalPrompt, rng: np.random.Generator | None = None) -> str:
    """Fill the family's rationale-generation template for ``sample``."""
    fam = sample.meta.get("family")
    distractor = sample.meta.get("distractor", "")
    pair = [sample.label, distractor]
    if rng is not None and rng.integers(2):
        pair.reverse()
    if fam == "har":
        return (prompts.HAR_RATIONALE_TEMPLATE
                .replace("[CORRECT_ACTIVITY]\n[DISSIMILAR_ACTIVITY]", f"{pair[0]}\n{pair[1]}")
                .replace("[CORRECT_ACTIVITY]", sample.label))
    if fam == "sleep":
        return (prompts.SLEEP_RATIONALE_TEMPLATE.replace("[SLEEP_STAGE_1]", pair[0])
                .replace("[SLEEP_STAGE_2]", pair[1])
                .replace("[CORRECT_SLEEP_STAGE]", sample.label))
    if fam == "ecg":
        opts = sample.meta["options"]
        return (prompts.ECG_RATIONALE_TEMPLATE
                .replace("[CLINICAL_CONTEXT]", sample.meta["context"])
                .replace("[QUESTION]", sample.meta["question"])
                .replace("[ANSWER_OPTION_1]", opts[0]).replace("[ANSWER_OPTION_2]", opts[1])
                .replace("[CORRECT_ANSWER]", sample.label))
    raise ValueError(f"no rationale template for family {fam!r}")


def rationale_stub(sample: MultimodalPrompt, client: RationaleClient | None = None) -> MultimodalPrompt:
    """Attach a rationale to ``sample.target``.

    Without a client the deterministic template rationale is used. With a
    client, the filled rationale prompt is sent as-is; on failure, or when the
    reply does not end in the expected answer, the template is kept.
    """
    cue = sample.meta.get("cue") or TREND_CUES.get(sample.label, "the expected pattern")
    fallback = template_rationale(cue, sample.label)
    sample.target = fallback
    if client is None:
        return sample
    params = getattr(client, "params", ClientParams())
    try:
        reply = client.complete(rationale_prompt(sample), temperature=params.temperature,
                                seed=params.seed)
    except Exception as exc:  # noqa: BLE001 - any client failure falls back to the template
        log.warning("rationale client failed (%s); keeping template rationale", exc)
        return sample
    if reply.rstrip().rstrip(".").endswith(f"Answer: {sample.label}"):
        sample.target = reply.strip()
    else:
        log.warning("rationale reply lacks the final answer; keeping template rationale")
    return sample
