"""Prompt records, JSON-lines corpus files and train/val/test splitting."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..timeseries import TimeSeries

SPLITS = ("train", "val", "test")


@dataclass
class Chunk:
    series: TimeSeries  # normalized; mean/std describe the raw signal
    desc: str


@dataclass
class MultimodalPrompt:
    pre: str
    chunks: list[Chunk]
    post: str
    target: str
    label: str
    split: str = ""
    meta: dict = field(default_factory=dict)  # in-memory only, never serialized

    def to_json(self) -> dict:
        return {
            "pre": self.pre,
            "chunks": [
                {
                    "values": [round(float(v), 6) for v in c.series.values],
                    "mean": float(c.series.mean),
                    "std": float(c.series.std),
                    "desc": c.desc,
                }
                for c in self.chunks
            ],
            "post": self.post,
            "target": self.target,
            "label": self.label,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MultimodalPrompt":
        chunks = [
            Chunk(TimeSeries(np.asarray(c["values"], dtype=np.float64), c["mean"], c["std"],
                             normalized=True, constant=c["std"] == 0), c["desc"])
            for c in d["chunks"]
        ]
        return cls(d["pre"], chunks, d["post"], d["target"], d["label"], d.get("split", ""))


def write_jsonl(corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[MultimodalPrompt]:
    with open(path, encoding="utf-8") as fh:
        return [MultimodalPrompt.from_json(json.loads(line)) for line in fh if line.strip()]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = round(0.8 * n)
    n_val = round(0.1 * n)
    return n_train, n_val, n - n_train - n_val


def make_splits(corpus: list[MultimodalPrompt], seed: int = 0) -> list[MultimodalPrompt]:
    """Assign an 80/10/10 train/val/test split in place (random permutation)."""
    n = len(corpus)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_train, n_val, _ = split_sizes(n)
    order = np.random.default_rng(seed).permutation(n)
    for rank, i in enumerate(order):
        corpus[i].split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return corpus


def by_split(corpus, split: str) -> list[MultimodalPrompt]:
    return [p for p in corpus if p.split == split]


def split_stats(corpus) -> dict:
    """Per-split sample counts and label distribution."""
    out = {}
    for s in SPLITS:
        labels = Counter(p.label for p in corpus if p.split == s)
        out[s] = {"n": sum(labels.values()), "labels": dict(sorted(labels.items()))}
    return out


def split_report(corpus) -> str:
    """Plain-text table of per-class counts, e.g. ``Train (n=7434)`` headers."""
    stats = split_stats(corpus)
    classes = sorted({p.label for p in corpus})
    head = ["Label"] + [f"{s.capitalize()} (n={stats[s]['n']})" for s in SPLITS]
    rows = [" | ".join(head)]
    for c in classes:
        cells = [c]
        for s in SPLITS:
            k = stats[s]["labels"].get(c, 0)
            pct = 100.0 * k / stats[s]["n"] if stats[s]["n"] else 0.0
            cells.append(f"{k} ({pct:.1f}%)")
        rows.append(" | ".join(cells))
    return "\n".join(rows)
