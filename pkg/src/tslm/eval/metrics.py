"""Answer extraction and classification scoring."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

ANSWER_MARK = "Answer:"
_TRAILING = " \t.,;:!?\"'"


def _norm(s: str) -> str:
    return re.sub(r"\s+", " ", s.replace("_", " ")).strip(_TRAILING).casefold()


def extract_answer(text: str, class_set=None, aliases: dict | None = None):
    """Label after the last ``Answer:``, or None when there is no usable answer.

    With ``class_set`` the span is matched case-insensitively against the
    classes (and ``aliases``) and the canonical class name is returned.
    """
    if not isinstance(text, str):
        return None
    pos = text.rfind(ANSWER_MARK)
    if pos < 0:
        return None
    span = text[pos + len(ANSWER_MARK):].strip().split("\n", 1)[0]
    span = _norm(span)
    if not span:
        return None
    if class_set is None:
        return span
    lookup = {_norm(c): c for c in class_set}
    for k, v in (aliases or {}).items():
        lookup.setdefault(_norm(k), v)
    return lookup.get(span)


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalResult:
    per_class: dict = field(default_factory=dict)  # label -> ClassScore (percent)
    macro_f1: float = 0.0
    accuracy: float = 0.0
    n_samples: int = 0
    invalid_output_count: int = 0

    def row(self) -> dict:
        return {"macro_f1": round(self.macro_f1, 4), "accuracy": round(self.accuracy, 4),
                "n_samples": self.n_samples, "invalid_output_count": self.invalid_output_count}


def score(predictions, labels, class_set) -> EvalResult:
    """Macro-F1 and accuracy in percent.

    ``predictions`` holds extracted labels; None or anything outside
    ``class_set`` is an invalid output and counts as wrong. Classes with no
    true positives get F1 = 0.
    """
    classes = list(dict.fromkeys(class_set))
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    known = set(classes)
    for y in labels:
        if y not in known:
            raise ValueError(f"label {y!r} outside the class set")
    preds = [p if p in known else None for p in predictions]
    n = len(labels)
    res = EvalResult(n_samples=n, invalid_output_count=sum(p is None for p in preds))
    if n == 0:
        return res
    f1s = []
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if y == c and p != c)
        prec = tp / (tp + fp) if tp else 0.0
        rec = tp / (tp + fn) if tp else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        res.per_class[c] = ClassScore(100 * prec, 100 * rec, 100 * f1, tp + fn)
        f1s.append(f1)
    res.macro_f1 = 100 * sum(f1s) / len(f1s)
    res.accuracy = 100 * sum(p == y for p, y in zip(preds, labels)) / n
    return res


def random_baseline(distribution) -> EvalResult:
    """Expected scores of a uniform guesser against a label distribution.

    ``distribution`` maps label -> count or probability. Accuracy is 1/K and
    per-class F1 is 2 pi_k (1/K) / (pi_k + 1/K).
    """
    dist = dict(distribution)
    total = float(sum(dist.values()))
    if not dist or total <= 0:
        raise ValueError("empty label distribution")
    k = len(dist)
    q = 1.0 / k
    res = EvalResult(n_samples=int(total) if total > 1 else 0, accuracy=100 * q)
    f1s = []
    for label, w in dist.items():
        pi = w / total
        f1 = 2 * pi * q / (pi + q)
        res.per_class[label] = ClassScore(100 * pi, 100 * q, 100 * f1, int(w) if total > 1 else 0)
        f1s.append(f1)
    res.macro_f1 = 100 * sum(f1s) / k
    return res


def write_results_csv(path, results: dict) -> None:
    """One row per named EvalResult plus per-class columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "class", "precision", "recall", "f1", "support",
                    "macro_f1", "accuracy", "n_samples", "invalid_output_count"])
        for name, r in results.items():
            w.writerow([name, "__all__", "", "", "", "", f"{r.macro_f1:.4f}", f"{r.accuracy:.4f}",
                        r.n_samples, r.invalid_output_count])
            for c, s in r.per_class.items():
                w.writerow([name, c, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}",
                            s.support, "", "", "", ""])
