"""Greedy prediction over a corpus and scoring against its labels."""

from __future__ import annotations

import json

from ..data.synth import FAMILY_CLASSES, SLEEP_CODES
from .metrics import EvalResult, extract_answer, score


def predict(model, corpus, max_new_tokens: int = 48, mode: str = "greedy") -> list[str]:
    return [model.generate(p, max_new_tokens=max_new_tokens, mode=mode) for p in corpus]


def class_set_for(corpus) -> tuple:
    labels = {p.label for p in corpus}
    for classes in FAMILY_CLASSES.values():
        if labels <= set(classes):
            return tuple(classes)
    return tuple(sorted(labels))


def evaluate_corpus(model, corpus, class_set=None, max_new_tokens: int = 48):
    """Generate for every prompt and score the extracted answers.

    Returns the EvalResult and the list of raw generations.
    """
    class_set = class_set or class_set_for(corpus)
    texts = predict(model, corpus, max_new_tokens)
    preds = [extract_answer(t, class_set, aliases=SLEEP_CODES) for t in texts]
    return score(preds, [p.label for p in corpus], class_set), texts


def write_generations(path, corpus, texts, class_set) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p, t in zip(corpus, texts):
            rec = {"label": p.label, "output": t,
                   "prediction": extract_answer(t, class_set, aliases=SLEEP_CODES)}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def has_answer_span(text: str) -> bool:
    return extract_answer(text) is not None


__all__ = ["EvalResult", "predict", "evaluate_corpus", "class_set_for", "write_generations",
           "has_answer_span"]
