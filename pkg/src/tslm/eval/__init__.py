from .baselines import TokenizedBaseline, detokenize_series, tokenize_series_as_text
from .metrics import EvalResult, extract_answer, random_baseline, score

__all__ = ["TokenizedBaseline", "detokenize_series", "tokenize_series_as_text",
           "EvalResult", "extract_answer", "random_baseline", "score"]
