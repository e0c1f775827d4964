from .corpus import Chunk, MultimodalPrompt, make_splits, read_jsonl, write_jsonl

__all__ = ["Chunk", "MultimodalPrompt", "make_splits", "read_jsonl", "write_jsonl"]
