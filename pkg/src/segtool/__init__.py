"""Segmentation of non-natural-language spans in technical support
questions: corpus handling, a GRU-CRF sequence labeller over combinable
embedding streams, soft-overlap evaluation, sentence baselines, and
segment-boosted BM25 answer retrieval."""

__version__ = "0.1.0"
