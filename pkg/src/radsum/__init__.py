"""Desk-scale radiology report summarization pipeline.

Parses free-text radiology reports into findings/impression pairs, builds an
instruction-tuning dataset, trains a small Llama-family decoder (optionally
through low-rank adapters on the attention projections), generates impressions
with greedy decoding, and scores them with ROUGE-1/2/L and a five-criterion
expert-rating aggregator.
"""

__version__ = "0.1.0"
