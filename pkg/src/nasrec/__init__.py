"""Social recommender with an attention-weighted friend-influence model.

The package provides data ingestion for rating/friendship files, a small
float64 numerical kernel with explicit gradients, the attention model and
its baselines (plain BPR matrix factorization, uniform-attention variant),
BPR training with matrix-factorization pretraining, a top-N ranking
evaluation harness, and a command-line interface.
"""

__version__ = "0.1.0"
