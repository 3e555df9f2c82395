"""Tag-aware hybrid recommendation: hierarchical-attention document
embeddings fused into feature-based matrix factorization."""

__version__ = "0.1.0"
