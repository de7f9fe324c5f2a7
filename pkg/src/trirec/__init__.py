"""Tri-view self-supervised social recommender.

A LightGCN-backed Top-N recommender that augments the user-item graph
with two triangle-based social views, mines per-user pseudo-labels by
cross-view agreement, and sharpens the shared embeddings with a
neighbor-contrastive objective on top of pairwise ranking.
"""

from .sparse import SparseMatrix, spmm, spsp, hadamard, transpose, sym_normalize

__all__ = [
    "SparseMatrix",
    "spmm",
    "spsp",
    "hadamard",
    "transpose",
    "sym_normalize",
]

__version__ = "0.1.0"
