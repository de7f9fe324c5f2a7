"""Construction of the three training views and the perturbed joint graph.

Starting from the binary interaction matrix and the social network, two
supplementary user-user views are distilled from triangle structures:

* friend view: pairs of connected users weighted by how many friends they
  share (closed social triangles);
* sharing view: pairs of connected users weighted by how many items both
  consumed (user-user-item triangles).

Both are computed as a sparse product masked back onto the social support,
so their edges are always a subset of the social edges, with integer
weights counting the triangles.  The weights are kept (not binarized) and
symmetric normalization is applied before convolution.

The perturbed joint graph stacks social and interaction edges into one
symmetric block matrix and drops undirected edges at a fixed rate; it is
the pool the contrastive stage draws unlabeled examples from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import (
    DomainError,
    ShapeError,
    SparseMatrix,
    hadamard,
    is_symmetric,
    spsp,
    sym_normalize,
    transpose,
)


@dataclass(frozen=True)
class ViewSet:
    """Normalized adjacencies for the preference, friend and sharing views."""

    preference: SparseMatrix  # (m+n) x (m+n) bipartite interaction graph
    friend: SparseMatrix      # m x m social-triangle graph
    sharing: SparseMatrix     # m x m co-consumption-triangle graph


@dataclass(frozen=True)
class PerturbedGraph:
    """Edge-dropped, renormalized joint graph plus the seed that shaped it."""

    adjacency: SparseMatrix
    seed: int


def augment_views(interactions: SparseMatrix, social: SparseMatrix):
    """Raw (unnormalized) friend and sharing view adjacencies.

    Entry (u, v) of the friend view counts the mutual friends of two
    connected users; entry (u, v) of the sharing view counts their common
    items.  Pairs without a social edge are zero in both.
    """
    m = social.n_rows
    if social.n_cols != m:
        raise ShapeError("social matrix must be square")
    if interactions.n_rows != m:
        raise ShapeError("interaction and social matrices disagree on user count")
    friend_raw = hadamard(spsp(social, social), social)
    sharing_raw = hadamard(spsp(interactions, transpose(interactions)), social)
    return friend_raw, sharing_raw


def build_joint(interactions: SparseMatrix, social: SparseMatrix | None = None) -> SparseMatrix:
    """Symmetric (m+n) x (m+n) block adjacency.

    The user-user block holds the social edges (zero when ``social`` is
    omitted), the off-diagonal blocks hold the interactions in both
    orientations and the item-item block is empty.
    """
    m, n = interactions.shape
    size = m + n
    users, items = _coo(interactions)
    rows = [users, items + m]
    cols = [items + m, users]
    vals = [interactions.values, interactions.values]
    if social is not None and social.nnz:
        if social.shape != (m, m):
            raise ShapeError("social block must be m x m")
        s_rows, s_cols = _coo(social)
        rows.append(s_rows)
        cols.append(s_cols)
        vals.append(social.values)
    return SparseMatrix.from_coo(
        np.concatenate(rows) if rows else [],
        np.concatenate(cols) if cols else [],
        np.concatenate(vals) if vals else [],
        shape=(size, size),
    )


def perturb(joint: SparseMatrix, rho: float, rng_seed: int) -> PerturbedGraph:
    """Drop each undirected edge independently with probability ``rho``.

    Both directions of an edge live or die together, so symmetry is
    preserved.  The surviving graph is renormalized.  Deterministic for a
    fixed seed.
    """
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rho}")
    if not is_symmetric(joint):
        raise ShapeError("perturb expects a symmetric adjacency")
    rows, cols = _coo(joint)
    upper = rows < cols
    u_rows, u_cols = rows[upper], cols[upper]
    u_vals = joint.values[upper]
    keep = np.random.default_rng(rng_seed).random(u_rows.size) >= rho
    kept_rows = u_rows[keep]
    kept_cols = u_cols[keep]
    kept_vals = u_vals[keep]
    surviving = SparseMatrix.from_coo(
        np.concatenate([kept_rows, kept_cols]),
        np.concatenate([kept_cols, kept_rows]),
        np.concatenate([kept_vals, kept_vals]),
        shape=joint.shape,
    )
    return PerturbedGraph(adjacency=sym_normalize(surviving), seed=rng_seed)


def build_view_set(interactions: SparseMatrix, social: SparseMatrix) -> ViewSet:
    """Normalized views ready for graph convolution.

    The preference view is the bipartite interaction graph only; social
    edges reach the recommendation pathway exclusively through the
    auxiliary views and the contrastive task.
    """
    friend_raw, sharing_raw = augment_views(interactions, social)
    return ViewSet(
        preference=sym_normalize(build_joint(interactions)),
        friend=sym_normalize(friend_raw),
        sharing=sym_normalize(sharing_raw),
    )


def _coo(matrix: SparseMatrix) -> tuple[np.ndarray, np.ndarray]:
    counts = np.diff(matrix.row_offsets)
    rows = np.repeat(np.arange(matrix.n_rows), counts)
    return rows, matrix.col_indices.copy()
