"""Cross-view pseudo-labeling and the neighbor-contrastive objective.

The semi-supervised stage treats users drawn from the perturbed joint
graph as an unlabeled example pool.  For each view, the *other* views
score every pool member by cosine similarity to the target user, the
per-view softmax scores are averaged, and the top-scoring members become
that user's positive pseudo-labels.  A temperature-scaled InfoNCE loss
then pulls the user's representation toward its positives and away from
the rest of the pool.

Labels are index sets; no gradient flows through their selection.  The
loss itself is differentiated exactly, through the cosine normalization,
with respect to both the user representations and the pool rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sparse import DomainError, ShapeError

VIEW_TAGS = ("preference", "friend", "sharing")


@dataclass(eq=False)
class LabelSet:
    """Positive pseudo-labels for one view and one batch of users.

    ``positives[k]`` indexes rows of the candidate pool (not global user
    ids) and belongs to the user ``users[k]``.  ``candidate_indices`` maps
    pool rows back to global user indices.
    """

    view_tag: str
    users: np.ndarray
    positives: list
    candidate_indices: np.ndarray


def _normalize_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; all-zero rows stay zero (cosine treated as 0)."""
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe[:, None], norms


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities with zero-vector rows scoring 0."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError("cosine operands must share the feature dimension")
    a_hat, _ = _normalize_rows(a)
    b_hat, _ = _normalize_rows(b)
    return a_hat @ b_hat.T


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def label_probabilities(
    z_u_a: np.ndarray, z_u_b: np.ndarray, candidates: np.ndarray
) -> np.ndarray:
    """Average the two labeling views' softmaxed cosine scores over the pool.

    Returns a probability vector over the candidate rows; it sums to one.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] < 1:
        raise DomainError("candidate pool must be a non-empty matrix")
    return label_matrix(candidates, [np.asarray(z_u_a), np.asarray(z_u_b)])[0]


def label_matrix(candidates: np.ndarray, labeler_reps: Sequence[np.ndarray]) -> np.ndarray:
    """Batched labeling: mean of softmax(cosine) over any number of labelers.

    Each element of ``labeler_reps`` holds one representation per target
    user (vector or matrix); the result has one probability row per user.
    """
    if not labeler_reps:
        raise DomainError("at least one labeling view is required")
    total = None
    for rep in labeler_reps:
        probs = _softmax_rows(cosine_matrix(rep, candidates))
        total = probs if total is None else total + probs
    return total / len(labeler_reps)


def top_k(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, descending, ties to the smaller index."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise DomainError("probability vector must be non-empty")
    if k < 1:
        raise DomainError("k must be at least 1")
    return top_k_rows(probs[None, :], k)[0]


def top_k_rows(prob_rows: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`top_k`; stable sort keeps the tie rule exact."""
    k = min(k, prob_rows.shape[1])
    order = np.argsort(-prob_rows, axis=1, kind="stable")
    return order[:, :k]


def make_label_set(
    view_tag: str,
    users: np.ndarray,
    labeler_reps: Sequence[np.ndarray],
    candidate_reps: np.ndarray,
    candidate_indices: np.ndarray,
    n_positives: int,
    exclude_self: bool = False,
    self_only: bool = False,
) -> LabelSet:
    """Build the positive pseudo-label set for one view.

    ``self_only`` short-circuits the agreement machinery and labels each
    user with exactly its own pool row (each user must then be present in
    the pool).  ``exclude_self`` bars a user's own row from being chosen.
    """
    users = np.asarray(users, dtype=np.int64)
    candidate_indices = np.asarray(candidate_indices, dtype=np.int64)
    own_column = _own_positions(users, candidate_indices)
    if self_only:
        if np.any(own_column < 0):
            raise ValueError("self-labeling requires every user in the pool")
        positives = [np.array([col]) for col in own_column]
        return LabelSet(view_tag, users, positives, candidate_indices)
    probs = label_matrix(candidate_reps, labeler_reps)
    if exclude_self:
        present = own_column >= 0
        probs = probs.copy()
        probs[np.nonzero(present)[0], own_column[present]] = -1.0
    picked = top_k_rows(probs, n_positives)
    if exclude_self:
        positives = [
            row[row != own] if own >= 0 else row.copy()
            for row, own in zip(picked, own_column)
        ]
    else:
        positives = [row.copy() for row in picked]
    return LabelSet(view_tag, users, positives, candidate_indices)


def _own_positions(users: np.ndarray, candidate_indices: np.ndarray) -> np.ndarray:
    """Column of each user's own row in the pool, or -1 when absent.

    ``candidate_indices`` must be sorted ascending.
    """
    pos = np.searchsorted(candidate_indices, users)
    pos = np.clip(pos, 0, max(candidate_indices.size - 1, 0))
    hit = candidate_indices.size > 0
    found = hit & (candidate_indices[pos] == users) if hit else np.zeros_like(users, bool)
    return np.where(found, pos, -1)


def infonce(
    z_view: np.ndarray,
    candidates: np.ndarray,
    labels: LabelSet,
    tau: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Temperature-scaled contrastive loss over the candidate pool.

    For each user the loss is ``-log(sum_pos psi / sum_all psi)`` with
    ``psi = exp(cos/tau)``; the batch loss is the sum over users.  Returns
    the loss together with its exact gradients with respect to the raw
    (unnormalized) user representations and candidate rows.
    """
    if tau <= 0:
        raise DomainError("temperature must be positive")
    z_view = np.asarray(z_view, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    n_users, n_cand = z_view.shape[0], candidates.shape[0]
    if len(labels.positives) != n_users:
        raise ValueError("one positive set per user is required")
    pos_mask = np.zeros((n_users, n_cand), dtype=bool)
    for row, pos in enumerate(labels.positives):
        pos = np.asarray(pos, dtype=np.int64)
        if pos.size == 0:
            raise ValueError(f"user row {row} has an empty positive set")
        if pos.min() < 0 or pos.max() >= n_cand:
            raise ValueError("positive index outside the candidate pool")
        pos_mask[row, pos] = True

    z_hat, z_norms = _normalize_rows(z_view)
    c_hat, c_norms = _normalize_rows(candidates)
    scores = (z_hat @ c_hat.T) / tau
    # shared per-row max keeps the positive/total ratio exact: the loss is
    # log1p(neg/pos) >= 0 by construction
    shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
    pos_sum = np.where(pos_mask, shifted, 0.0).sum(axis=1)
    neg_sum = np.where(pos_mask, 0.0, shifted).sum(axis=1)
    loss = float(np.sum(np.log1p(neg_sum / pos_sum)))

    # d loss / d score = softmax(all) - softmax(positives), scaled by 1/tau
    weight_all = shifted / (pos_sum + neg_sum)[:, None]
    weight_pos = np.where(pos_mask, shifted, 0.0) / pos_sum[:, None]
    score_grad = (weight_all - weight_pos) / tau

    grad_z_hat = score_grad @ c_hat
    grad_c_hat = score_grad.T @ z_hat
    grad_z = _through_normalization(grad_z_hat, z_hat, z_norms)
    grad_c = _through_normalization(grad_c_hat, c_hat, c_norms)
    return loss, grad_z, grad_c


def _through_normalization(grad_hat, unit_rows, norms):
    """Chain a gradient on unit rows back to the raw rows.

    Zero rows were mapped to zero, a constant, so their gradient is zero.
    """
    inner = np.sum(grad_hat * unit_rows, axis=1, keepdims=True)
    grad = (grad_hat - inner * unit_rows)
    positive = norms > 0
    grad[positive] /= norms[positive, None]
    grad[~positive] = 0.0
    return grad
